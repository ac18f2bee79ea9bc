"""scikit-learn style estimator wrapping preprocessing, training and prediction."""

from __future__ import annotations

import logging
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .corpus import CorpusError, Document, RawInput, validate
from .decode import gold_event_pairs
from .inference import DocumentPrediction, predict_documents
from .metrics import EvalReport, evaluate
from .model import BiaffineScorer, ModelConfig, Vocabulary, load_vectors
from .objective import OptimizerState, TrainResult, train
from .preprocess import corpus_windows
from .schema import profile as get_profile

logger = logging.getLogger(__name__)


def check_documents(X, profile=None, *, annotated: bool = True) -> list:
    """Validate a sequence of documents and return it as a list.

    With ``annotated=False`` plain :class:`RawInput` records are accepted too.
    """
    if isinstance(X, (Document, RawInput)):
        raise TypeError("expected a sequence of documents, got a single document")
    docs = list(X)
    if not docs:
        raise ValueError("empty document collection")
    for doc in docs:
        if isinstance(doc, Document):
            problems = validate(doc, profile)
            if problems:
                raise CorpusError(f"document {doc.doc_id!r}: " + "; ".join(problems))
        elif isinstance(doc, RawInput) and not annotated:
            if not doc.sentences or any(not s for s in doc.sentences):
                raise CorpusError(f"document {doc.doc_id!r}: empty sentence")
        else:
            raise TypeError(f"unsupported document type {type(doc).__name__}")
    return docs


def event_order(doc: Document) -> dict[str, tuple[int, int, str]]:
    return {e.id: (e.sentence, e.start, e.id) for e in doc.events}


class TemporalRelationExtractor(BaseEstimator):
    """Graph-based biaffine temporal relation extractor.

    ``fit`` takes annotated :class:`Document` objects; ``predict`` takes raw
    or annotated documents and returns one :class:`DocumentPrediction` (a
    token-level graph per window) per document.
    """

    def __init__(
        self,
        profile="tbdense",
        embed_dim=100,
        lstm_hidden=400,
        lstm_layers=2,
        mlp_dim=300,
        dropout=0.33,
        use_biaffine=True,
        use_arc_module=True,
        embedding_mode="lookup",
        vectors_path=None,
        lr=5e-5,
        mu=0.9,
        nu=0.9,
        epsilon=1e-12,
        clip_norm=5.0,
        decay=0.75,
        decay_interval=5000,
        epochs=40,
        batch_size=1,
        max_len=128,
        resample_masks=True,
        target_f1=None,
        seed=0,
        n_jobs=1,
        dtype="float32",
    ):
        self.profile = profile
        self.embed_dim = embed_dim
        self.lstm_hidden = lstm_hidden
        self.lstm_layers = lstm_layers
        self.mlp_dim = mlp_dim
        self.dropout = dropout
        self.use_biaffine = use_biaffine
        self.use_arc_module = use_arc_module
        self.embedding_mode = embedding_mode
        self.vectors_path = vectors_path
        self.lr = lr
        self.mu = mu
        self.nu = nu
        self.epsilon = epsilon
        self.clip_norm = clip_norm
        self.decay = decay
        self.decay_interval = decay_interval
        self.epochs = epochs
        self.batch_size = batch_size
        self.max_len = max_len
        self.resample_masks = resample_masks
        self.target_f1 = target_f1
        self.seed = seed
        self.n_jobs = n_jobs
        self.dtype = dtype

    def _model_config(self) -> ModelConfig:
        return ModelConfig(
            embed_dim=self.embed_dim,
            lstm_hidden=self.lstm_hidden,
            lstm_layers=self.lstm_layers,
            mlp_dim=self.mlp_dim,
            dropout=self.dropout,
            use_biaffine=self.use_biaffine,
            use_arc_module=self.use_arc_module,
            embedding_mode=self.embedding_mode,
            dtype=self.dtype,
        )

    def _optimizer(self) -> OptimizerState:
        return OptimizerState(
            lr=self.lr, mu=self.mu, nu=self.nu, epsilon=self.epsilon,
            clip_norm=self.clip_norm, decay=self.decay, decay_interval=self.decay_interval,
        )

    def fit(self, X: Sequence[Document], y=None, X_dev: Sequence[Document] | None = None):
        """Train on annotated documents.

        With ``X_dev`` the dev micro F1 is tracked each epoch and the
        best-scoring parameters are kept; ``target_f1`` stops early once the
        dev score reaches it.
        """
        prof = get_profile(self.profile)
        docs = check_documents(X, prof)
        windows, stats = corpus_windows(docs, prof, max_len=self.max_len, seed=self.seed)
        if stats.dropped_tlinks:
            logger.warning("%d tlinks span more than two sentences and were dropped",
                           stats.dropped_tlinks)
        config = self._model_config()
        vectors = None
        if config.embedding_mode == "external":
            if self.vectors_path is None:
                raise ValueError("embedding_mode='external' requires vectors_path")
            vocab, vectors = load_vectors(self.vectors_path)
            config.embed_dim = vectors.shape[1]
        else:
            vocab = Vocabulary.build(w.tokens for w in windows)
        self.model_ = BiaffineScorer(config, prof, vocab, seed=self.seed, vectors=vectors)
        self.preprocess_stats_ = stats
        dev_fn = None
        if X_dev is not None:
            dev_docs = check_documents(X_dev, prof)
            dev_fn = lambda model: self._evaluate_with(model, dev_docs).f1  # noqa: E731
        self.history_: TrainResult = train(
            self.model_,
            windows,
            epochs=self.epochs,
            seed=self.seed,
            batch_size=self.batch_size,
            optimizer=self._optimizer(),
            resample_masks=self.resample_masks,
            dev_fn=dev_fn,
            target_score=self.target_f1,
        )
        if self.history_.best_params is not None:
            self.final_params_ = {k: p.data for k, p in self.model_.params.items()}
            for k, p in self.model_.params.items():
                p.data = self.history_.best_params[k]
        return self

    @classmethod
    def from_model(cls, model: BiaffineScorer, **kwargs) -> "TemporalRelationExtractor":
        """Wrap an already trained (e.g. loaded) scorer."""
        c = model.config
        est = cls(
            profile=model.profile.name, embed_dim=c.embed_dim, lstm_hidden=c.lstm_hidden,
            lstm_layers=c.lstm_layers, mlp_dim=c.mlp_dim, dropout=c.dropout,
            use_biaffine=c.use_biaffine, use_arc_module=c.use_arc_module,
            embedding_mode=c.embedding_mode, dtype=c.dtype, **kwargs,
        )
        est.model_ = model
        return est

    def predict(self, X) -> list[DocumentPrediction]:
        check_is_fitted(self, "model_")
        docs = check_documents(X, annotated=False)
        return predict_documents(self.model_, docs, max_len=self.max_len, n_jobs=self.n_jobs)

    def predict_events(self, X: Sequence[Document]) -> list[dict]:
        """Event-pair labels per document, from the events' first tokens."""
        return [p.event_pairs() for p in self.predict(X)]

    def _evaluate_with(self, model: BiaffineScorer, docs: Sequence[Document]) -> EvalReport:
        preds = predict_documents(model, docs, max_len=self.max_len, n_jobs=self.n_jobs)
        return evaluate_documents(docs, preds, model.profile)

    def evaluate(self, X: Sequence[Document]) -> EvalReport:
        check_is_fitted(self, "model_")
        docs = check_documents(X, self.model_.profile)
        return self._evaluate_with(self.model_, docs)

    def score(self, X: Sequence[Document], y=None) -> float:
        """Event-level micro F1."""
        return self.evaluate(X).f1


def evaluate_documents(
    docs: Sequence[Document], preds: Sequence[DocumentPrediction], profile
) -> EvalReport:
    """Pool event pairs of all documents and score them."""
    by_id = {p.doc_id: p for p in preds}
    for doc in docs:
        if doc.doc_id not in by_id:
            raise ValueError(f"no prediction for document {doc.doc_id!r}")
    return evaluate_event_pairs(docs, {d.doc_id: by_id[d.doc_id].event_pairs() for d in docs},
                                profile)


def evaluate_event_pairs(docs: Sequence[Document], pairs_by_doc: dict, profile) -> EvalReport:
    """Score per-document event-pair predictions against the documents' tlinks.

    Pair keys are prefixed by doc id; events are ordered by position.
    """
    pred_all, gold_all, order = {}, {}, {}
    for doc in docs:
        if doc.doc_id not in pairs_by_doc:
            raise ValueError(f"no prediction for document {doc.doc_id!r}")
        for eid, pos in event_order(doc).items():
            order[(doc.doc_id, eid)] = pos
        for (a, b), lab in pairs_by_doc[doc.doc_id].items():
            if (doc.doc_id, a) not in order or (doc.doc_id, b) not in order:
                raise ValueError(f"document {doc.doc_id!r}: prediction names unknown event")
            pred_all[((doc.doc_id, a), (doc.doc_id, b))] = lab
        for (a, b), lab in gold_event_pairs(doc, profile).items():
            gold_all[((doc.doc_id, a), (doc.doc_id, b))] = lab
    return evaluate(pred_all, gold_all, profile, key=lambda e: (e[0],) + order[e])
