"""Batched, optionally threaded inference over windows."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from .corpus import Document, RawInput
from .decode import TemporalGraph, decode, document_event_predictions
from .model import BiaffineScorer, ScoreSet
from .preprocess import DEFAULT_MAX_LEN, PreprocessStats, WindowInstance, raw_windows
from .schema import RelationLabel


@dataclass
class DocumentPrediction:
    doc_id: str
    windows: list[WindowInstance] = field(default_factory=list)
    graphs: list[TemporalGraph] = field(default_factory=list)

    def event_pairs(self) -> dict[tuple[str, str], RelationLabel]:
        return document_event_predictions(self.windows, self.graphs)


def _chunks(windows: Sequence[WindowInstance], batch_size: int) -> list[list[int]]:
    # Group similar lengths to keep padding small; order is restored by index.
    order = sorted(range(len(windows)), key=lambda k: (windows[k].n, k))
    return [order[s : s + batch_size] for s in range(0, len(order), batch_size)]


def score_windows(
    model: BiaffineScorer,
    windows: Sequence[WindowInstance],
    batch_size: int = 32,
    n_jobs: int = 1,
) -> list[ScoreSet]:
    """Eval-mode scores for every window, returned in input order."""
    chunks = _chunks(windows, max(1, batch_size))

    def run(idx):
        return model.score_batch([windows[k].tokens for k in idx])

    if n_jobs > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(c) for c in chunks]
    out: list[ScoreSet | None] = [None] * len(windows)
    for idx, scores in zip(chunks, results):
        for k, s in zip(idx, scores):
            out[k] = s
    return out


def decode_all(scores: Sequence[ScoreSet], profile) -> list[TemporalGraph]:
    return [decode(s, profile) for s in scores]


def predict_documents(
    model: BiaffineScorer,
    docs: Sequence[RawInput | Document],
    *,
    max_len: int = DEFAULT_MAX_LEN,
    batch_size: int = 32,
    n_jobs: int = 1,
    stats: PreprocessStats | None = None,
) -> list[DocumentPrediction]:
    """Token-level graphs for every window of every document.

    Windows of annotated documents keep their event spans so predictions can
    be projected to event pairs.
    """
    per_doc: list[list[WindowInstance]] = []
    for doc in docs:
        wins = raw_windows(doc, max_len=max_len, stats=stats)
        if isinstance(doc, Document):
            offsets = {}
            for w in wins:
                offsets.clear()
                for pos, (s, t) in enumerate(w.token_origin):
                    if t == 0:
                        offsets[s] = pos
                w.event_spans = {
                    e.id: (offsets[e.sentence] + e.start, offsets[e.sentence] + e.end)
                    for e in doc.events
                    if e.sentence in offsets
                }
        per_doc.append(wins)
    flat = [w for wins in per_doc for w in wins]
    graphs = decode_all(score_windows(model, flat, batch_size, n_jobs), model.profile)
    out, k = [], 0
    for doc, wins in zip(docs, per_doc):
        out.append(DocumentPrediction(doc.doc_id, wins, graphs[k : k + len(wins)]))
        k += len(wins)
    return out
