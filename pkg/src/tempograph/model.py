"""The scoring network: embeddings, BiLSTM encoder, MLP projections, biaffine scorers."""

from __future__ import annotations

import io
import json
import os
from collections import Counter
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .schema import DatasetProfile, SchemaError, profile as get_profile
from .tensor import Tensor

PAD, UNK = "<pad>", "<unk>"
CHECKPOINT_MAGIC = b"TEMPOGRAPH-CHECKPOINT\n"
CHECKPOINT_VERSION = 1

_DTYPES = {"float32": np.float32, "float64": np.float64}


class CheckpointError(ValueError):
    pass


@dataclass
class ModelConfig:
    embed_dim: int = 100
    lstm_hidden: int = 400
    lstm_layers: int = 2
    mlp_dim: int = 300
    dropout: float = 0.33
    use_biaffine: bool = True
    use_arc_module: bool = True
    embedding_mode: str = "lookup"  # or "external"
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("embed_dim", "lstm_hidden", "lstm_layers", "mlp_dim"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.embedding_mode not in ("lookup", "external"):
            raise ValueError(f"unknown embedding_mode {self.embedding_mode!r}")
        if self.dtype not in _DTYPES:
            raise ValueError(f"dtype must be one of {sorted(_DTYPES)}")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ScoreSet:
    """Scores for one window.

    ``s_rel[..., k]`` scores label id ``k + label_offset``; the offset is 1
    when the ARC module handles NONE and 0 when NONE is an ordinary class.
    """

    s_arc: np.ndarray | None
    s_rel: np.ndarray
    label_offset: int = 1

    @property
    def n(self) -> int:
        return self.s_rel.shape[0]


class Vocabulary:
    def __init__(self, tokens: Iterable[str] = ()):
        self.itos = [PAD, UNK]
        self.stoi = {PAD: 0, UNK: 1}
        for tok in tokens:
            self.add(tok)

    def add(self, tok: str) -> int:
        if tok not in self.stoi:
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)
        return self.stoi[tok]

    def __len__(self) -> int:
        return len(self.itos)

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self.stoi.get(t, 1) for t in tokens], dtype=np.int64)

    @classmethod
    def build(cls, sentences: Iterable[Sequence[str]], min_count: int = 1) -> "Vocabulary":
        counts = Counter(t for s in sentences for t in s)
        return cls(sorted(t for t, c in counts.items() if c >= min_count))


def load_vectors(path: str | os.PathLike) -> tuple[Vocabulary, np.ndarray]:
    """Read a whitespace-separated ``token v1 v2 ...`` vector file.

    An optional first line ``<count> <dim>`` (word2vec text format) is skipped.
    Padding and unknown tokens get zero vectors.
    """
    words, rows = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            parts = line.rstrip("\n").split(" ")
            if lineno == 0 and len(parts) == 2 and all(p.isdigit() for p in parts):
                continue
            if len(parts) < 2:
                continue
            words.append(parts[0])
            rows.append([float(v) for v in parts[1:]])
    if not rows or len({len(r) for r in rows}) != 1:
        raise ValueError(f"{path}: empty vector file or inconsistent dimensions")
    vocab = Vocabulary(words)
    table = np.zeros((len(vocab), len(rows[0])))
    for w, r in zip(words, rows):
        table[vocab.stoi[w]] = r
    return vocab, table


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape, dtype) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape).astype(dtype)


class BiaffineScorer:
    """Embedding -> BiLSTM -> four MLPs -> ARC and REL biaffine scorers.

    All per-window methods also accept a leading batch axis.  Padding is on
    the right; ``lengths`` tells the encoder where each window ends.
    """

    def __init__(
        self,
        config: ModelConfig,
        profile: DatasetProfile | str,
        vocab: Vocabulary,
        seed: int = 0,
        vectors: np.ndarray | None = None,
    ):
        self.config = config
        self.profile = get_profile(profile)
        self.vocab = vocab
        self.dtype = _DTYPES[config.dtype]
        self.n_labels = self.profile.n_relations + (0 if config.use_arc_module else 1)
        self.label_offset = 1 if config.use_arc_module else 0
        self.params: dict[str, Tensor] = {}
        self._init_params(np.random.default_rng(seed), vectors)

    # -- parameters --------------------------------------------------------

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        c = self.config
        shapes = {"embed.table": (len(self.vocab), c.embed_dim)}
        d_in = c.embed_dim
        for layer in range(c.lstm_layers):
            for direction in ("fwd", "bwd"):
                p = f"lstm.{layer}.{direction}"
                shapes[f"{p}.W_ih"] = (d_in, 4 * c.lstm_hidden)
                shapes[f"{p}.W_hh"] = (c.lstm_hidden, 4 * c.lstm_hidden)
                shapes[f"{p}.b"] = (4 * c.lstm_hidden,)
            d_in = 2 * c.lstm_hidden
        for name in ("arc_dep", "arc_head", "rel_dep", "rel_head"):
            shapes[f"mlp.{name}.W"] = (d_in, c.mlp_dim)
            shapes[f"mlp.{name}.b"] = (c.mlp_dim,)
        for scorer, L in (("arc", 1), ("rel", self.n_labels)):
            if scorer == "arc" and not c.use_arc_module:
                continue
            if c.use_biaffine:
                shapes[f"{scorer}.U"] = (c.mlp_dim, L, c.mlp_dim)
            shapes[f"{scorer}.W"] = (L, 2 * c.mlp_dim)
            shapes[f"{scorer}.b"] = (L,)
        return shapes

    def _init_params(self, rng: np.random.Generator, vectors: np.ndarray | None) -> None:
        dt = self.dtype
        for name, shape in self.param_shapes().items():
            if name == "embed.table":
                if self.config.embedding_mode == "external":
                    if vectors is None or vectors.shape != shape:
                        raise ValueError(
                            f"external embedding mode needs a {shape} vector table"
                        )
                    self.params[name] = Tensor(vectors.astype(dt), requires_grad=False, name=name)
                    continue
                val = rng.normal(0.0, 1.0 / np.sqrt(shape[1]), size=shape).astype(dt)
                val[0] = 0
            elif name.endswith(".b"):
                val = np.zeros(shape, dtype=dt)
            elif name.endswith(".U"):
                val = rng.normal(0.0, 0.01, size=shape).astype(dt)
            elif name.startswith("lstm"):
                val = _glorot(rng, shape[0], shape[1] // 4, shape, dt)
            elif name.startswith("mlp"):
                val = _glorot(rng, shape[0], shape[1], shape, dt)
            else:  # scorer W, stored (L, 2d)
                val = _glorot(rng, shape[1], shape[0], shape, dt)
            self.params[name] = Tensor(val, requires_grad=True, name=name)

    def trainable(self) -> dict[str, Tensor]:
        return {k: p for k, p in self.params.items() if p.requires_grad}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    # -- forward pieces -----------------------------------------------------

    def embed(self, token_ids: np.ndarray, embeddings: np.ndarray | None = None) -> Tensor:
        if embeddings is not None:
            return Tensor(np.asarray(embeddings, dtype=self.dtype))
        return T.embed(self.params["embed.table"], token_ids)

    def encode(
        self,
        tokens,
        lengths: Sequence[int] | None = None,
        *,
        training: bool = False,
        rng: np.random.Generator | None = None,
        embeddings: np.ndarray | None = None,
    ) -> Tensor:
        """BiLSTM states, (n, 2h) for a token list or (B, T, 2h) for an id batch."""
        single = isinstance(tokens, (list, tuple))
        if single:
            if not tokens:
                raise ValueError("cannot encode an empty token list")
            ids = self.vocab.encode(tokens)[None, :]
            lengths = [len(tokens)]
            if embeddings is not None:
                embeddings = np.asarray(embeddings)[None]
        else:
            ids = np.asarray(tokens)
            if lengths is None:
                lengths = [ids.shape[1]] * ids.shape[0]
        c = self.config
        x = T.dropout(self.embed(ids, embeddings), c.dropout, training, rng)
        for layer in range(c.lstm_layers):
            p = f"lstm.{layer}"
            fwd = T.lstm(x, self.params[f"{p}.fwd.W_ih"], self.params[f"{p}.fwd.W_hh"],
                         self.params[f"{p}.fwd.b"])
            xr = T.flip_sequences(x, lengths)
            bwd = T.lstm(xr, self.params[f"{p}.bwd.W_ih"], self.params[f"{p}.bwd.W_hh"],
                         self.params[f"{p}.bwd.b"])
            x = T.concat([fwd, T.flip_sequences(bwd, lengths)], axis=-1)
            x = T.dropout(x, c.dropout, training, rng)
        if single:
            x = T.reshape(x, x.shape[1:])
        return x

    def project(self, h: Tensor, *, training: bool = False, rng=None) -> tuple[Tensor, ...]:
        """(arc_dep, arc_head, rel_dep, rel_head), each (..., n, mlp_dim)."""
        out = []
        for name in ("arc_dep", "arc_head", "rel_dep", "rel_head"):
            z = T.tanh(T.linear(h, self.params[f"mlp.{name}.W"], self.params[f"mlp.{name}.b"]))
            out.append(T.dropout(z, self.config.dropout, training, rng))
        return tuple(out)

    def _pair_scores(self, scorer: str, dep: Tensor, head: Tensor) -> Tensor:
        s = T.concat_linear(dep, head, self.params[f"{scorer}.W"], self.params[f"{scorer}.b"])
        if self.config.use_biaffine:
            s = T.add(T.bilinear(dep, self.params[f"{scorer}.U"], head), s)
        return s

    def score_arc(self, dep: Tensor, head: Tensor) -> Tensor:
        """Arc logits (..., n, n): entry (i, j) scores an arc from token i to j."""
        s = self._pair_scores("arc", dep, head)
        return T.reshape(s, s.shape[:-1])

    def score_rel(self, dep: Tensor, head: Tensor) -> Tensor:
        """Label logits (..., n, n, L)."""
        return self._pair_scores("rel", dep, head)

    def forward(
        self,
        token_ids: np.ndarray,
        lengths: Sequence[int],
        *,
        training: bool = False,
        rng: np.random.Generator | None = None,
        embeddings: np.ndarray | None = None,
    ) -> tuple[Tensor | None, Tensor]:
        """Batched scores: (s_arc (B, T, T) or None, s_rel (B, T, T, L))."""
        h = self.encode(token_ids, lengths, training=training, rng=rng, embeddings=embeddings)
        arc_dep, arc_head, rel_dep, rel_head = self.project(h, training=training, rng=rng)
        s_arc = self.score_arc(arc_dep, arc_head) if self.config.use_arc_module else None
        return s_arc, self.score_rel(rel_dep, rel_head)

    def batch_ids(self, token_lists: Sequence[Sequence[str]]) -> tuple[np.ndarray, list[int]]:
        lengths = [len(t) for t in token_lists]
        ids = np.zeros((len(token_lists), max(lengths)), dtype=np.int64)
        for b, toks in enumerate(token_lists):
            ids[b, : len(toks)] = self.vocab.encode(toks)
        return ids, lengths

    def score(self, tokens: Sequence[str], embeddings: np.ndarray | None = None) -> ScoreSet:
        """Eval-mode scores for one window."""
        emb = None if embeddings is None else np.asarray(embeddings)[None]
        return self.score_batch([tokens], None if emb is None else [emb[0]])[0]

    def score_batch(
        self, token_lists: Sequence[Sequence[str]], embeddings: Sequence[np.ndarray] | None = None
    ) -> list[ScoreSet]:
        """Eval-mode scores for several windows in one padded pass."""
        if any(len(t) == 0 for t in token_lists):
            raise ValueError("cannot score an empty window")
        ids, lengths = self.batch_ids(token_lists)
        emb = None
        if embeddings is not None:
            emb = np.zeros((len(lengths), ids.shape[1], self.config.embed_dim), dtype=self.dtype)
            for b, e in enumerate(embeddings):
                emb[b, : lengths[b]] = e
        with T.no_grad():
            s_arc, s_rel = self.forward(ids, lengths, embeddings=emb)
        out = []
        for b, n in enumerate(lengths):
            arc = None if s_arc is None else s_arc.data[b, :n, :n].copy()
            out.append(ScoreSet(arc, s_rel.data[b, :n, :n].copy(), self.label_offset))
        return out

    # -- checkpoints ------------------------------------------------------------

    def save(self, path: str | os.PathLike, metadata: dict | None = None) -> None:
        """Write a versioned, byte-deterministic checkpoint."""
        index, blobs, offset = [], [], 0
        for name, p in self.params.items():
            arr = np.ascontiguousarray(p.data, dtype=p.data.dtype.newbyteorder("<"))
            raw = arr.tobytes()
            index.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str,
                          "offset": offset, "nbytes": len(raw)})
            blobs.append(raw)
            offset += len(raw)
        header = {
            "version": CHECKPOINT_VERSION,
            "profile": self.profile.to_dict(),
            "config": asdict(self.config),
            "vocab": self.vocab.itos,
            "params": index,
            "metadata": metadata or {},
        }
        buf = io.BytesIO()
        buf.write(CHECKPOINT_MAGIC)
        buf.write(json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8") + b"\n")
        for raw in blobs:
            buf.write(raw)
        with open(path, "wb") as fh:
            fh.write(buf.getvalue())

    @classmethod
    def load(cls, path: str | os.PathLike, expect_profile: str | None = None) -> "BiaffineScorer":
        with open(path, "rb") as fh:
            if fh.readline() != CHECKPOINT_MAGIC:
                raise CheckpointError(f"{path}: not a checkpoint file")
            header = json.loads(fh.readline().decode("utf-8"))
            payload = fh.read()
        if header.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')}")
        try:
            prof = DatasetProfile.from_dict(header["profile"])
        except SchemaError as exc:
            raise CheckpointError(str(exc)) from None
        if expect_profile is not None and prof.name != get_profile(expect_profile).name:
            raise CheckpointError(
                f"checkpoint profile {prof.name!r} does not match requested {expect_profile!r}"
            )
        config = ModelConfig.from_dict(header["config"])
        vocab = Vocabulary()
        vocab.itos = list(header["vocab"])
        vocab.stoi = {t: i for i, t in enumerate(vocab.itos)}
        model = cls.__new__(cls)
        model.config, model.profile, model.vocab = config, prof, vocab
        model.dtype = _DTYPES[config.dtype]
        model.n_labels = prof.n_relations + (0 if config.use_arc_module else 1)
        model.label_offset = 1 if config.use_arc_module else 0
        expected = model.param_shapes()
        stored = {e["name"]: e for e in header["params"]}
        if set(stored) != set(expected):
            raise CheckpointError(
                f"parameter names differ from config: {sorted(set(stored) ^ set(expected))}"
            )
        model.params = {}
        for name, shape in expected.items():
            e = stored[name]
            if tuple(e["shape"]) != shape:
                raise CheckpointError(f"{name}: stored shape {e['shape']} != expected {shape}")
            arr = np.frombuffer(payload, dtype=np.dtype(e["dtype"]), count=int(np.prod(shape)),
                                offset=e["offset"]).reshape(shape)
            trainable = not (name == "embed.table" and config.embedding_mode == "external")
            model.params[name] = Tensor(arr.astype(model.dtype), requires_grad=trainable, name=name)
        model.metadata = header.get("metadata", {})
        return model
