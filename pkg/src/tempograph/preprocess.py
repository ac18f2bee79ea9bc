"""Turn documents into two-sentence training windows with gold ARC/REL matrices."""

from __future__ import annotations

import json
import logging
import os
import zlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .corpus import Document, RawInput
from .schema import DatasetProfile, profile as get_profile

logger = logging.getLogger(__name__)

WINDOW_FORMAT = "tempograph-windows"
WINDOW_VERSION = 1
DEFAULT_MAX_LEN = 128
NEGATIVE_KEEP_RATE = 0.5


class PreprocessError(ValueError):
    pass


@dataclass
class PreprocessStats:
    windows: int = 0
    skipped_windows: int = 0
    dropped_tlinks: int = 0
    label_histogram: Counter = field(default_factory=Counter)

    def to_dict(self) -> dict:
        return {
            "windows": self.windows,
            "skipped_windows": self.skipped_windows,
            "dropped_tlinks": self.dropped_tlinks,
            "label_histogram": dict(sorted(self.label_histogram.items())),
        }


@dataclass
class WindowInstance:
    doc_id: str
    index: int
    first_sentence: int
    tokens: list[str]
    token_origin: list[tuple[int, int]]
    event_spans: dict[str, tuple[int, int]] = field(default_factory=dict)
    tuples: list[tuple[int, int, int]] = field(default_factory=list)
    arc_gold: np.ndarray | None = None
    rel_gold: np.ndarray | None = None
    loss_mask: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.tokens)

    @property
    def event_first_tokens(self) -> dict[str, int]:
        return {eid: span[0] for eid, span in self.event_spans.items()}

    @property
    def n_sentences(self) -> int:
        return len({s for s, _ in self.token_origin})


def window_seed(seed: int, doc_id: str, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, zlib.crc32(doc_id.encode("utf-8")), index])


def sentence_windows(n_sentences: int) -> list[tuple[int, ...]]:
    """Sentence indices covered by each sliding window."""
    if n_sentences <= 1:
        return [tuple(range(n_sentences))]
    return [(k, k + 1) for k in range(n_sentences - 1)]


def densify(e1_span: Iterable[int], e2_span: Iterable[int], r) -> list[tuple]:
    """All token pairs between two event spans, labelled ``r``."""
    a, b = list(e1_span), list(e2_span)
    if set(a) & set(b):
        raise PreprocessError(f"event spans overlap: {a} and {b}")
    return [(i, j, r) for i in a for j in b]


def build_gold(
    n: int, tuples: Iterable[tuple[int, int, int]], profile: DatasetProfile | str
) -> tuple[np.ndarray, np.ndarray]:
    """Gold arc and relation matrices for ``n`` tokens.

    Both directions of every pair are filled in ``rel``; the arc goes out of
    the token whose side of the relation is canonical, and in both directions
    for self-inverse labels.
    """
    prof = get_profile(profile)
    arc = np.zeros((n, n), dtype=bool)
    rel = np.zeros((n, n), dtype=np.int64)
    for i, j, r in tuples:
        lab = prof.label(r)
        if lab.id == 0:
            raise PreprocessError(f"tuple ({i}, {j}) carries NONE")
        if i == j or not (0 <= i < n and 0 <= j < n):
            raise PreprocessError(f"tuple ({i}, {j}) invalid for window of {n} tokens")
        inv = int(prof.inverse_ids[lab.id])
        for a, b, v in ((i, j, lab.id), (j, i, inv)):
            if rel[a, b] not in (0, v):
                raise PreprocessError(
                    f"conflicting labels for token pair ({a}, {b}): "
                    f"{prof.labels[rel[a, b]].name} vs {prof.labels[v].name}"
                )
            rel[a, b] = v
        if inv == lab.id:
            arc[i, j] = arc[j, i] = True
        elif lab.name in prof.canonical_set:
            arc[i, j] = True
        else:
            arc[j, i] = True
    return arc, rel


def sample_mask(arc_gold: np.ndarray, rng_seed) -> np.ndarray:
    """Keep every gold-arc pair and a random half of the remaining pairs."""
    n = arc_gold.shape[0]
    rng = np.random.default_rng(rng_seed)
    mask = rng.random((n, n)) < NEGATIVE_KEEP_RATE
    mask |= arc_gold | arc_gold.T
    np.fill_diagonal(mask, False)
    return mask


def _window_tokens(sentences: Sequence[Sequence[str]], sent_ids: Sequence[int]):
    tokens, origin, offset = [], [], {}
    for s in sent_ids:
        offset[s] = len(tokens)
        tokens.extend(sentences[s])
        origin.extend((s, t) for t in range(len(sentences[s])))
    return tokens, origin, offset


def raw_windows(
    doc: RawInput | Document, max_len: int = DEFAULT_MAX_LEN, stats: PreprocessStats | None = None
) -> list[WindowInstance]:
    """Token windows without gold annotations, as used at prediction time."""
    out = []
    for k, sent_ids in enumerate(sentence_windows(len(doc.sentences))):
        tokens, origin, _ = _window_tokens(doc.sentences, sent_ids)
        if len(tokens) > max_len:
            logger.warning("%s window %d: %d tokens > max %d, skipped",
                           doc.doc_id, k, len(tokens), max_len)
            if stats is not None:
                stats.skipped_windows += 1
            continue
        out.append(WindowInstance(doc.doc_id, k, sent_ids[0] if sent_ids else 0, tokens, origin))
        if stats is not None:
            stats.windows += 1
    return out


def windows(
    doc: Document,
    profile: DatasetProfile | str = "tbdense",
    *,
    max_len: int = DEFAULT_MAX_LEN,
    seed: int = 0,
    stats: PreprocessStats | None = None,
) -> list[WindowInstance]:
    prof = get_profile(profile)
    stats = stats if stats is not None else PreprocessStats()
    ev = doc.event_map()
    for t in doc.tlinks:
        if abs(ev[t.source].sentence - ev[t.target].sentence) > 1:
            stats.dropped_tlinks += 1
            logger.warning("%s: tlink %s->%s spans more than two sentences, dropped",
                           doc.doc_id, t.source, t.target)

    out = []
    for k, sent_ids in enumerate(sentence_windows(len(doc.sentences))):
        tokens, origin, offset = _window_tokens(doc.sentences, sent_ids)
        if len(tokens) > max_len:
            stats.skipped_windows += 1
            logger.warning("%s window %d: %d tokens > max %d, skipped",
                           doc.doc_id, k, len(tokens), max_len)
            continue
        spans = {
            e.id: (offset[e.sentence] + e.start, offset[e.sentence] + e.end)
            for e in doc.events
            if e.sentence in offset
        }
        tuples = []
        for t in doc.tlinks:
            if t.source in spans and t.target in spans:
                stats.label_histogram[t.label] += 1
                r = prof.id_of(t.label)
                tuples += densify(range(*spans[t.source]), range(*spans[t.target]), r)
        arc, rel = build_gold(len(tokens), tuples, prof)
        mask = sample_mask(arc, window_seed(seed, doc.doc_id, k))
        out.append(
            WindowInstance(doc.doc_id, k, sent_ids[0] if sent_ids else 0, tokens, origin,
                           spans, tuples, arc, rel, mask)
        )
        stats.windows += 1
    return out


def corpus_windows(
    docs: Iterable[Document],
    profile: DatasetProfile | str = "tbdense",
    *,
    max_len: int = DEFAULT_MAX_LEN,
    seed: int = 0,
) -> tuple[list[WindowInstance], PreprocessStats]:
    stats = PreprocessStats()
    out = []
    for doc in docs:
        out += windows(doc, profile, max_len=max_len, seed=seed, stats=stats)
    return out, stats


# -- window files ------------------------------------------------------------


def _encode_mask(mask: np.ndarray) -> str:
    return np.packbits(mask.ravel()).tobytes().hex()


def _decode_mask(hexstr: str, n: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(bytes.fromhex(hexstr), dtype=np.uint8))
    return bits[: n * n].reshape(n, n).astype(bool)


def write_windows(
    path: str | os.PathLike,
    wins: Sequence[WindowInstance],
    profile: DatasetProfile | str,
    meta: dict | None = None,
) -> None:
    prof = get_profile(profile)
    header = {"format": WINDOW_FORMAT, "version": WINDOW_VERSION, "profile": prof.to_dict()}
    if meta:
        header["meta"] = meta
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for w in wins:
            rec = {
                "doc_id": w.doc_id,
                "index": w.index,
                "first_sentence": w.first_sentence,
                "tokens": w.tokens,
                "origin": [list(o) for o in w.token_origin],
                "events": {k: list(v) for k, v in w.event_spans.items()},
                "tuples": [[i, j, prof.labels[r].name] for i, j, r in w.tuples],
                "mask": _encode_mask(w.loss_mask),
            }
            fh.write(json.dumps(rec, ensure_ascii=False, separators=(",", ":")) + "\n")


def read_windows(path: str | os.PathLike) -> tuple[list[WindowInstance], DatasetProfile, dict]:
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != WINDOW_FORMAT or header.get("version") != WINDOW_VERSION:
            raise PreprocessError(f"{path}: not a version {WINDOW_VERSION} window file")
        prof = DatasetProfile.from_dict(header["profile"])
        out = []
        for line in fh:
            rec = json.loads(line)
            n = len(rec["tokens"])
            tuples = [(i, j, prof.id_of(r)) for i, j, r in rec["tuples"]]
            arc, rel = build_gold(n, tuples, prof)
            out.append(
                WindowInstance(
                    rec["doc_id"], rec["index"], rec["first_sentence"], rec["tokens"],
                    [tuple(o) for o in rec["origin"]],
                    {k: tuple(v) for k, v in rec["events"].items()},
                    tuples, arc, rel, _decode_mask(rec["mask"], n),
                )
            )
    return out, prof, header.get("meta", {})
