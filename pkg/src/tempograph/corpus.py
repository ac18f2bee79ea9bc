"""Annotated documents, raw prediction input, corpus files and a synthetic corpus.

Corpus files are UTF-8 JSON lines.  The first line is an optional header
``{"format": "tempograph-corpus", "version": 1}``; every other line holds one
document::

    {"doc_id": "d0",
     "sentences": [["He", "left", "."], ["Later", "she", "arrived", "."]],
     "events": [{"id": "e1", "sentence": 0, "start": 1, "end": 2}, ...],
     "tlinks": [{"source": "e1", "target": "e2", "label": "BEFORE"}]}

``start``/``end`` are a half-open token interval inside the sentence.  Raw
input for prediction uses the same layout with ``events``/``tlinks`` omitted.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .schema import NONE, DatasetProfile, SchemaError, profile as get_profile

logger = logging.getLogger(__name__)

CORPUS_FORMAT = "tempograph-corpus"
CORPUS_VERSION = 1


class CorpusError(ValueError):
    """Malformed or invalid corpus data.  ``location`` names the file/line."""

    def __init__(self, message: str, location: str | None = None):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


@dataclass(frozen=True)
class Event:
    id: str
    sentence: int
    start: int
    end: int

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class TLink:
    source: str
    target: str
    label: str


@dataclass
class RawInput:
    doc_id: str
    sentences: list[list[str]]


@dataclass
class Document:
    doc_id: str
    sentences: list[list[str]]
    events: list[Event] = field(default_factory=list)
    tlinks: list[TLink] = field(default_factory=list)

    def event_map(self) -> dict[str, Event]:
        return {e.id: e for e in self.events}

    def to_raw(self) -> RawInput:
        return RawInput(self.doc_id, self.sentences)

    def to_record(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "sentences": self.sentences,
            "events": [
                {"id": e.id, "sentence": e.sentence, "start": e.start, "end": e.end}
                for e in self.events
            ],
            "tlinks": [
                {"source": t.source, "target": t.target, "label": t.label}
                for t in self.tlinks
            ],
        }


def validate(doc: Document, profile: DatasetProfile | str | None = None) -> list[str]:
    """Return human-readable invariant violations; empty when ``doc`` is valid."""
    prof = get_profile(profile) if profile is not None else None
    problems: list[str] = []
    if not doc.sentences:
        problems.append("document has no sentences")
    for si, sent in enumerate(doc.sentences):
        if not sent:
            problems.append(f"sentence {si} is empty")
        for ti, tok in enumerate(sent):
            if not isinstance(tok, str) or not tok:
                problems.append(f"sentence {si} token {ti} is not a non-empty string")

    seen_ids: set[str] = set()
    for ev in doc.events:
        if ev.id in seen_ids:
            problems.append(f"duplicate event id {ev.id!r}")
        seen_ids.add(ev.id)
        if not 0 <= ev.sentence < len(doc.sentences):
            problems.append(f"event {ev.id!r}: sentence index {ev.sentence} out of range")
            continue
        n = len(doc.sentences[ev.sentence])
        if ev.end <= ev.start:
            problems.append(f"event {ev.id!r}: empty span ({ev.start},{ev.end})")
        elif ev.start < 0 or ev.end > n:
            problems.append(
                f"event {ev.id!r}: span ({ev.start},{ev.end}) outside sentence of length {n}"
            )

    seen_pairs: set[tuple[str, str]] = set()
    for t in doc.tlinks:
        tag = f"tlink {t.source}->{t.target}"
        for end in (t.source, t.target):
            if end not in seen_ids:
                problems.append(f"{tag}: undefined event id {end!r}")
        if t.source == t.target:
            problems.append(f"{tag}: self-link")
        if t.label == NONE:
            problems.append(f"{tag}: label NONE is not allowed")
        elif prof is not None:
            try:
                prof.label(t.label)
            except SchemaError:
                problems.append(f"{tag}: label {t.label!r} not in profile {prof.name!r}")
        if (t.source, t.target) in seen_pairs:
            problems.append(f"{tag}: duplicate annotation for ordered pair")
        seen_pairs.add((t.source, t.target))
    return problems


def _require(rec: Mapping, key: str, kind, where: str):
    if key not in rec:
        raise CorpusError(f"missing field {key!r}", where)
    val = rec[key]
    if not isinstance(val, kind) or isinstance(val, bool):
        raise CorpusError(f"field {key!r} has wrong type {type(val).__name__}", where)
    return val


def _parse_sentences(rec: Mapping, where: str) -> list[list[str]]:
    sents = _require(rec, "sentences", list, where)
    for s in sents:
        if not isinstance(s, list):
            raise CorpusError("'sentences' must be a list of token lists", where)
    return sents


def parse_document(rec: Mapping, where: str = "<record>") -> Document:
    if not isinstance(rec, dict):
        raise CorpusError("record is not an object", where)
    doc_id = _require(rec, "doc_id", str, where)
    sents = _parse_sentences(rec, where)
    events = []
    for e in rec.get("events", []):
        if not isinstance(e, dict):
            raise CorpusError("event entry is not an object", where)
        events.append(
            Event(
                _require(e, "id", str, where),
                _require(e, "sentence", int, where),
                _require(e, "start", int, where),
                _require(e, "end", int, where),
            )
        )
    tlinks = []
    for t in rec.get("tlinks", []):
        if not isinstance(t, dict):
            raise CorpusError("tlink entry is not an object", where)
        tlinks.append(
            TLink(
                _require(t, "source", str, where),
                _require(t, "target", str, where),
                _require(t, "label", str, where),
            )
        )
    return Document(doc_id, sents, events, tlinks)


def _iter_records(path: str | os.PathLike):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            where = f"{os.fspath(path)}:{lineno}"
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"malformed JSON ({exc.msg})", where) from None
            if isinstance(rec, dict) and "format" in rec and "doc_id" not in rec:
                if rec.get("format") != CORPUS_FORMAT or rec.get("version") != CORPUS_VERSION:
                    raise CorpusError(f"unsupported corpus header {rec}", where)
                continue
            yield where, rec


def load_corpus(
    path: str | os.PathLike, profile: DatasetProfile | str | None = None
) -> list[Document]:
    """Read and validate an annotated corpus file.

    Raises :class:`CorpusError` naming the offending line on the first invalid
    record.
    """
    docs = []
    seen: set[str] = set()
    for where, rec in _iter_records(path):
        doc = parse_document(rec, where)
        problems = validate(doc, profile)
        if problems:
            raise CorpusError(f"document {doc.doc_id!r}: " + "; ".join(problems), where)
        if doc.doc_id in seen:
            raise CorpusError(f"duplicate doc_id {doc.doc_id!r}", where)
        seen.add(doc.doc_id)
        docs.append(doc)
    return docs


def load_raw(path: str | os.PathLike) -> list[RawInput]:
    """Read prediction input.  Annotation fields, if present, are ignored."""
    out = []
    for where, rec in _iter_records(path):
        if not isinstance(rec, dict):
            raise CorpusError("record is not an object", where)
        doc_id = _require(rec, "doc_id", str, where)
        sents = _parse_sentences(rec, where)
        if not sents or any(not s for s in sents) or any(
            not isinstance(t, str) or not t for s in sents for t in s
        ):
            raise CorpusError(f"document {doc_id!r}: empty sentence or token", where)
        out.append(RawInput(doc_id, sents))
    return out


def load_any(
    path: str | os.PathLike, profile: DatasetProfile | str | None = None
) -> list[Document] | list[RawInput]:
    """Annotated documents when every record carries ``events``, raw input otherwise."""
    records = list(_iter_records(path))
    if records and all(isinstance(r, dict) and "events" in r for _, r in records):
        return load_corpus(path, profile)
    return load_raw(path)


def dumps_document(doc: Document) -> str:
    return json.dumps(doc.to_record(), ensure_ascii=False, separators=(",", ":"))


def store_corpus(docs: Iterable[Document], path: str | os.PathLike) -> None:
    header = json.dumps({"format": CORPUS_FORMAT, "version": CORPUS_VERSION})
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for doc in docs:
            fh.write(dumps_document(doc) + "\n")


# -- synthetic corpus -------------------------------------------------------

# Relation counts of the reference corpora; the default mixture mimics them.
DEFAULT_MIXTURES = {
    "tbdense": {
        "BEFORE": 384, "AFTER": 274, "INCLUDES": 56,
        "IS_INCLUDED": 53, "SIMULTANEOUS": 22, "VAGUE": 638,
    },
    "matres": {"BEFORE": 417, "AFTER": 266, "SIMULTANEOUS": 31, "VAGUE": 113},
}

# A marker opening the later sentence fixes how the earlier event relates to
# the later one.
MARKERS = {
    "BEFORE": "later",
    "AFTER": "earlier",
    "INCLUDES": "during",
    "IS_INCLUDED": "throughout",
    "SIMULTANEOUS": "meanwhile",
    "VAGUE": "perhaps",
}

EVENT_WORDS = (
    "arrived", "signed", "announced", "collapsed", "visited", "rejected",
    "approved", "attacked", "resigned", "launched", "won", "met", "fled",
    "voted", "warned", "bought", "sold", "closed", "opened", "released",
    "invaded", "denied", "hired", "fired", "built",
)
PARTICLES = ("up", "out", "down", "off")
FILLER_WORDS = (
    "the", "a", "minister", "company", "city", "report", "officials", "of",
    "in", "on", "with", "government", "market", "police", "crowd", "team",
    "new", "old", "local", "two", "several", "its", "their", "by", "for",
    "talks", "deal", "plant", "border", "court",
)


def _allocate(mixture: Mapping[str, float], total: int) -> dict[str, int]:
    """Largest-remainder apportionment of ``total`` items over the mixture."""
    names = list(mixture)
    w = np.array([float(mixture[n]) for n in names])
    if (w < 0).any() or w.sum() <= 0:
        raise ValueError("mixture weights must be non-negative with positive sum")
    quota = w / w.sum() * total
    counts = np.floor(quota).astype(int)
    remainder = total - counts.sum()
    order = sorted(range(len(names)), key=lambda k: (-(quota[k] - counts[k]), k))
    for k in order[:remainder]:
        counts[k] += 1
    return dict(zip(names, counts.tolist()))


def generate_synthetic(
    seed: int,
    n_docs: int,
    profile: DatasetProfile | str = "tbdense",
    mixture: Mapping[str, float] | None = None,
    *,
    min_sentences: int = 3,
    max_sentences: int = 6,
    empty_sentence_rate: float = 0.15,
    multi_token_rate: float | None = None,
    flip_rate: float = 0.0,
) -> list[Document]:
    """Generate a corpus whose relations are determined by surface markers.

    Each sentence carries at most one event.  Two consecutive event-bearing
    sentences are linked by exactly one TLINK whose label is announced by a
    marker word opening the later sentence.  Labels are apportioned exactly
    to ``mixture`` over the whole corpus.  ``flip_rate`` stores that fraction
    of links in the reverse direction with the inverse label.
    """
    if n_docs < 1:
        raise ValueError("n_docs must be >= 1")
    prof = get_profile(profile)
    if mixture is None:
        base = DEFAULT_MIXTURES.get(prof.name)
        mixture = base if base is not None else {n: 1.0 for n in prof.names[1:]}
    for name in mixture:
        if prof.label(name).id == 0:
            raise ValueError("mixture cannot contain NONE")
    if multi_token_rate is None:
        multi_token_rate = 0.3 if "INCLUDES" in prof.names else 0.0
    rng = np.random.default_rng(seed)

    # Plan the structure first so labels can be apportioned corpus-wide.
    plans = []
    n_links = 0
    for _ in range(n_docs):
        n_sent = int(rng.integers(min_sentences, max_sentences + 1))
        has_event = rng.random(n_sent) >= empty_sentence_rate
        links = [k for k in range(n_sent - 1) if has_event[k] and has_event[k + 1]]
        plans.append((n_sent, has_event, links))
        n_links += len(links)
    counts = _allocate(mixture, n_links)
    labels = [name for name, c in counts.items() for _ in range(c)]
    labels = [labels[k] for k in rng.permutation(len(labels))]

    docs = []
    it = iter(labels)
    for d, (n_sent, has_event, links) in enumerate(plans):
        link_label = {k + 1: next(it) for k in links}
        sentences, events, ev_of_sent = [], [], {}
        for s in range(n_sent):
            toks = []
            if s in link_label:
                toks.append(MARKERS[link_label[s]])
            toks += list(rng.choice(FILLER_WORDS, size=int(rng.integers(1, 4))))
            if has_event[s]:
                start = len(toks)
                toks.append(str(rng.choice(EVENT_WORDS)))
                if rng.random() < multi_token_rate:
                    toks.append(str(rng.choice(PARTICLES)))
                eid = f"e{len(events) + 1}"
                events.append(Event(eid, s, start, len(toks)))
                ev_of_sent[s] = eid
            toks += list(rng.choice(FILLER_WORDS, size=int(rng.integers(1, 4))))
            toks.append(".")
            sentences.append([str(t) for t in toks])
        tlinks = []
        for s, lab in link_label.items():
            src, dst = ev_of_sent[s - 1], ev_of_sent[s]
            if rng.random() < flip_rate:
                tlinks.append(TLink(dst, src, prof.inverse(lab).name))
            else:
                tlinks.append(TLink(src, dst, lab))
        docs.append(Document(f"syn{seed}-{d:05d}", sentences, events, tlinks))
    return docs


def label_histogram(docs: Sequence[Document]) -> dict[str, int]:
    hist: dict[str, int] = {}
    for doc in docs:
        for t in doc.tlinks:
            hist[t.label] = hist.get(t.label, 0) + 1
    return dict(sorted(hist.items()))
