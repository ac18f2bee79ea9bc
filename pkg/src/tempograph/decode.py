"""Decoding scores into a temporal graph and projecting it onto events."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .corpus import Document
from .model import ScoreSet
from .preprocess import WindowInstance
from .schema import DatasetProfile, RelationLabel, profile as get_profile


@dataclass
class TemporalGraph:
    """Directed token-pair relations of one window, stored for i < j only."""

    n: int
    profile: DatasetProfile
    edges: dict[tuple[int, int], RelationLabel] = field(default_factory=dict)

    def label(self, i: int, j: int) -> RelationLabel:
        """Relation of token i to token j, derived by inversion when i > j."""
        if i < j:
            return self.edges.get((i, j), self.profile.labels[0])
        if i > j:
            return self.profile.inverse(self.edges.get((j, i), self.profile.labels[0]))
        return self.profile.labels[0]

    def to_matrix(self) -> np.ndarray:
        m = np.zeros((self.n, self.n), dtype=np.int64)
        for (i, j), lab in self.edges.items():
            m[i, j] = lab.id
            m[j, i] = self.profile.inverse_ids[lab.id]
        return m

    def to_list(self) -> list[list]:
        return [[i, j, lab.name] for (i, j), lab in sorted(self.edges.items())]


def arc_pred(s_arc: np.ndarray, i: int, j: int) -> int:
    """1 when the arc logit from i to j is strictly positive."""
    if i == j:
        raise ValueError("arc_pred is undefined on the diagonal")
    return int(s_arc[i, j] > 0)


def label_pred(s_rel: np.ndarray, i: int, j: int, label_offset: int = 1) -> int:
    """Arg-max label id for pair (i, j); ties resolve to the lowest id."""
    return int(np.argmax(s_rel[i, j])) + label_offset


def decode(scores: ScoreSet, profile: DatasetProfile | str) -> TemporalGraph:
    """Vectorized pair decoding.

    An unordered pair {i, j}, i < j, gets an edge when either arc logit is
    positive, labelled with the arg-max of the (i, j) label scores.  Without
    an ARC module the arg-max alone decides and NONE means no edge.
    """
    prof = get_profile(profile)
    n = scores.s_rel.shape[0]
    labels = np.argmax(scores.s_rel, axis=-1) + scores.label_offset
    if scores.s_arc is not None:
        pos = scores.s_arc > 0
        exists = pos | pos.T
    else:
        exists = np.ones((n, n), dtype=bool)
    keep = np.triu(exists & (labels != 0), 1)
    ii, jj = np.nonzero(keep)
    vals = labels[ii, jj]
    return TemporalGraph(
        n, prof, {(int(i), int(j)): prof.labels[v] for i, j, v in zip(ii, jj, vals)}
    )


def event_level(
    graph: TemporalGraph, events: Mapping[str, tuple[int, int]]
) -> dict[tuple[str, str], RelationLabel]:
    """Labels between event pairs, read off the events' first tokens.

    Keys are ordered so the first event starts earlier in the window.  Pairs
    with no edge between the first tokens map to NONE.
    """
    for eid, (start, end) in events.items():
        if not (0 <= start < end <= graph.n):
            raise ValueError(f"event {eid!r} span ({start},{end}) outside window of {graph.n}")
    ordered = sorted(events.items(), key=lambda kv: (kv[1][0], kv[0]))
    out = {}
    for a in range(len(ordered)):
        for b in range(a + 1, len(ordered)):
            (e1, s1), (e2, s2) = ordered[a], ordered[b]
            if s1[0] == s2[0]:
                continue
            out[(e1, e2)] = graph.label(s1[0], s2[0])
    return out


def document_event_predictions(
    windows: Sequence[WindowInstance], graphs: Sequence[TemporalGraph]
) -> dict[tuple[str, str], RelationLabel]:
    """Merge per-window event predictions; an event pair takes the first
    window (in window order) that contains both events."""
    out: dict[tuple[str, str], RelationLabel] = {}
    seen: set[frozenset] = set()
    for w, g in sorted(zip(windows, graphs), key=lambda wg: wg[0].index):
        for (e1, e2), lab in event_level(g, w.event_spans).items():
            key = frozenset((e1, e2))
            if key in seen:
                continue
            seen.add(key)
            out[(e1, e2)] = lab
    return out


def gold_event_pairs(doc: Document, profile: DatasetProfile | str) -> dict[tuple[str, str], RelationLabel]:
    prof = get_profile(profile)
    return {(t.source, t.target): prof.label(t.label) for t in doc.tlinks}
