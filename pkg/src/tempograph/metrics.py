"""Micro-averaged precision/recall/F1 over event-pair relations."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Hashable, Mapping

from .schema import DatasetProfile, LabelLike, profile as get_profile


def prf(correct: int, predicted: int, gold: int) -> tuple[float, float, float]:
    p = correct / predicted if predicted else 0.0
    r = correct / gold if gold else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


@dataclass
class LabelScore:
    precision: float
    recall: float
    f1: float
    support: int
    predicted: int
    correct: int


@dataclass
class EvalReport:
    profile: DatasetProfile
    per_label: dict[str, LabelScore] = field(default_factory=dict)
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    gold: int = 0
    predicted: int = 0
    correct: int = 0

    def to_table(self) -> str:
        lines = [f"{'label':<14}{'P':>8}{'R':>8}{'F1':>8}{'support':>9}"]
        for name, s in self.per_label.items():
            lines.append(
                f"{name:<14}{100 * s.precision:8.1f}{100 * s.recall:8.1f}"
                f"{100 * s.f1:8.1f}{s.support:9d}"
            )
        lines.append(
            f"{'micro':<14}{100 * self.precision:8.1f}{100 * self.recall:8.1f}"
            f"{100 * self.f1:8.1f}{self.gold:9d}"
        )
        return "\n".join(lines)

    def to_tsv(self) -> str:
        rows = ["label\tprecision\trecall\tf1\tsupport\tpredicted\tcorrect"]
        for name, s in self.per_label.items():
            rows.append(f"{name}\t{s.precision:.6f}\t{s.recall:.6f}\t{s.f1:.6f}\t"
                        f"{s.support}\t{s.predicted}\t{s.correct}")
        rows.append(f"micro\t{self.precision:.6f}\t{self.recall:.6f}\t{self.f1:.6f}\t"
                    f"{self.gold}\t{self.predicted}\t{self.correct}")
        return "\n".join(rows) + "\n"


def canonicalize(
    pairs: Mapping[tuple[Hashable, Hashable], LabelLike],
    profile: DatasetProfile | str,
    key: Callable[[Hashable], object] | None = None,
) -> dict[tuple, int]:
    """Orient every pair so ``key(first) <= key(second)``, inverting labels.

    NONE entries are dropped.  Contradicting annotations of one pair raise.
    """
    prof = get_profile(profile)
    key = key or (lambda e: e)
    out: dict[tuple, int] = {}
    for (a, b), lab in pairs.items():
        lid = prof.id_of(lab)
        if lid == 0:
            continue
        if key(b) < key(a):
            a, b, lid = b, a, int(prof.inverse_ids[lid])
        if out.get((a, b), lid) != lid:
            raise ValueError(f"contradicting labels for pair {(a, b)}")
        out[(a, b)] = lid
    return out


def evaluate(
    pred: Mapping[tuple, LabelLike],
    gold: Mapping[tuple, LabelLike],
    profile: DatasetProfile | str,
    key: Callable[[Hashable], object] | None = None,
) -> EvalReport:
    """Per-label and micro P/R/F1 with NONE excluded from every count.

    ``key`` orders event ids when orienting pairs; it only affects which of
    two inverse labels a pair is reported under, never the micro scores.
    """
    prof = get_profile(profile)
    p = canonicalize(pred, prof, key)
    g = canonicalize(gold, prof, key)
    report = EvalReport(prof)
    for lab in prof.labels[1:]:
        n_gold = sum(1 for v in g.values() if v == lab.id)
        n_pred = sum(1 for v in p.values() if v == lab.id)
        n_ok = sum(1 for k, v in p.items() if v == lab.id and g.get(k) == v)
        pr, rc, f = prf(n_ok, n_pred, n_gold)
        report.per_label[lab.name] = LabelScore(pr, rc, f, n_gold, n_pred, n_ok)
    report.gold = len(g)
    report.predicted = len(p)
    report.correct = sum(1 for k, v in p.items() if g.get(k) == v)
    report.precision, report.recall, report.f1 = prf(report.correct, report.predicted, report.gold)
    return report
