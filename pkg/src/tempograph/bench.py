"""Inference throughput harness.

Each repetition times three stages over the whole corpus: window
construction, the batched forward pass and decoding.  Scoring against gold
and any file or terminal output happen outside the timed region.
"""

from __future__ import annotations

import os
import platform
import statistics
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import RawInput
from .inference import decode_all, score_windows
from .model import BiaffineScorer
from .preprocess import DEFAULT_MAX_LEN, PreprocessStats, raw_windows

BENCH_FORMAT = "tempograph-bench"
BENCH_VERSION = 1
STAGES = ("preprocess", "forward", "decode")


@dataclass
class BenchReport:
    sentences: int
    windows: int
    skipped_windows: int
    repetitions: int
    samples: list[float] = field(default_factory=list)  # sentences per second
    stage_seconds: dict[str, list[float]] = field(default_factory=dict)
    hardware: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return statistics.fmean(self.samples)

    @property
    def std(self) -> float:
        return statistics.stdev(self.samples) if len(self.samples) > 1 else 0.0

    def stage_mean(self, stage: str) -> float:
        return statistics.fmean(self.stage_seconds[stage])

    def to_dict(self) -> dict:
        return {
            "format": BENCH_FORMAT,
            "version": BENCH_VERSION,
            "sentences": self.sentences,
            "windows": self.windows,
            "skipped_windows": self.skipped_windows,
            "repetitions": self.repetitions,
            "sentences_per_second": {"samples": self.samples, "mean": self.mean, "std": self.std},
            "stage_seconds": {
                s: {"samples": v, "mean": statistics.fmean(v)} for s, v in self.stage_seconds.items()
            },
            "hardware": self.hardware,
            "model": self.model,
        }

    def summary(self) -> str:
        lines = [
            f"sentences/second: {self.mean:.1f} +- {self.std:.1f} "
            f"({self.repetitions} runs, {self.sentences} sentences, {self.windows} windows)"
        ]
        for s in STAGES:
            lines.append(f"  {s:<11}{1000 * self.stage_mean(s):10.2f} ms")
        hw = self.hardware
        lines.append(f"  cpu: {hw.get('cpu')} ({hw.get('logical_cores')} logical cores)")
        return "\n".join(lines)


def hardware_fingerprint() -> dict:
    cpu = platform.processor() or ""
    try:
        with open("/proc/cpuinfo", encoding="utf-8") as fh:
            for line in fh:
                if line.startswith("model name"):
                    cpu = line.split(":", 1)[1].strip()
                    break
    except OSError:
        pass
    return {
        "cpu": cpu or platform.machine(),
        "logical_cores": os.cpu_count(),
        "machine": platform.machine(),
        "system": platform.system(),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }


def truncate_sentences(docs: Sequence[RawInput], limit: int) -> list[RawInput]:
    """The shortest document prefix holding exactly ``limit`` sentences."""
    out, left = [], limit
    for d in docs:
        if left <= 0:
            break
        out.append(RawInput(d.doc_id, [list(s) for s in d.sentences[:left]]))
        left -= len(out[-1].sentences)
    if left > 0:
        raise ValueError(f"corpus has fewer than {limit} sentences")
    return out


def _one_pass(model, docs, max_len, batch_size, n_jobs):
    stats = PreprocessStats()
    t0 = time.perf_counter()
    wins = [w for d in docs for w in raw_windows(d, max_len=max_len, stats=stats)]
    t1 = time.perf_counter()
    scores = score_windows(model, wins, batch_size=batch_size, n_jobs=n_jobs)
    t2 = time.perf_counter()
    graphs = decode_all(scores, model.profile)
    t3 = time.perf_counter()
    return (t1 - t0, t2 - t1, t3 - t2), wins, graphs, stats


def run_bench(
    model: BiaffineScorer,
    docs: Sequence[RawInput],
    *,
    repetitions: int = 10,
    warmup: int = 1,
    max_len: int = DEFAULT_MAX_LEN,
    batch_size: int = 32,
    n_jobs: int = 1,
) -> BenchReport:
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    docs = [d.to_raw() if hasattr(d, "to_raw") else d for d in docs]
    n_sent = sum(len(d.sentences) for d in docs)
    for _ in range(warmup):
        _one_pass(model, docs, max_len, batch_size, n_jobs)
    report = BenchReport(n_sent, 0, 0, repetitions, stage_seconds={s: [] for s in STAGES})
    for _ in range(repetitions):
        times, wins, _, stats = _one_pass(model, docs, max_len, batch_size, n_jobs)
        for s, t in zip(STAGES, times):
            report.stage_seconds[s].append(t)
        report.samples.append(n_sent / sum(times))
        report.windows, report.skipped_windows = len(wins), stats.skipped_windows
    c = model.config
    report.hardware = hardware_fingerprint()
    report.model = {"profile": model.profile.name, "lstm_hidden": c.lstm_hidden,
                    "mlp_dim": c.mlp_dim, "embed_dim": c.embed_dim, "dtype": c.dtype,
                    "batch_size": batch_size, "n_jobs": n_jobs}
    return report
