"""Precision, recall and F1 over per-timestep key comparisons.

Counts are a merge-friendly monoid so parallel episode workers can sum their
partial tallies. The default aggregation is micro (one global TP/FP/FN pool
per episode); a per-timestep macro average is available and every result row
records which one produced it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MICRO = "micro"
MACRO = "macro"


@dataclass(frozen=True)
class EpisodeCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        if self.tp < 0 or self.fp < 0 or self.fn < 0:
            raise ValueError("counts must be non-negative")

    def merge(self, other: "EpisodeCounts") -> "EpisodeCounts":
        return EpisodeCounts(self.tp + other.tp, self.fp + other.fp,
                             self.fn + other.fn)

    __add__ = merge


@dataclass(frozen=True)
class Scores:
    precision: float
    recall: float
    f1: float


def step_counts(pressed: np.ndarray, targets: np.ndarray) -> EpisodeCounts:
    pressed = np.asarray(pressed, dtype=bool)
    targets = np.asarray(targets, dtype=bool)
    return EpisodeCounts(
        tp=int(np.count_nonzero(pressed & targets)),
        fp=int(np.count_nonzero(pressed & ~targets)),
        fn=int(np.count_nonzero(~pressed & targets)),
    )


def accumulate(counts: EpisodeCounts, pressed: np.ndarray,
               targets: np.ndarray) -> EpisodeCounts:
    return counts + step_counts(pressed, targets)


def finalize(counts: EpisodeCounts) -> Scores:
    """Zero denominators score 1 (nothing was there to get wrong); F1 is 0
    whenever either component is 0, else the harmonic mean."""
    precision = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 1.0
    recall = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 1.0
    if precision == 0.0 or recall == 0.0:
        f1 = 0.0
    else:
        f1 = 2.0 / (1.0 / recall + 1.0 / precision)
    return Scores(precision, recall, f1)


def macro_scores(per_step: list) -> Scores:
    """Average the per-timestep scores instead of pooling counts."""
    if not per_step:
        return Scores(1.0, 1.0, 1.0)
    finals = [finalize(c) for c in per_step]
    return Scores(
        precision=sum(s.precision for s in finals) / len(finals),
        recall=sum(s.recall for s in finals) / len(finals),
        f1=sum(s.f1 for s in finals) / len(finals),
    )


def score_episode(per_step: list, averaging: str = MICRO) -> Scores:
    if averaging == MICRO:
        total = EpisodeCounts()
        for c in per_step:
            total = total + c
        return finalize(total)
    if averaging == MACRO:
        return macro_scores(per_step)
    raise ValueError(f"unknown averaging {averaging!r}")
