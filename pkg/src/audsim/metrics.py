"""Balanced accuracy of a detected user set, and exact trial aggregation.

Scoring uses global sets: the fused detection is compared with the global
activity over the whole population of Q*F users, with recall denominators K
and N - K. By convention the recall over active users is 1 when K = 0 and
the recall over inactive users is 1 when K = N.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np


@dataclass(frozen=True)
class ConfusionCounts:
    true_pos: int
    false_pos: int
    true_neg: int
    false_neg: int
    num_active: int
    num_users: int

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(*(a + b for a, b in zip(self.as_tuple(), other.as_tuple())))

    def as_tuple(self) -> tuple[int, ...]:
        return (self.true_pos, self.false_pos, self.true_neg, self.false_neg,
                self.num_active, self.num_users)


@dataclass(frozen=True)
class BalancedScore:
    balanced_accuracy: float

    @property
    def balanced_inaccuracy(self) -> float:
        return 1.0 - self.balanced_accuracy


def balanced_accuracy(tp, tn, num_active, num_users):
    """Vectorized balanced accuracy from counts, with the K = 0 / K = N conventions."""
    tp, tn = np.asarray(tp, dtype=float), np.asarray(tn, dtype=float)
    k = np.asarray(num_active, dtype=float)
    neg = np.asarray(num_users, dtype=float) - k
    with np.errstate(divide="ignore", invalid="ignore"):
        recall_active = np.where(k > 0, tp / np.where(k > 0, k, 1.0), 1.0)
        recall_idle = np.where(neg > 0, tn / np.where(neg > 0, neg, 1.0), 1.0)
    out = 0.5 * (recall_active + recall_idle)
    return float(out) if out.ndim == 0 else out


def confusion(detected, active: np.ndarray) -> ConfusionCounts:
    """Confusion counts of a set of detected global ids against a boolean activity vector."""
    active = np.asarray(active, dtype=bool)
    n = active.size
    det = np.zeros(n, dtype=bool)
    ids = np.asarray(list(detected) if not isinstance(detected, np.ndarray) else detected,
                     dtype=np.intp)
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise ValueError("detected id outside the population")
    det[ids] = True
    tp = int(np.count_nonzero(det & active))
    fp = int(np.count_nonzero(det & ~active))
    fn = int(np.count_nonzero(~det & active))
    tn = n - tp - fp - fn
    return ConfusionCounts(tp, fp, tn, fn, tp + fn, n)


def score(outcome, activity, population: int | None = None, *, semantics: str = "global",
          book=None) -> tuple[ConfusionCounts, BalancedScore]:
    """Score a detection outcome (or plain id collection) against the true activity.

    ``semantics="union"`` is the per-channel reading: an inactive user counts
    as a true negative when it is undetected on at least one of its channels.
    It needs ``book`` and an outcome carrying ``per_channel_detected``.
    """
    active = np.asarray(getattr(activity, "active", activity), dtype=bool)
    if population is not None and population != active.size:
        raise ValueError(f"population {population} != activity size {active.size}")
    detected = getattr(outcome, "fused_detected", outcome)
    counts = confusion(detected, active)
    if semantics == "global":
        tn = counts.true_neg
    elif semantics == "union":
        if book is None:
            raise ValueError("union semantics needs the pilot book")
        missed_somewhere = np.zeros(active.size, dtype=bool)
        for f, ids in enumerate(outcome.per_channel_detected):
            here = book.membership[f].copy()
            here[np.asarray(ids, dtype=np.intp)] = False
            missed_somewhere |= here
        tn = int(np.count_nonzero(missed_somewhere & ~active))
    else:
        raise ValueError(f"unknown semantics {semantics!r}")
    acc = balanced_accuracy(counts.true_pos, tn, counts.num_active, counts.num_users)
    return counts, BalancedScore(acc)


@dataclass
class Aggregate:
    """Per-trial balanced inaccuracies plus summed confusion counts.

    Keeping the values makes merges exact and the mean independent of
    summation order (``math.fsum`` is correctly rounded).
    """

    values: np.ndarray = field(default_factory=lambda: np.empty(0))
    counts: np.ndarray = field(default_factory=lambda: np.zeros(4, dtype=np.int64))

    @property
    def count(self) -> int:
        return int(self.values.size)

    @property
    def mean(self) -> float:
        if not self.count:
            raise ValueError("empty aggregate")
        return math.fsum(self.values) / self.count

    @property
    def stderr(self) -> float:
        n = self.count
        if n < 2:
            return 0.0
        mu = self.mean
        var = math.fsum((self.values - mu) ** 2) / (n - 1)
        return math.sqrt(var / n)

    def merge(self, other: "Aggregate") -> "Aggregate":
        return Aggregate(np.concatenate([self.values, other.values]),
                         self.counts + other.counts)

    def confusion_totals(self) -> dict[str, int]:
        return dict(zip(("true_pos", "false_pos", "true_neg", "false_neg"),
                        (int(c) for c in self.counts)))


def aggregate(scores: Iterable) -> tuple[float, float, int]:
    """Mean balanced inaccuracy, its standard error and the count.

    Accepts ``BalancedScore`` objects or plain inaccuracy values.
    """
    vals = np.array([getattr(s, "balanced_inaccuracy", s) for s in scores], dtype=float)
    if vals.size == 0:
        raise ValueError("cannot aggregate an empty stream")
    agg = Aggregate(vals)
    return agg.mean, agg.stderr, agg.count
