"""Constraint violations (category fairness, seller coverage, new-item exposure)
and the decaying epsilon relaxation applied to their total."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .domain import Catalog, ConstraintReport, ConstraintThresholds, Solution

# guards ceil() against float noise such as 0.7 * 10 == 7.000000000000001
_CEIL_SLACK = 1e-9


def gini(counts: Sequence[int]) -> float:
    """Gini coefficient of a count vector of length n that sums to n.

    Uses the sorted-rank form sum((2i - n - 1) * c_(i)) / (n * sum(c)),
    which equals the mean absolute pairwise difference over twice the mean.
    """
    c = np.sort(np.asarray(counts, dtype=float))
    n = c.size
    if n == 0:
        raise ValueError("empty count vector")
    if np.any(c < 0):
        raise ValueError("counts must be non-negative")
    total = c.sum()
    if total != n:
        raise ValueError(f"counts sum to {total:g}, expected {n}")
    ranks = np.arange(1, n + 1)
    return float(np.dot(2 * ranks - n - 1, c) / (n * total))


def padded_counts(counts: Iterable[int], k: int) -> np.ndarray:
    """Per-category counts zero-padded to ``k`` slots."""
    c = np.fromiter(counts, dtype=float)
    if c.size > k:
        raise ValueError(f"{c.size} categories cannot occur in a list of {k} items")
    return np.concatenate([c, np.zeros(k - c.size)])


def required_count(theta: float, k: int) -> int:
    return math.ceil(theta * k - _CEIL_SLACK)


def coverage_shortfall(count: int, theta: float, k: int) -> float:
    return (required_count(theta, k) - count) / k


def fairness_violation(items: Sequence[str], catalog: Catalog, thresholds: ConstraintThresholds) -> float:
    k = len(items)
    counts = Counter(catalog[i].primary_category for i in items)
    return gini(padded_counts(counts.values(), k)) - thresholds.theta_fair


def seller_violation(items: Sequence[str], catalog: Catalog, thresholds: ConstraintThresholds) -> float:
    sellers = {catalog[i].seller_id for i in items}
    return coverage_shortfall(len(sellers), thresholds.theta_seller, len(items))


def is_recent(listed_at: float, thresholds: ConstraintThresholds) -> bool:
    if thresholds.now is None:
        raise ValueError("thresholds.now must be set")
    return thresholds.now - listed_at <= thresholds.recency_window


def new_item_violation(items: Sequence[str], catalog: Catalog, thresholds: ConstraintThresholds) -> float:
    recent = sum(is_recent(catalog[i].listed_at, thresholds) for i in items)
    return coverage_shortfall(recent, thresholds.theta_new, len(items))


def constraint_report(items: Sequence[str], catalog: Catalog, thresholds: ConstraintThresholds) -> ConstraintReport:
    return ConstraintReport(
        g_fair=fairness_violation(items, catalog, thresholds),
        g_seller=seller_violation(items, catalog, thresholds),
        g_new=new_item_violation(items, catalog, thresholds),
    )


def total_violation(report: ConstraintReport) -> float:
    return report.total_violation


@dataclass(frozen=True)
class EpsilonSchedule:
    epsilon0: float
    t_max: int
    gamma: float = 0.8

    def __post_init__(self):
        if self.epsilon0 < 0:
            raise ValueError("epsilon0 must be non-negative")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.t_max < 1:
            raise ValueError("t_max must be positive")


def epsilon_at(schedule: EpsilonSchedule, t: int) -> float:
    """epsilon0 * gamma**(t / t_max), forced to exactly 0 at t_max."""
    if not 0 <= t <= schedule.t_max:
        raise ValueError(f"generation {t} outside [0, {schedule.t_max}]")
    if t == schedule.t_max:
        return 0.0
    return schedule.epsilon0 * schedule.gamma ** (t / schedule.t_max)


def nearest_rank_percentile(values: Sequence[float], q: float) -> float:
    vals = sorted(values)
    if not vals:
        raise ValueError("percentile of an empty sample")
    rank = max(1, math.ceil(q / 100.0 * len(vals) - _CEIL_SLACK))
    return float(vals[rank - 1])


def calibrate_epsilon0(population: Sequence[Solution], percentile: float = 80.0) -> float:
    """Nearest-rank percentile of total violation across an evaluated population."""
    if not population:
        raise ValueError("cannot calibrate epsilon on an empty population")
    return nearest_rank_percentile([s.total_violation for s in population], percentile)
