"""Evaluation metrics: hypervolume, NDCG@k, diversity and feasibility rate."""

from __future__ import annotations

import bisect
import logging
import math
from dataclasses import dataclass
from typing import Collection, Sequence

import numpy as np

from .domain import Solution

log = logging.getLogger(__name__)

ORIGIN = (0.0, 0.0, 0.0)


def _staircase_insert(xs: list, ys: list, x: float, y: float) -> float:
    """Add box [0,x]x[0,y] to a 2-D staircase; return the area it adds.

    ``xs`` ascends and ``ys`` descends, both kept non-dominated.
    """
    j = bisect.bisect_left(xs, x)
    if j < len(xs) and ys[j] >= y:
        return 0.0
    i0 = j
    while i0 > 0 and ys[i0 - 1] <= y:
        i0 -= 1
    added = 0.0
    prev_x = xs[i0 - 1] if i0 > 0 else 0.0
    for i in range(i0, j):
        added += (xs[i] - prev_x) * (y - ys[i])
        prev_x = xs[i]
    h = ys[j] if j < len(xs) else 0.0
    added += (x - prev_x) * (y - h)
    stop = j + 1 if j < len(xs) and xs[j] == x else j
    xs[i0:stop] = [x]
    ys[i0:stop] = [y]
    return added


def hypervolume3(points, reference=ORIGIN) -> float:
    """Exact volume dominated by ``points`` (maximisation) relative to ``reference``.

    Sweeps the third objective downwards while maintaining the 2-D area
    dominated in the first two.
    """
    pts = np.asarray([p.as_tuple() if hasattr(p, "as_tuple") else p for p in points], dtype=float)
    if pts.size == 0:
        return 0.0
    pts = pts.reshape(-1, 3) - np.asarray(reference, dtype=float)
    below = (pts < 0).any(axis=1)
    if below.any():
        log.warning("skipping %d point(s) that do not dominate the reference", int(below.sum()))
    pts = pts[(pts > 0).all(axis=1)]
    if len(pts) == 0:
        return 0.0
    # canonical input: unique non-dominated points in a fixed order, so
    # dominated or reordered points cannot perturb the floating-point sum
    pts = np.unique(pts, axis=0)
    ge = (pts[:, None, :] >= pts[None, :, :]).all(axis=-1)
    np.fill_diagonal(ge, False)
    pts = pts[~ge.any(axis=0)]
    pts = pts[np.lexsort((-pts[:, 1], -pts[:, 0], -pts[:, 2]))]
    xs: list = []
    ys: list = []
    area = 0.0
    volume = 0.0
    for i, (x, y, z) in enumerate(pts):
        area += _staircase_insert(xs, ys, float(x), float(y))
        z_next = pts[i + 1, 2] if i + 1 < len(pts) else 0.0
        volume += area * (z - z_next)
    return float(volume)


def ndcg_at_k(ranked_list: Sequence[str], held_out: Collection[str], k: int = 10) -> float:
    """Binary-gain NDCG of the first ``k`` entries against the held-out set."""
    relevant = set(held_out)
    dcg = sum(1.0 / math.log2(r + 2) for r, item in enumerate(ranked_list[:k]) if item in relevant)
    ideal = min(k, len(relevant))
    idcg = sum(1.0 / math.log2(r + 2) for r in range(ideal))
    return dcg / idcg if idcg > 0 else 0.0


def feasibility_rate(population: Sequence[Solution]) -> float:
    if not population:
        raise ValueError("feasibility rate of an empty population")
    return sum(s.total_violation == 0.0 for s in population) / len(population)


def front_hypervolume(solutions: Sequence[Solution], reference=ORIGIN) -> float:
    return hypervolume3([s.objectives for s in solutions], reference)


@dataclass(frozen=True)
class MetricsReport:
    hypervolume: float
    ndcg_at_k: float
    diversity: float
    feasibility_rate: float
    diversity_set_mean: float
    population_feasibility: float


def report(result, user, catalog=None, k: int = 10) -> MetricsReport:
    """Table-style metrics for one finished run.

    Hypervolume and feasibility are taken over the returned Pareto set; NDCG
    and diversity over the designated list.  ``population_feasibility``
    covers the final exploitation population.
    """
    pareto = list(result.pareto_set)
    star = result.l_star if result.l_star is not None else result.fallback_solution
    return MetricsReport(
        hypervolume=front_hypervolume(pareto),
        ndcg_at_k=ndcg_at_k(star.decoded_list, user.held_out, k),
        diversity=star.objectives.diversity,
        feasibility_rate=feasibility_rate(pareto) if pareto else 0.0,
        diversity_set_mean=float(np.mean([s.objectives.diversity for s in pareto])) if pareto else 0.0,
        population_feasibility=feasibility_rate(result.final_exploit),
    )
