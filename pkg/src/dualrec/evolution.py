"""Selection and variation: dominance, CDP comparison, sorting, crowding, DE/pbest/1, mutation."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .domain import ObjectiveVector, Solution

INF = math.inf


class Ordering(enum.IntEnum):
    B_BETTER = -1
    TIE = 0
    A_BETTER = 1


def _vec(x) -> tuple[float, ...]:
    return x.as_tuple() if isinstance(x, ObjectiveVector) else tuple(x)


def pareto_dominates(a, b) -> bool:
    """True iff ``a`` is no worse than ``b`` everywhere and better somewhere (maximisation)."""
    a, b = _vec(a), _vec(b)
    return all(x >= y for x, y in zip(a, b)) and any(x > y for x, y in zip(a, b))


def cdp_compare(a: Solution, b: Solution, epsilon: float = 0.0) -> Ordering:
    """Constraint-domination with epsilon-feasibility (total violation <= epsilon)."""
    pa, pb = a.total_violation, b.total_violation
    fa, fb = pa <= epsilon, pb <= epsilon
    if fa and not fb:
        return Ordering.A_BETTER
    if fb and not fa:
        return Ordering.B_BETTER
    if not fa:
        if pa < pb:
            return Ordering.A_BETTER
        if pb < pa:
            return Ordering.B_BETTER
        return Ordering.TIE
    if pareto_dominates(a.objectives, b.objectives):
        return Ordering.A_BETTER
    if pareto_dominates(b.objectives, a.objectives):
        return Ordering.B_BETTER
    return Ordering.TIE


def objective_matrix(solutions: Sequence[Solution]) -> np.ndarray:
    return np.array([s.objectives.as_tuple() for s in solutions], dtype=float).reshape(-1, 3)


def dominance_matrix(objs: np.ndarray) -> np.ndarray:
    """D[i, j] is True iff row i Pareto-dominates row j."""
    ge = (objs[:, None, :] >= objs[None, :, :]).all(axis=-1)
    gt = (objs[:, None, :] > objs[None, :, :]).any(axis=-1)
    return ge & gt


@dataclass(frozen=True)
class CDP:
    """Comparator: CDP at a fixed epsilon.  ``CDP(inf)`` is plain Pareto dominance."""

    epsilon: float = 0.0

    def __call__(self, a: Solution, b: Solution) -> Ordering:
        return cdp_compare(a, b, self.epsilon)

    def better_matrix(self, solutions: Sequence[Solution]) -> np.ndarray:
        objs = objective_matrix(solutions)
        dom = dominance_matrix(objs)
        if self.epsilon == INF:
            return dom
        phi = np.array([s.total_violation for s in solutions])
        feas = phi <= self.epsilon
        fa, fb = feas[:, None], feas[None, :]
        return (fa & ~fb) | (~fa & ~fb & (phi[:, None] < phi[None, :])) | (fa & fb & dom)


PARETO = CDP(INF)


def _generic_better_matrix(solutions, comparator) -> np.ndarray:
    n = len(solutions)
    B = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(i + 1, n):
            o = comparator(solutions[i], solutions[j])
            if o == Ordering.A_BETTER:
                B[i, j] = True
            elif o == Ordering.B_BETTER:
                B[j, i] = True
    return B


def sort_better_matrix(B: np.ndarray) -> list[list[int]]:
    n = B.shape[0]
    beaten_by = B.sum(axis=0).astype(np.int64)
    remaining = np.ones(n, dtype=bool)
    fronts = []
    while remaining.any():
        front = np.flatnonzero(remaining & (beaten_by == 0))
        if front.size == 0:
            raise ValueError("comparator is cyclic")
        fronts.append(front.tolist())
        remaining[front] = False
        beaten_by -= B[front].sum(axis=0)
    return fronts


def nondominated_sort(population: Sequence[Solution], comparator: Callable = PARETO) -> list[list[int]]:
    """Partition indices into successive non-dominated fronts under ``comparator``."""
    if isinstance(comparator, CDP):
        B = comparator.better_matrix(population)
    else:
        B = _generic_better_matrix(population, comparator)
    return sort_better_matrix(B)


def crowding_distance(front) -> np.ndarray:
    """Crowding distance of each member of one front (boundary members get +inf)."""
    objs = np.array([_vec(x) for x in front], dtype=float)
    n = len(objs)
    if n <= 2:
        return np.full(n, INF)
    dist = np.zeros(n)
    for m in range(objs.shape[1]):
        col = objs[:, m]
        lo, hi = col.min(), col.max()
        if hi == lo:
            continue
        order = np.argsort(col, kind="stable")
        dist[order[0]] = dist[order[-1]] = INF
        dist[order[1:-1]] += (col[order[2:]] - col[order[:-2]]) / (hi - lo)
    return dist


@dataclass
class Ranking:
    fronts: list[list[int]]
    rank: np.ndarray
    crowding: np.ndarray

    @property
    def order(self) -> np.ndarray:
        """Indices best first: lower front, then larger crowding, then index."""
        n = len(self.rank)
        return np.lexsort((np.arange(n), -self.crowding, self.rank))


def rank_population(population: Sequence[Solution], comparator: Callable = PARETO) -> Ranking:
    fronts = nondominated_sort(population, comparator)
    rank = np.empty(len(population), dtype=np.int64)
    crowd = np.empty(len(population))
    for r, front in enumerate(fronts):
        rank[front] = r
        crowd[front] = crowding_distance([population[i].objectives for i in front])
    return Ranking(fronts, rank, crowd)


def pbest_mutant(
    keys: np.ndarray,
    target: int,
    order: Sequence[int],
    p: float,
    F: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, int, int, int]:
    """x_pbest + F * (x_r1 - x_r2), before crossover and clamping."""
    n = keys.shape[0]
    if n < 4:
        raise ValueError(f"DE/pbest/1 needs at least 4 individuals, got {n}")
    if not 0.0 < p <= 1.0:
        raise ValueError("p must lie in (0, 1]")
    n_top = max(1, math.ceil(p * n - 1e-9))
    pbest = int(order[rng.integers(n_top)])
    r1, r2 = (int(r) + (r >= target) for r in rng.choice(n - 1, size=2, replace=False))
    return keys[pbest] + F * (keys[r1] - keys[r2]), pbest, r1, r2


def binomial_crossover(target: np.ndarray, mutant: np.ndarray, CR: float, rng: np.random.Generator) -> np.ndarray:
    take = rng.random(target.size) < CR
    take[rng.integers(target.size)] = True
    return np.where(take, mutant, target)


def de_pbest1(
    keys: np.ndarray,
    target: int,
    order: Sequence[int],
    p: float,
    F: float,
    CR: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """DE/pbest/1/bin child of ``keys[target]``, clamped to [0, 1].

    ``order`` ranks the population best first under the agent's comparator;
    the pbest donor is drawn from its first ceil(p * N) entries.
    """
    mutant, *_ = pbest_mutant(keys, target, order, p, F, rng)
    child = binomial_crossover(keys[target], mutant, CR, rng)
    return np.clip(child, 0.0, 1.0)


def mutate(keys: np.ndarray, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Reset each gene to U(0, 1) independently with probability ``rate``."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError("mutation rate must lie in [0, 1]")
    keys = np.array(keys, dtype=float)
    hit = rng.random(keys.size) < rate
    keys[hit] = rng.random(int(hit.sum()))
    return keys
