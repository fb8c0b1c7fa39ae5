"""Relevance, diversity and novelty of a recommendation list."""

from __future__ import annotations

from dataclasses import replace
from typing import Sequence

import numpy as np

from . import constraints as con
from .domain import (
    Catalog,
    ConstraintReport,
    ConstraintThresholds,
    ObjectiveVector,
    Solution,
    UserContext,
    tie_ranks,
    top_k_positions,
)

DEFAULT_OVERLAP_WEIGHT = 0.5


def _unit_clip(x: float) -> float:
    return min(1.0, max(0.0, float(x)))


def relevance(
    items: Sequence[str],
    user: UserContext,
    catalog: Catalog,
    overlap_weight: float = DEFAULT_OVERLAP_WEIGHT,
) -> float:
    """Weighted mix of category overlap with the history and max-pooled embedding similarity."""
    recs = [catalog[i] for i in items]
    hist = [catalog[i] for i, _ in user.history]
    list_cats = {c for r in recs for c in r.categories}
    hist_cats = {c for r in hist for c in r.categories}
    overlap = len(list_cats & hist_cats) / len(list_cats)
    H = np.stack([r.embedding for r in hist])
    sims = [_unit_clip(np.max(H @ r.embedding)) for r in recs]
    sim = float(np.mean(sims))
    return _unit_clip(overlap_weight * overlap + (1.0 - overlap_weight) * sim)


def diversity(items: Sequence[str], catalog: Catalog) -> float:
    """Mean pairwise cosine distance, with distance (1 - cos) / 2."""
    k = len(items)
    if k < 2:
        return 0.0
    X = np.stack([catalog[i].embedding for i in items])
    total = 0.0
    for a in range(k):
        for b in range(a + 1, k):
            total += (1.0 - float(X[a] @ X[b])) / 2.0
    return _unit_clip(total * 2.0 / (k * (k - 1)))


def novelty(items: Sequence[str], catalog: Catalog) -> float:
    return _unit_clip(np.mean([1.0 - catalog[i].popularity for i in items]))


class Problem:
    """Evaluation context for one user: pool, catalog and thresholds bound together.

    Everything that does not depend on the list (per-item max history
    similarity, category bitmasks, recency flags) is computed once here.
    """

    def __init__(
        self,
        user: UserContext,
        catalog: Catalog,
        thresholds: ConstraintThresholds,
        k: int = 10,
        overlap_weight: float = DEFAULT_OVERLAP_WEIGHT,
    ):
        if thresholds.now is None:
            raise ValueError("thresholds.now must be set before evaluation")
        if len(user.candidate_pool) < k:
            raise ValueError(f"candidate pool of {len(user.candidate_pool)} items is smaller than k={k}")
        self.user = user
        self.catalog = catalog
        self.thresholds = thresholds
        self.k = k
        self.overlap_weight = overlap_weight
        self.pool = tuple(user.candidate_pool)
        self.id_ranks = tie_ranks(self.pool)

        idx = catalog.indices(self.pool)
        hist_idx = catalog.indices([i for i, _ in user.history])
        labels: dict[str, int] = {}

        def mask(cats) -> int:
            m = 0
            for c in cats:
                m |= 1 << labels.setdefault(c, len(labels))
            return m

        self.hist_mask = 0
        for j in hist_idx:
            self.hist_mask |= mask(catalog.records[j].categories)
        self.cat_masks = [mask(catalog.records[j].categories) for j in idx]

        E = catalog.embeddings
        self.emb = E[idx]
        self.sim_max = np.clip((self.emb @ E[hist_idx].T).max(axis=1), 0.0, 1.0)
        self.popularity = catalog.popularity[idx]

        primaries: dict[str, int] = {}
        sellers: dict[str, int] = {}
        self.primary = np.array(
            [primaries.setdefault(catalog.records[j].primary_category, len(primaries)) for j in idx]
        )
        self.seller = np.array([sellers.setdefault(catalog.records[j].seller_id, len(sellers)) for j in idx])
        age = thresholds.now - catalog.listed_at[idx]
        self.recent = age <= thresholds.recency_window

    @property
    def dimension(self) -> int:
        return len(self.pool)

    def decode_positions(self, keys: np.ndarray) -> np.ndarray:
        return top_k_positions(keys, self.id_ranks, self.k)

    def evaluate_keys(self, keys) -> Solution:
        keys = np.asarray(keys, dtype=float)
        if keys.shape != (self.dimension,):
            raise ValueError(f"key vector of length {keys.size} does not match pool of {self.dimension}")
        pos = self.decode_positions(keys)
        k = self.k

        union = 0
        for p in pos:
            union |= self.cat_masks[p]
        overlap = (union & self.hist_mask).bit_count() / union.bit_count()
        sim = float(self.sim_max[pos].mean())
        rel = self.overlap_weight * overlap + (1.0 - self.overlap_weight) * sim

        if k >= 2:
            X = self.emb[pos]
            gram = X @ X.T
            mean_cos = (gram.sum() - np.trace(gram)) / (k * (k - 1))
            div = (1.0 - mean_cos) / 2.0
        else:
            div = 0.0
        nov = 1.0 - float(self.popularity[pos].mean())
        objectives = ObjectiveVector(_unit_clip(rel), _unit_clip(div), _unit_clip(nov))

        counts = np.unique(self.primary[pos], return_counts=True)[1]
        report = ConstraintReport(
            g_fair=con.gini(con.padded_counts(counts, k)) - self.thresholds.theta_fair,
            g_seller=con.coverage_shortfall(len(set(self.seller[pos].tolist())), self.thresholds.theta_seller, k),
            g_new=con.coverage_shortfall(int(self.recent[pos].sum()), self.thresholds.theta_new, k),
        )
        return Solution(
            keys=keys,
            decoded_list=tuple(self.pool[p] for p in pos),
            objectives=objectives,
            constraints=report,
        )

    def evaluate(self, solution: Solution) -> Solution:
        ev = self.evaluate_keys(solution.keys)
        return replace(solution, decoded_list=ev.decoded_list, objectives=ev.objectives, constraints=ev.constraints)


def evaluate(
    solution: Solution,
    user: UserContext,
    catalog: Catalog,
    thresholds: ConstraintThresholds,
    k: int = 10,
) -> Solution:
    """Decode ``solution.keys`` and fill in objectives and constraint report."""
    return Problem(user, catalog, thresholds, k=k).evaluate(solution)
