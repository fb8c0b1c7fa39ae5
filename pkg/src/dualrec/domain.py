"""Core value types: catalog items, users, solutions and their evaluations."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

SECONDS_PER_DAY = 86_400.0
NORM_TOL = 1e-6


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ItemRecord:
    item_id: str
    categories: tuple[str, ...]
    seller_id: str
    listed_at: float
    popularity: float = 0.0
    embedding: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "categories", tuple(self.categories))
        if not self.categories:
            raise ValueError(f"item {self.item_id!r}: categories must be non-empty")
        if not 0.0 <= self.popularity <= 1.0:
            raise ValueError(f"item {self.item_id!r}: popularity {self.popularity} outside [0, 1]")
        if self.embedding is not None:
            emb = _frozen_array(self.embedding)
            norm = float(np.linalg.norm(emb))
            if abs(norm - 1.0) > NORM_TOL:
                raise ValueError(f"item {self.item_id!r}: embedding norm {norm:.6g} is not 1")
            object.__setattr__(self, "embedding", emb)

    @property
    def primary_category(self) -> str:
        return self.categories[0]

    def same_as(self, other: "ItemRecord") -> bool:
        """Field-by-field equality, embeddings included."""
        if self != other:
            return False
        if self.embedding is None or other.embedding is None:
            return self.embedding is other.embedding
        return bool(np.array_equal(self.embedding, other.embedding))


@dataclass(frozen=True)
class UserContext:
    user_id: str
    history: tuple[tuple[str, float], ...]
    held_out: tuple[str, ...]
    candidate_pool: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "history", tuple((str(i), float(t)) for i, t in self.history))
        object.__setattr__(self, "held_out", tuple(self.held_out))
        object.__setattr__(self, "candidate_pool", tuple(self.candidate_pool))
        if not self.history:
            raise ValueError(f"user {self.user_id!r}: history must be non-empty")
        seen = self.history_items
        if seen & set(self.held_out):
            raise ValueError(f"user {self.user_id!r}: held-out items overlap history")
        if seen & set(self.candidate_pool):
            raise ValueError(f"user {self.user_id!r}: candidate pool overlaps history")

    @property
    def history_items(self) -> set[str]:
        return {i for i, _ in self.history}


@dataclass(frozen=True)
class ObjectiveVector:
    relevance: float
    diversity: float
    novelty: float

    def __post_init__(self):
        for name in ("relevance", "diversity", "novelty"):
            v = getattr(self, name)
            if not math.isfinite(v) or not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.relevance, self.diversity, self.novelty)


@dataclass(frozen=True)
class ConstraintReport:
    g_fair: float
    g_seller: float
    g_new: float

    @property
    def total_violation(self) -> float:
        return max(0.0, self.g_fair) + max(0.0, self.g_seller) + max(0.0, self.g_new)

    @property
    def feasible(self) -> bool:
        return self.total_violation == 0.0


@dataclass(frozen=True)
class ConstraintThresholds:
    theta_fair: float = 0.6
    theta_seller: float = 0.2
    theta_new: float = 0.1
    recency_window: float = 30 * SECONDS_PER_DAY
    now: float | None = None

    def __post_init__(self):
        for name in ("theta_fair", "theta_seller", "theta_new"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name}={v} must lie in (0, 1)")
        if self.recency_window <= 0:
            raise ValueError("recency_window must be positive")


@dataclass(frozen=True, eq=False)
class Solution:
    """A key vector over the candidate pool plus its cached evaluation.

    ``decoded_list`` is ordered by descending key, which is also the ranking
    used for NDCG.
    """

    keys: np.ndarray
    decoded_list: tuple[str, ...] = ()
    objectives: ObjectiveVector | None = None
    constraints: ConstraintReport | None = None

    def __post_init__(self):
        object.__setattr__(self, "keys", _frozen_array(self.keys))

    @property
    def evaluated(self) -> bool:
        return self.objectives is not None and self.constraints is not None

    @property
    def total_violation(self) -> float:
        return self.constraints.total_violation

    def genome_key(self) -> bytes:
        return self.keys.tobytes()


class Catalog:
    """Item lookup with dense per-item arrays for vectorised evaluation."""

    def __init__(self, records: Iterable[ItemRecord]):
        self.records: tuple[ItemRecord, ...] = tuple(records)
        self._index: dict[str, int] = {}
        for pos, rec in enumerate(self.records):
            if rec.item_id in self._index:
                raise ValueError(f"duplicate item_id {rec.item_id!r}")
            self._index[rec.item_id] = pos
        missing = [r.item_id for r in self.records if r.embedding is None]
        if missing:
            raise ValueError(f"items without embeddings: {', '.join(missing[:10])}")
        if self.records:
            dims = {r.embedding.shape[0] for r in self.records}
            if len(dims) != 1:
                raise ValueError(f"inconsistent embedding dimensions {sorted(dims)}")
            self.embeddings = _frozen_array(np.stack([r.embedding for r in self.records]))
        else:
            self.embeddings = _frozen_array(np.zeros((0, 0)))
        self.popularity = _frozen_array([r.popularity for r in self.records])
        self.listed_at = _frozen_array([r.listed_at for r in self.records])

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, item_id: str) -> bool:
        return item_id in self._index

    def __getitem__(self, item_id: str) -> ItemRecord:
        return self.records[self.index(item_id)]

    def index(self, item_id: str) -> int:
        try:
            return self._index[item_id]
        except KeyError:
            raise KeyError(f"unknown item_id {item_id!r}") from None

    def indices(self, item_ids: Sequence[str]) -> np.ndarray:
        return np.array([self.index(i) for i in item_ids], dtype=np.intp)

    @property
    def item_ids(self) -> list[str]:
        return [r.item_id for r in self.records]

    @property
    def latest_listing(self) -> float:
        return float(self.listed_at.max()) if len(self.records) else 0.0


def tie_ranks(pool: Sequence[str]) -> np.ndarray:
    """Position of each pool entry in ascending item_id order."""
    order = sorted(range(len(pool)), key=lambda i: pool[i])
    ranks = np.empty(len(pool), dtype=np.intp)
    ranks[order] = np.arange(len(pool))
    return ranks


def top_k_positions(keys: np.ndarray, id_ranks: np.ndarray, k: int) -> np.ndarray:
    # lexsort sorts by the last key first: descending key, then ascending id
    return np.lexsort((id_ranks, -keys))[:k]


def decode_keys(keys: Sequence[float], pool: Sequence[str], k: int) -> list[str]:
    """Return the ``k`` pool items with the largest keys, best first.

    Ties are broken by ascending item_id.
    """
    keys = np.asarray(keys, dtype=float)
    if keys.shape != (len(pool),):
        raise ValueError(f"key vector of length {keys.size} does not match pool of {len(pool)}")
    if not 0 < k <= len(pool):
        raise ValueError(f"k={k} must be in [1, {len(pool)}]")
    positions = top_k_positions(keys, tie_ranks(pool), k)
    return [pool[p] for p in positions]
