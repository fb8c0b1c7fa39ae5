"""Dataset ingestion and the seeded synthetic catalog generator.

File formats (line-delimited JSON, one object per line):

* catalog:      {"item_id", "categories": [...], "seller_id", "listed_at",
                 optional "popularity", optional "embedding": [...]}
* interactions: {"user_id", "item_id", "timestamp"}
* embeddings:   {"item_id", "embedding": [...]}; alternatively an ``.npz``
                archive holding ``item_ids`` (index header) and ``vectors``.
"""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .domain import SECONDS_PER_DAY, Catalog, ItemRecord, UserContext

REQUIRED_ITEM_FIELDS = ("item_id", "categories", "seller_id", "listed_at")
REQUIRED_INTERACTION_FIELDS = ("user_id", "item_id", "timestamp")

Interaction = tuple[str, str, float]


class DataError(ValueError):
    pass


def _read_jsonl(path, required: Sequence[str]) -> Iterable[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise DataError(f"line {lineno}: expected a JSON object")
            for name in required:
                if name not in obj:
                    raise DataError(f"line {lineno}: missing {name}")
            yield lineno, obj


def _write_jsonl(rows: Iterable[dict], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def load_catalog(path, embeddings_path=None) -> list[ItemRecord]:
    """Read catalog records in file order; missing embeddings come from ``embeddings_path``."""
    records = []
    for lineno, obj in _read_jsonl(path, REQUIRED_ITEM_FIELDS):
        try:
            records.append(
                ItemRecord(
                    item_id=str(obj["item_id"]),
                    categories=tuple(str(c) for c in obj["categories"]),
                    seller_id=str(obj["seller_id"]),
                    listed_at=float(obj["listed_at"]),
                    popularity=float(obj.get("popularity", 0.0)),
                    embedding=obj.get("embedding"),
                )
            )
        except (TypeError, ValueError) as exc:
            raise DataError(f"line {lineno}: {exc}") from None
    if embeddings_path is not None:
        missing = [r.item_id for r in records if r.embedding is None]
        if missing:
            vectors = read_embeddings(embeddings_path)
            records = [r if r.embedding is not None else _with_vector(r, vectors) for r in records]
    return records


def _with_vector(record: ItemRecord, vectors: dict[str, np.ndarray]) -> ItemRecord:
    if record.item_id not in vectors:
        raise DataError(f"no embedding for item {record.item_id!r}")
    return replace(record, embedding=vectors[record.item_id])


def write_catalog(records: Sequence[ItemRecord], path, include_embeddings: bool = True) -> None:
    def row(r: ItemRecord) -> dict:
        out = {
            "item_id": r.item_id,
            "categories": list(r.categories),
            "seller_id": r.seller_id,
            "listed_at": r.listed_at,
            "popularity": r.popularity,
        }
        if include_embeddings and r.embedding is not None:
            out["embedding"] = [float(x) for x in r.embedding]
        return out

    _write_jsonl((row(r) for r in records), path)


def read_embeddings(path) -> dict[str, np.ndarray]:
    """Unit-normalised vectors keyed by item_id."""
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path, allow_pickle=False) as npz:
            ids = [str(i) for i in npz["item_ids"]]
            mat = np.asarray(npz["vectors"], dtype=float)
        if mat.ndim != 2 or mat.shape[0] != len(ids):
            raise DataError(f"{path}: vectors shape {mat.shape} does not match {len(ids)} ids")
        rows = list(zip(ids, mat))
    else:
        rows = []
        dim = None
        for lineno, obj in _read_jsonl(path, ("item_id", "embedding")):
            vec = np.asarray(obj["embedding"], dtype=float)
            if dim is None:
                dim = vec.shape
            elif vec.shape != dim:
                raise DataError(f"line {lineno}: embedding dimension {vec.shape} differs from {dim}")
            rows.append((str(obj["item_id"]), vec))
    out = {}
    for item_id, vec in rows:
        norm = float(np.linalg.norm(vec))
        if norm == 0.0 or not math.isfinite(norm):
            raise DataError(f"embedding for {item_id!r} cannot be normalised (norm {norm})")
        out[item_id] = vec / norm
    return out


def load_embeddings(path, catalog: Sequence[ItemRecord]) -> list[ItemRecord]:
    """Replace every record's embedding with the (normalised) vector from ``path``."""
    vectors = read_embeddings(path)
    missing = [r.item_id for r in catalog if r.item_id not in vectors]
    if missing:
        raise DataError(f"missing embeddings for: {', '.join(missing)}")
    return [replace(r, embedding=vectors[r.item_id]) for r in catalog]


def write_embeddings(records: Sequence[ItemRecord], path) -> None:
    path = Path(path)
    if path.suffix == ".npz":
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(
            path,
            item_ids=np.array([r.item_id for r in records]),
            vectors=np.stack([r.embedding for r in records]),
        )
        return
    _write_jsonl(({"item_id": r.item_id, "embedding": [float(x) for x in r.embedding]} for r in records), path)


def load_interactions(path) -> list[Interaction]:
    return [
        (str(o["user_id"]), str(o["item_id"]), float(o["timestamp"]))
        for _, o in _read_jsonl(path, REQUIRED_INTERACTION_FIELDS)
    ]


def write_interactions(interactions: Sequence[Interaction], path) -> None:
    _write_jsonl(({"user_id": u, "item_id": i, "timestamp": t} for u, i, t in interactions), path)


def compute_popularity(interactions: Sequence[Interaction], catalog: Sequence[ItemRecord]) -> list[ItemRecord]:
    """popularity = interaction count / max count (0 for items never interacted with)."""
    counts = Counter(item for _, item, _ in interactions)
    unknown = set(counts) - {r.item_id for r in catalog}
    if unknown:
        raise DataError(f"interactions reference unknown items: {sorted(unknown)[:5]}")
    top = max(counts.values(), default=0)
    return [replace(r, popularity=counts[r.item_id] / top if top else 0.0) for r in catalog]


def build_users(
    interactions: Sequence[Interaction],
    catalog: Sequence[ItemRecord],
    holdout_len: int,
) -> list[UserContext]:
    """Temporal split: each user's last ``holdout_len`` interactions are held out.

    The candidate pool is every catalog item outside the user's history.
    Users left with an empty history are skipped.
    """
    by_user: dict[str, list[tuple[float, str]]] = defaultdict(list)
    for user, item, ts in interactions:
        by_user[user].append((ts, item))
    ids = [r.item_id for r in catalog]
    users = []
    for user in sorted(by_user):
        events = sorted(by_user[user])
        cut = max(0, len(events) - holdout_len)
        history = [(item, ts) for ts, item in events[:cut]]
        if not history:
            continue
        seen = {item for item, _ in history}
        held = []
        for _, item in events[cut:]:
            if item not in seen and item not in held:
                held.append(item)
        users.append(UserContext(user, history, held, [i for i in ids if i not in seen]))
    return users


def default_now(catalog: Sequence[ItemRecord], interactions: Sequence[Interaction] = ()) -> float:
    """Latest timestamp anywhere in the dataset."""
    stamps = [r.listed_at for r in catalog] + [t for _, _, t in interactions]
    if not stamps:
        raise DataError("dataset has no timestamps")
    return max(stamps)


@dataclass
class Dataset:
    records: list[ItemRecord]
    users: list[UserContext]
    interactions: list[Interaction]
    now: float
    catalog: Catalog = field(init=False, repr=False)

    def __post_init__(self):
        self.catalog = Catalog(self.records)

    def user(self, user_id: str) -> UserContext:
        for u in self.users:
            if u.user_id == user_id:
                return u
        raise KeyError(user_id)


def load_dataset(catalog_path, interactions_path, embeddings_path=None, holdout_len: int = 3) -> Dataset:
    records = load_catalog(catalog_path, embeddings_path)
    interactions = load_interactions(interactions_path)
    records = compute_popularity(interactions, records)
    users = build_users(interactions, records, holdout_len)
    return Dataset(records, users, interactions, default_now(records, interactions))


@dataclass(frozen=True)
class SyntheticConfig:
    n_items: int = 300
    n_categories: int = 12
    n_sellers: int = 40
    category_skew: float = 1.0
    recent_fraction: float = 0.15
    embedding_dim: int = 16
    n_users: int = 100
    history_len: int = 12
    holdout_len: int = 3
    seed: int = 0
    secondary_category_prob: float = 0.3
    cluster_noise: float = 0.6
    recency_window_days: float = 30.0
    now: float = 1_700_000_000.0

    def __post_init__(self):
        if self.n_items < 10:
            raise ValueError("n_items must be at least 10")
        if self.n_categories < 2:
            raise ValueError("n_categories must be at least 2")
        if self.n_categories > self.n_items:
            raise ValueError("more categories than items")
        if self.n_sellers < 1 or self.embedding_dim < 2 or self.n_users < 1:
            raise ValueError("n_sellers, embedding_dim and n_users must be positive (embedding_dim >= 2)")
        if self.category_skew < 0:
            raise ValueError("category_skew must be non-negative")
        if not 0.0 <= self.recent_fraction <= 1.0:
            raise ValueError("recent_fraction must lie in [0, 1]")
        if self.history_len < 1 or self.holdout_len < 0:
            raise ValueError("history_len must be >= 1 and holdout_len >= 0")
        if self.history_len + self.holdout_len > self.n_items:
            raise ValueError("history_len + holdout_len exceeds n_items")

    def to_dict(self) -> dict:
        return asdict(self)


def bundled_config() -> SyntheticConfig:
    """Generator settings for the dataset shipped with the package."""
    text = resources.files("dualrec.data").joinpath("bundled_synthetic.json").read_text(encoding="utf-8")
    return SyntheticConfig(**json.loads(text))


def _unit_rows(m: np.ndarray) -> np.ndarray:
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def generate_synthetic(config: SyntheticConfig) -> Dataset:
    """Seeded stand-in for a review dataset.

    Primary categories follow a Zipf law (every category gets at least one
    item), sellers are uniform, embeddings are noisy per-category clusters,
    exactly ceil(recent_fraction * n_items) items are listed inside the
    recency window, and each user's interactions come from one or two
    preferred categories.  The last interaction lands exactly on ``now``.
    """
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    n, C = cfg.n_items, cfg.n_categories
    window = cfg.recency_window_days * SECONDS_PER_DAY
    width = len(str(n - 1))

    weights = 1.0 / np.arange(1, C + 1) ** cfg.category_skew
    weights /= weights.sum()
    primary = np.concatenate([np.arange(C), rng.choice(C, size=n - C, p=weights)])
    rng.shuffle(primary)
    secondary = np.where(
        rng.random(n) < cfg.secondary_category_prob,
        (primary + rng.integers(1, C, size=n)) % C,
        -1,
    )
    sellers = rng.integers(cfg.n_sellers, size=n)

    centroids = _unit_rows(rng.normal(size=(C, cfg.embedding_dim)))
    noise = rng.normal(size=(n, cfg.embedding_dim)) / math.sqrt(cfg.embedding_dim)
    emb = _unit_rows(centroids[primary] + cfg.cluster_noise * noise)

    n_recent = math.ceil(cfg.recent_fraction * n - 1e-9)
    recent = np.zeros(n, dtype=bool)
    recent[rng.choice(n, size=n_recent, replace=False)] = True
    age = np.where(
        recent,
        rng.uniform(0.0, window, size=n),
        window + rng.uniform(SECONDS_PER_DAY, 365 * SECONDS_PER_DAY, size=n),
    )
    listed_at = np.round(cfg.now - age)

    cat_name = [f"cat_{c:02d}" for c in range(C)]
    records = []
    for j in range(n):
        cats = [cat_name[primary[j]]]
        if secondary[j] >= 0:
            cats.append(cat_name[secondary[j]])
        records.append(
            ItemRecord(
                item_id=f"item_{j:0{width}d}",
                categories=tuple(cats),
                seller_id=f"seller_{sellers[j]:03d}",
                listed_at=float(listed_at[j]),
                embedding=emb[j],
            )
        )

    appeal = rng.lognormal(0.0, 1.0, size=n)
    cat_freq = np.bincount(primary, minlength=C) / n
    per_user = cfg.history_len + cfg.holdout_len
    horizon = 180 * SECONDS_PER_DAY
    interactions: list[Interaction] = []
    uwidth = len(str(cfg.n_users - 1))
    for u in range(cfg.n_users):
        n_pref = int(rng.integers(1, 3))
        prefs = rng.choice(C, size=min(n_pref, C), replace=False, p=cat_freq)
        in_pref = np.isin(primary, prefs)
        chosen = _weighted_sample(rng, np.flatnonzero(in_pref), appeal, per_user)
        if len(chosen) < per_user:
            rest = np.flatnonzero(~in_pref)
            chosen = np.concatenate([chosen, _weighted_sample(rng, rest, appeal, per_user - len(chosen))])
        stamps = np.sort(np.round(cfg.now - rng.uniform(0.0, horizon, size=per_user)))
        uid = f"user_{u:0{uwidth}d}"
        interactions.extend((uid, records[j].item_id, float(ts)) for j, ts in zip(chosen, stamps))
    if interactions:
        u, i, _ = interactions[-1]
        interactions[-1] = (u, i, float(cfg.now))

    records = compute_popularity(interactions, records)
    users = build_users(interactions, records, cfg.holdout_len)
    return Dataset(records, users, interactions, default_now(records, interactions))


def _weighted_sample(rng: np.random.Generator, candidates: np.ndarray, weights: np.ndarray, size: int) -> np.ndarray:
    size = min(size, len(candidates))
    if size == 0:
        return np.array([], dtype=np.intp)
    w = weights[candidates]
    return rng.choice(candidates, size=size, replace=False, p=w / w.sum())


def write_dataset(dataset: Dataset, out_dir) -> dict[str, Path]:
    """Write catalog (no embeddings), interactions and embeddings files into ``out_dir``."""
    out = Path(out_dir)
    paths = {
        "catalog": out / "catalog.jsonl",
        "interactions": out / "interactions.jsonl",
        "embeddings": out / "embeddings.jsonl",
    }
    write_catalog(dataset.records, paths["catalog"], include_embeddings=False)
    write_interactions(dataset.interactions, paths["interactions"])
    write_embeddings(dataset.records, paths["embeddings"])
    return paths
