import json
import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from dualrec.constraints import constraint_report
from dualrec.dataio import (
    DataError, SyntheticConfig, build_users, compute_popularity, generate_synthetic, load_catalog,
    load_dataset, load_embeddings, load_interactions, read_embeddings, write_catalog, write_dataset,
    write_embeddings, write_interactions,
)
from dualrec.domain import ConstraintThresholds

from conftest import make_item


def _records():
    return [
        make_item("A", cats=("x", "y"), seller="s1", listed_at=10.0, popularity=0.5, emb=(1, 2, 2)),
        make_item("B", cats=("y",), seller="s2", listed_at=20.5, popularity=0.0, emb=(0, 1, 0)),
        make_item("C", cats=("z",), seller="s1", listed_at=30.0, popularity=1.0, emb=(3, 0, 4)),
    ]


def test_catalog_round_trip(tmp_path):
    recs = _records()
    path = tmp_path / "catalog.jsonl"
    write_catalog(recs, path)
    loaded = load_catalog(path)
    assert len(loaded) == len(recs)
    assert all(a.same_as(b) for a, b in zip(recs, loaded))


def test_catalog_with_separate_embeddings(tmp_path):
    recs = _records()
    write_catalog(recs, tmp_path / "c.jsonl", include_embeddings=False)
    for suffix in (".jsonl", ".npz"):
        write_embeddings(recs, tmp_path / f"e{suffix}")
        loaded = load_catalog(tmp_path / "c.jsonl", tmp_path / f"e{suffix}")
        assert all(np.allclose(a.embedding, b.embedding, atol=1e-12) for a, b in zip(recs, loaded))


def test_empty_catalog(tmp_path):
    (tmp_path / "empty.jsonl").write_text("")
    assert load_catalog(tmp_path / "empty.jsonl") == []


def test_missing_field_reports_line(tmp_path):
    rows = [
        {"item_id": "a", "categories": ["x"], "seller_id": "s", "listed_at": 0},
        {"item_id": "b", "categories": ["x"], "seller_id": "s", "listed_at": 0},
        {"item_id": "c", "categories": ["x"], "listed_at": 0},
    ]
    path = tmp_path / "bad.jsonl"
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    with pytest.raises(DataError, match="^line 3: missing seller_id$"):
        load_catalog(path)


def test_malformed_json_reports_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"user_id": "u", "item_id": "a", "timestamp": 1}\n{oops\n')
    with pytest.raises(DataError, match="line 2: malformed JSON"):
        load_interactions(path)


def test_popularity_examples():
    recs = _records()
    inter = [("u", "A", 1.0)] * 4 + [("u", "B", 2.0)] * 2
    pops = {r.item_id: r.popularity for r in compute_popularity(inter, recs)}
    assert pops == {"A": 1.0, "B": 0.5, "C": 0.0}
    assert all(r.popularity == 0.0 for r in compute_popularity([], recs))
    only = {r.item_id: r.popularity for r in compute_popularity([("u", "C", 1.0)] * 3, recs)}
    assert only["C"] == 1.0
    with pytest.raises(DataError):
        compute_popularity([("u", "nope", 1.0)], recs)


def test_embeddings_normalised(tmp_path):
    path = tmp_path / "e.jsonl"
    path.write_text('{"item_id": "A", "embedding": [3, 4]}\n{"item_id": "B", "embedding": [0.6, 0.8]}\n')
    vecs = read_embeddings(path)
    assert all(abs(np.linalg.norm(v) - 1) <= 1e-6 for v in vecs.values())
    np.testing.assert_allclose(vecs["B"], [0.6, 0.8], atol=1e-6)
    path.write_text('{"item_id": "A", "embedding": [0, 0]}\n')
    with pytest.raises(DataError, match="cannot be normalised"):
        read_embeddings(path)
    path.write_text('{"item_id": "A", "embedding": [1, 0]}\n{"item_id": "B", "embedding": [1, 0, 0]}\n')
    with pytest.raises(DataError, match="dimension"):
        read_embeddings(path)


def test_load_embeddings_requires_every_item(tmp_path):
    recs = _records()
    write_embeddings(recs[:2], tmp_path / "e.jsonl")
    with pytest.raises(DataError, match="C"):
        load_embeddings(tmp_path / "e.jsonl", recs)
    write_embeddings(recs, tmp_path / "e.jsonl")
    assert all(r.embedding is not None for r in load_embeddings(tmp_path / "e.jsonl", recs))


def test_temporal_split():
    recs = [make_item(i, emb=(1, 0)) for i in "abcdef"]
    inter = [("u", "a", 1.0), ("u", "b", 2.0), ("u", "c", 3.0), ("u", "d", 4.0), ("v", "e", 1.0)]
    users = {u.user_id: u for u in build_users(inter, recs, holdout_len=2)}
    assert users["u"].history == (("a", 1.0), ("b", 2.0))
    assert users["u"].held_out == ("c", "d")
    assert set(users["u"].candidate_pool) == set("cdef")
    assert "v" not in users  # everything held out, no history left


def test_synthetic_deterministic():
    a = generate_synthetic(SyntheticConfig(seed=5, n_users=10))
    b = generate_synthetic(SyntheticConfig(seed=5, n_users=10))
    assert all(x.same_as(y) for x, y in zip(a.records, b.records))
    assert a.interactions == b.interactions and a.users == b.users
    c = generate_synthetic(SyntheticConfig(seed=6, n_users=10))
    assert a.interactions != c.interactions


def test_synthetic_shape(synth):
    cfg = SyntheticConfig()
    assert len(synth.records) == cfg.n_items
    assert len({r.primary_category for r in synth.records}) == cfg.n_categories
    th = ConstraintThresholds(now=synth.now)
    recent = sum(synth.now - r.listed_at <= th.recency_window for r in synth.records)
    assert recent == math.ceil(cfg.recent_fraction * cfg.n_items)
    assert len(synth.users) == cfg.n_users
    assert all(len(u.history) == cfg.history_len for u in synth.users)
    assert all(abs(np.linalg.norm(r.embedding) - 1) <= 1e-6 for r in synth.records)


def test_uniform_skew_passes_chi_square():
    cfg = SyntheticConfig(n_items=2000, n_categories=10, category_skew=0.0, n_users=1, seed=1)
    data = generate_synthetic(cfg)
    counts = np.bincount([int(r.primary_category[4:]) for r in data.records], minlength=10)
    expected = cfg.n_items / cfg.n_categories
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    assert chi2 < 27.88  # 99.9th percentile of chi-square with 9 degrees of freedom


def test_zero_recent_fraction_makes_every_list_violate_new_item_constraint():
    data = generate_synthetic(SyntheticConfig(n_items=60, n_categories=6, n_users=2, recent_fraction=0.0))
    th = ConstraintThresholds(now=data.now)
    pool = list(data.users[0].candidate_pool)
    for seed in range(20):
        items = list(np.random.default_rng(seed).choice(pool, 10, replace=False))
        assert constraint_report(items, data.catalog, th).g_new > 0


def feasible_witness(data, user, th, k=10):
    """Greedy list: one recent item, then balance primary categories, preferring new sellers."""
    cat = data.catalog
    pool = list(user.candidate_pool)
    recent = [i for i in pool if data.now - cat[i].listed_at <= th.recency_window]
    chosen = [recent[0]]
    while len(chosen) < k:
        counts = {}
        for i in chosen:
            counts[cat[i].primary_category] = counts.get(cat[i].primary_category, 0) + 1
        sellers = {cat[i].seller_id for i in chosen}
        best = min(
            (i for i in pool if i not in chosen),
            key=lambda i: (counts.get(cat[i].primary_category, 0), cat[i].seller_id in sellers, i),
        )
        chosen.append(best)
    return chosen


@settings(max_examples=15, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(
    n_categories=st.integers(5, 12),
    n_sellers=st.integers(2, 40),
    recent_fraction=st.floats(0.1, 0.5),
    skew=st.floats(0.0, 1.5),
    seed=st.integers(0, 1000),
)
def test_feasible_list_exists(n_categories, n_sellers, recent_fraction, skew, seed):
    cfg = SyntheticConfig(n_items=120, n_categories=n_categories, n_sellers=n_sellers, n_users=3,
                          recent_fraction=recent_fraction, category_skew=skew, seed=seed)
    data = generate_synthetic(cfg)
    th = ConstraintThresholds(now=data.now)
    for user in data.users:
        witness = feasible_witness(data, user, th)
        assert constraint_report(witness, data.catalog, th).feasible


def test_four_categories_admit_no_fair_list():
    # with k=10 the most even spread over 4 primaries is [3, 3, 2, 2]: padded Gini 0.64 > 0.6
    data = generate_synthetic(SyntheticConfig(n_items=120, n_categories=4, n_users=2))
    th = ConstraintThresholds(now=data.now)
    witness = feasible_witness(data, data.users[0], th)
    assert constraint_report(witness, data.catalog, th).g_fair == pytest.approx(0.04)


def test_write_and_reload_dataset(tmp_path, small_synth):
    paths = write_dataset(small_synth, tmp_path)
    again = load_dataset(paths["catalog"], paths["interactions"], paths["embeddings"], holdout_len=3)
    assert again.now == small_synth.now
    assert [u.user_id for u in again.users] == [u.user_id for u in small_synth.users]
    assert again.users == small_synth.users
    for a, b in zip(again.records, small_synth.records):
        assert a == b
        np.testing.assert_allclose(a.embedding, b.embedding, atol=1e-12)


def test_interactions_round_trip(tmp_path):
    inter = [("u1", "a", 1.5), ("u2", "b", 2.0)]
    write_interactions(inter, tmp_path / "i.jsonl")
    assert load_interactions(tmp_path / "i.jsonl") == inter


def test_synthetic_config_validation():
    with pytest.raises(ValueError):
        SyntheticConfig(n_categories=1)
    with pytest.raises(ValueError):
        SyntheticConfig(recent_fraction=1.5)
