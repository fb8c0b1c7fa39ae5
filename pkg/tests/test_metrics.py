import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualrec.metrics import feasibility_rate, hypervolume3, ndcg_at_k

from conftest import make_solution


def monte_carlo_hv(points, n_samples=1_000_000, seed=0):
    """Fraction of uniform samples in the unit cube dominated by some point."""
    pts = np.asarray(points, dtype=float)
    samples = np.random.default_rng(seed).random((n_samples, 3))
    covered = np.zeros(n_samples, dtype=bool)
    for p in pts:
        covered |= (samples <= p).all(axis=1)
    return covered.mean()


def grid_hv(points, g):
    """Exact volume for points on a 1/g grid by counting dominated cells."""
    centres = (np.indices((g, g, g)).reshape(3, -1).T + 0.5) / g
    covered = np.zeros(len(centres), dtype=bool)
    for p in np.asarray(points, dtype=float):
        covered |= (centres <= p).all(axis=1)
    return covered.sum() / g**3


def test_hv_examples():
    assert hypervolume3([(1, 1, 1)]) == 1.0
    assert hypervolume3([(1, 1, 1), (0.5, 0.5, 0.5)]) == 1.0
    assert hypervolume3([]) == 0.0


def test_hv_three_point_example_against_monte_carlo():
    pts = [(0.8, 0.2, 0.5), (0.2, 0.8, 0.5), (0.5, 0.5, 0.9)]
    # inclusion-exclusion by hand: 0.08 + 0.08 + 0.225 - 0.02 - 0.05 - 0.05 + 0.02
    assert hypervolume3(pts) == pytest.approx(0.285, abs=1e-12)
    assert abs(hypervolume3(pts) - monte_carlo_hv(pts)) <= 0.01


def test_hv_accepts_objective_vectors_and_reference():
    sols = [make_solution((0.5, 0.5, 0.5))]
    assert hypervolume3([s.objectives for s in sols]) == pytest.approx(0.125)
    assert hypervolume3([(0.5, 0.5, 0.5)], reference=(0.25, 0.25, 0.25)) == pytest.approx(0.25**3)
    assert hypervolume3([(0.5, 0.5, 0.5)], reference=(0.6, 0.0, 0.0)) == 0.0


@pytest.mark.parametrize("seed", range(25))
def test_hv_matches_grid_oracle(seed):
    rng = np.random.default_rng(seed)
    g = 8
    pts = rng.integers(1, g + 1, (int(rng.integers(1, 15)), 3)) / g
    assert hypervolume3(pts) == pytest.approx(grid_hv(pts, g), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(*[st.floats(0, 1)] * 3), min_size=0, max_size=12), st.tuples(*[st.floats(0, 1)] * 3))
def test_hv_monotone_under_insertion(points, extra):
    before = hypervolume3(points)
    assert hypervolume3(points + [extra]) >= before - 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(*[st.floats(0.01, 1)] * 3), min_size=1, max_size=10), st.floats(0, 1))
def test_hv_dominated_point_changes_nothing(points, shrink):
    dominated = tuple(v * shrink for v in points[0])
    assert hypervolume3(points + [dominated]) == hypervolume3(points)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(*[st.floats(0, 1)] * 3), min_size=1, max_size=10), st.randoms())
def test_hv_order_independent(points, rnd):
    shuffled = list(points)
    rnd.shuffle(shuffled)
    assert hypervolume3(points) == pytest.approx(hypervolume3(shuffled), abs=1e-12)


def test_ndcg_examples():
    ranked = [f"i{j}" for j in range(10)]
    assert ndcg_at_k(ranked, set(ranked)) == pytest.approx(1.0)
    assert ndcg_at_k(ranked, {"zzz"}) == 0.0
    assert ndcg_at_k(ranked, set()) == 0.0
    expected = (1 / math.log2(3)) / (1 / math.log2(2))
    assert ndcg_at_k(ranked, {"i1"}) == pytest.approx(expected, abs=1e-12)
    assert ndcg_at_k(ranked, {"i1"}) == pytest.approx(0.6309, abs=1e-4)


def test_ndcg_idcg_capped_by_held_out_size():
    ranked = [f"i{j}" for j in range(10)]
    held = {"i0", "i1", "i2", "h1", "h2"}
    dcg = 1 + 1 / math.log2(3) + 1 / math.log2(4)
    idcg = sum(1 / math.log2(r + 2) for r in range(5))
    assert ndcg_at_k(ranked, held) == pytest.approx(dcg / idcg)


def test_ndcg_irrelevant_swaps_and_promotion():
    ranked = [f"i{j}" for j in range(10)]
    held = {"i1", "i4"}
    swapped = list(ranked)
    swapped[6], swapped[8] = swapped[8], swapped[6]
    assert ndcg_at_k(swapped, held) == ndcg_at_k(ranked, held)
    promoted = list(ranked)
    promoted[3], promoted[4] = promoted[4], promoted[3]
    assert ndcg_at_k(promoted, held) > ndcg_at_k(ranked, held)


def test_feasibility_rate_counts():
    feas = [make_solution((0.5, 0.5, 0.5), 0.0)] * 7
    infeas = [make_solution((0.5, 0.5, 0.5), 0.2)] * 3
    assert feasibility_rate(feas) == 1.0
    assert feasibility_rate(infeas) == 0.0
    assert feasibility_rate(feas + infeas) == pytest.approx(0.7)
    with pytest.raises(ValueError):
        feasibility_rate([])
