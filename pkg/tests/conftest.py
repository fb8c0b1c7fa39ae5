import numpy as np
import pytest

from dualrec.dataio import SyntheticConfig, generate_synthetic
from dualrec.domain import ConstraintReport, ItemRecord, ObjectiveVector, Solution


def unit(*v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def make_item(item_id, cats=("c0",), seller="s0", listed_at=0.0, popularity=0.0, emb=None) -> ItemRecord:
    return ItemRecord(item_id, tuple(cats), seller, listed_at, popularity, None if emb is None else unit(*emb))


def make_solution(objs, phi=0.0, keys=None, decoded=None) -> Solution:
    """Solution with given objectives and total violation ``phi`` (carried by g_fair).

    Genome and decoded list default to values derived from the objectives,
    so distinct objective vectors give distinct solutions.
    """
    keys = np.asarray(objs, dtype=float) if keys is None else keys
    decoded = tuple(f"{v:.9f}" for v in objs) if decoded is None else decoded
    return Solution(keys, decoded, ObjectiveVector(*objs), ConstraintReport(phi, -1.0, -1.0))


@pytest.fixture(scope="session")
def synth():
    return generate_synthetic(SyntheticConfig())


@pytest.fixture(scope="session")
def small_synth():
    return generate_synthetic(SyntheticConfig(n_items=80, n_categories=8, n_sellers=10, n_users=5, seed=3))


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> bool:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
