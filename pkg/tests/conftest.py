import numpy as np
import pytest

from coupled_mtl.losses import BatchLabels, Predictions
from coupled_mtl.relatedness import bundled


@pytest.fixture(scope="session")
def table1():
    return bundled("table1_domain")


@pytest.fixture(scope="session")
def table1_affwild2():
    return bundled("table1_affwild2")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_batch(rng, B, K, M, p_cls=0.6, p_mask=0.5):
    """Random logits and partially annotated labels; every row keeps at least
    one annotation."""
    preds = Predictions.from_logits(rng.normal(size=(B, K)) * 2, rng.normal(size=(B, M)) * 2)
    cls = np.where(rng.random(B) < p_cls, rng.integers(0, K, B), -1)
    mask = (rng.random((B, M)) < p_mask).astype(float)
    for b in range(B):
        if cls[b] < 0 and mask[b].sum() == 0:
            mask[b, rng.integers(0, M)] = 1.0
    y = (rng.random((B, M)) < 0.5).astype(float) * mask
    return preds, BatchLabels(cls, y, mask)


@pytest.fixture
def make_batch():
    return random_batch


# -- acceptance report ---------------------------------------------------------

ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Record the verdict of one acceptance criterion, then assert it."""

    def record(number, ok, detail):
        ACCEPTANCE[number] = (bool(ok), detail)
        print(f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
