import numpy as np
import pytest

from stwave.assembly import TensorOperator, heat_problem
from stwave.tensor_index import build_sparse_set
from stwave.wavelets import build_basis


@pytest.fixture(scope="session")
def small():
    """Bases and operator deep enough for k <= 4 sections."""
    bt = build_basis("temporal_trial", L=8.0, max_level=5)
    by = build_basis("temporal_test", L=8.0, max_level=5)
    bx = build_basis("spatial_dirichlet", max_level=5)
    pb = heat_problem()
    op = TensorOperator(bt, by, bx, pb)

    def sets(k):
        X = build_sparse_set(k, "B", time_basis=bt, space_bases=bx)
        return X, X.with_time_basis(by, 1)

    return {"bt": bt, "by": by, "bx": bx, "problem": pb, "op": op, "sets": sets}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import LINES
    except ImportError:
        return
    if LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(LINES):
            terminalreporter.write_line(LINES[k])
