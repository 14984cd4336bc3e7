import math

import numpy as np
import pytest

from stwave.assembly import (ProblemSpec, TensorOperator, assemble_rhs, assemble_spatial,
                             assemble_temporal_D, assemble_temporal_G, direct_entry,
                             heat_problem, random_pairs, riesz_weights, verify_D_dual_route)
from stwave.errors import ParameterError
from stwave.frac_calc import leggauss
from stwave.tensor_index import IndexSet, build_sparse_set


def _support(pp):
    return float(pp.b[0]), float(pp.b[-1])


def test_D_zero_on_disjoint_supports(small):
    bt, by = small["bt"], small["by"]
    D = assemble_temporal_D(bt, by).data
    for i in range(0, by.offsets[4], 7):
        for j in range(0, bt.offsets[4], 5):
            a0, a1 = _support(by.eval(i))
            b0, b1 = _support(bt.eval(j))
            if a1 <= b0 or b1 <= a0:
                assert D[i, j] == 0.0


def test_D_matches_derivative_pairing(small):
    bt, by = small["bt"], small["by"]
    D = assemble_temporal_D(bt, by)
    G = assemble_temporal_G(bt, by)
    th = bt.eval(3)
    assert th.derivative().inner(by.eval(3)) == pytest.approx(D.data[3, 3], abs=1e-13)
    # the same function paired with its own derivative integrates to boundary terms only
    assert th.derivative().inner(th) == pytest.approx(0.5 * th(bt.L, side="left") ** 2 - 0.5 * th(0.0) ** 2,
                                                      abs=1e-13)
    i, j = 5, 4
    x, w = leggauss(20)
    lo, hi = 0.0, bt.L
    brk = np.union1d(bt.eval(j).b, by.eval(i).b)
    tot = sum(np.sum((b - a) / 2 * w * bt.eval(j)((a + b) / 2 + (b - a) / 2 * x)
                     * by.eval(i)((a + b) / 2 + (b - a) / 2 * x))
              for a, b in zip(brk[:-1], brk[1:]) if lo <= a < hi)
    assert G.data[i, j] == pytest.approx(tot, abs=1e-13)


def test_dual_route_small(small, rng):
    D = assemble_temporal_D(small["bt"], small["by"])
    err, diffs = verify_D_dual_route(D, random_pairs(D, 20, rng, max_level=4))
    assert diffs.size == 20 and err < 1e-6


def test_spatial_factors(small):
    M, A = assemble_spatial(small["problem"], small["bx"])
    np.testing.assert_allclose(M.data.diagonal(), 1.0, atol=1e-12)
    Ad = A.data.toarray()
    np.testing.assert_allclose(Ad, Ad.T, atol=1e-14)
    assert np.linalg.eigvalsh(Ad).min() > 0


def test_ellipticity_rejected():
    with pytest.raises(ParameterError, match="ellipticity"):
        ProblemSpec(a=lambda x: x - 0.5)
    with pytest.raises(ParameterError):
        ProblemSpec(c=-1.0)


def test_dyadic_weights(small):
    X, _ = small["sets"](3)
    w = riesz_weights(X, "X", mode="dyadic")
    tl, xl = X.level_arrays()
    assert w[(tl == 0) & (xl[:, 0] == 0)][0] == pytest.approx(math.sqrt(2))
    sel = (tl == 0) & (xl[:, 0] == 2)
    assert w[sel][0] == pytest.approx(math.sqrt(17))
    assert np.all(riesz_weights(X, "Y", mode="none") == 1)
    with pytest.raises(ParameterError):
        riesz_weights(X, "Z")


def test_entry_against_section(small):
    bt, by, bx, pb = small["bt"], small["by"], small["bx"], small["problem"]
    op = TensorOperator(bt, by, bx, pb, weights="dyadic")
    X, Y = small["sets"](3)
    S = op.section(Y, X)
    for r, c in [(0, 0), (3, 7), (len(Y) - 1, len(X) - 1), (10, 2)]:
        assert op.entry(Y.keys[r], X.keys[c]) == pytest.approx(S[r, c], abs=1e-14)
        one = op.section(IndexSet(by, (bx,), Y.keys[[r]]), IndexSet(bt, (bx,), X.keys[[c]]))
        assert one.shape == (1, 1) and one[0, 0] == pytest.approx(S[r, c], abs=1e-14)


def test_direct_entry_oracle(small):
    op = small["op"]
    X, Y = small["sets"](3)
    S = op.section(Y, X, scaled=False)
    for r, c in [(0, 0), (4, 3), (12, 9), (len(Y) - 1, len(X) - 2)]:
        assert direct_entry(op, Y.keys[r], X.keys[c]) == pytest.approx(S[r, c], abs=1e-11)


def test_block_kron_matches_section(small, rng):
    op = small["op"]
    X, Y = small["sets"](4)
    S = op.section(Y, X)
    Bk = op.block(Y, X)
    x = rng.standard_normal(len(X))
    y = rng.standard_normal(len(Y))
    np.testing.assert_allclose(Bk.matvec(x), S @ x, atol=1e-12)
    np.testing.assert_allclose(Bk.rmatvec(y), S.T @ y, atol=1e-12)


def test_rhs_zero_and_consistency(small):
    op = small["op"]
    _, Y = small["sets"](3)
    zero = ProblemSpec(f=lambda t, x: 0.0 * t * x, f_terms=None)
    assert assemble_rhs(zero, Y, op).norm() == 0.0
    f = assemble_rhs(small["problem"], Y, op)
    assert len(f) > 0 and np.isfinite(f.values).all()


def test_caps_enforced(small):
    bt, by, bx = small["bt"], small["by"], small["bx"]
    op = TensorOperator(bt, by, bx, small["problem"], level_cap_t=2, level_cap_x=2)
    big = build_sparse_set(4, "B", time_basis=bt, space_bases=bx)
    with pytest.raises(ParameterError, match="cap"):
        op.section(big.with_time_basis(by, 1), big)
