import warnings

import numpy as np
import pytest

from stwave.assembly import assemble_rhs
from stwave.compressive import CompressedOperator, normal_rhs
from stwave.errors import DivergenceError, ParameterError, SingularSectionError
from stwave.frac_calc import PiecewisePoly
from stwave.solvers import (AdaptiveParams, contraction_ok, estimate_infsup, solve_adaptive,
                            solve_fixed, verify_coercivity_halfline)
from stwave.tensor_index import IndexSet, SparseCoeffVector


def test_recovers_consistent_solution(small, rng):
    op = small["op"]
    X, Y = small["sets"](4)
    u = rng.standard_normal(len(X))
    f = op.section(Y, X) @ u
    rep = solve_fixed(op, X, Y, f, tol=1e-12)
    np.testing.assert_allclose(rep.coefficients.to_dense(X), u, atol=1e-8)
    assert rep.info["ls_residual"] < 1e-8


def test_one_by_one(small):
    op = small["op"]
    X, Y = small["sets"](0)
    X1 = IndexSet(small["bt"], (small["bx"],), X.keys[:1])
    Y1 = IndexSet(small["by"], (small["bx"],), Y.keys[:1])
    b = op.section(Y1, X1)[0, 0]
    rep = solve_fixed(op, X1, Y1, np.array([2 * b]))
    assert rep.coefficients.to_dense(X1)[0] == pytest.approx(2.0)


def test_rejects_underdetermined(small):
    X, Y = small["sets"](2)
    with pytest.raises(SingularSectionError):
        solve_fixed(small["op"], Y.with_time_basis(small["bt"], 0), X, np.ones(len(X)))


def test_rhs_shape_checked(small):
    X, Y = small["sets"](2)
    with pytest.raises(ParameterError):
        solve_fixed(small["op"], X, Y, np.ones(len(Y) + 1))


def test_infsup_monotone_in_test_space(small):
    op = small["op"]
    X, _ = small["sets"](3)
    s0 = estimate_infsup(op, X, X.with_time_basis(small["by"], 0))
    s1 = estimate_infsup(op, X, X.with_time_basis(small["by"], 1))
    assert s1 >= s0 - 1e-12 and s0 > 0


def test_errors_decrease_with_level(small):
    op, pb = small["op"], small["problem"]
    sols = []
    for k in (2, 3, 4):
        X, Y = small["sets"](k)
        sols.append((X, solve_fixed(op, X, Y, assemble_rhs(pb, Y, op)).coefficients))
    Xf, uf = sols[-1]
    d = [(uf - u).norm() for _, u in sols[:-1]]
    assert d[0] > d[1] > 0


@pytest.fixture(scope="module")
def adaptive_setup(small):
    op, pb = small["op"], small["problem"]
    X, Y = small["sets"](4)
    cop = CompressedOperator(op, X, Y)
    f = assemble_rhs(pb, Y, op)
    ref = solve_fixed(op, X, Y, f, tol=1e-12).coefficients
    return cop, normal_rhs(cop, f), ref, estimate_infsup(op, X, Y)


def test_adaptive_certified(adaptive_setup):
    cop, prov, ref, sigma = adaptive_setup
    rep = solve_adaptive(cop, prov, 1e-2, AdaptiveParams(sigma_min=sigma, audit_every=5),
                         reference=ref, checkpoints=(1e-1,))
    err = (rep.coefficients - ref).norm()
    assert rep.residual_bound <= 1e-2 * (1 + 1e-12)
    assert err <= rep.residual_bound
    assert 1e-1 in rep.info["snapshots"]
    assert rep.info["snapshots"][1e-1]["error"] <= 1e-1
    ok, worst, lim = contraction_ok(rep)
    assert ok, (worst, lim)
    assert rep.info["audits"] and all(err <= c * (1 + 1e-9) + 1e-14 for c, err in rep.info["audits"])
    assert rep.work_history == sorted(rep.work_history)


def test_adaptive_zero_rhs(adaptive_setup):
    cop, prov, _, sigma = adaptive_setup
    zero = type(prov)(SparseCoeffVector.zeros())
    rep = solve_adaptive(cop, zero, 1e-3, AdaptiveParams(sigma_min=sigma))
    assert len(rep.coefficients) == 0 and rep.iterations == 1


def test_adaptive_bad_damping(adaptive_setup):
    cop, prov, _, sigma = adaptive_setup
    with pytest.raises(ParameterError, match="damping"):
        solve_adaptive(cop, prov, 1e-3, AdaptiveParams(sigma_min=sigma, omega=3 / cop.norm() ** 2))


def test_adaptive_step_limit(adaptive_setup):
    cop, prov, _, sigma = adaptive_setup
    with pytest.raises(DivergenceError) as info:
        solve_adaptive(cop, prov, 1e-6, AdaptiveParams(sigma_min=sigma, max_steps=3))
    assert info.value.history is not None


def _hat(a, b):
    return PiecewisePoly.from_nodal([a, (a + b) / 2, b], [0.0, 1.0, 0.0])


def test_halfline_coercivity_positive():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        r = verify_coercivity_halfline([_hat(0.0, 1.0)], [np.pi ** 2])
        r2 = verify_coercivity_halfline([_hat(0.0, 1.0)], [np.pi ** 2], window_factor=16.0)
    assert r > 0
    assert abs(r2 - r) <= 0.2 * r


def test_halfline_coercivity_rejects_zero():
    with pytest.raises(ParameterError):
        verify_coercivity_halfline([PiecewisePoly.constant(0.0, 1.0) * 0.0], [1.0])
