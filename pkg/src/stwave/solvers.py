"""Fixed Petrov-Galerkin solves and the adaptive Richardson iteration."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import frac_calc
from .assembly import BlockKron
from .compressive import apply_normal
from .errors import DivergenceError, ParameterError, SingularSectionError
from .tensor_index import SparseCoeffVector, coarsen_to


@dataclass
class SolveReport:
    coefficients: SparseCoeffVector
    residual_bound: float
    iterations: int
    support_history: list = field(default_factory=list)
    work_history: list = field(default_factory=list)
    bound_history: list = field(default_factory=list)
    eta_history: list = field(default_factory=list)
    error_history: list = field(default_factory=list)
    x_error: float | None = None
    info: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# fixed sections

def smallest_singular_value(S):
    S = np.atleast_2d(np.asarray(S, float))
    if S.size == 0:
        return 0.0
    return float(np.linalg.svd(S, compute_uv=False)[-1])


def estimate_infsup(op, trial, test, dense_limit=2000):
    """Smallest singular value of the scaled section ``test x trial``.

    Dense SVD for small sections, otherwise the lowest eigenvalue of the
    matrix-free normal operator.
    """
    if len(trial) == 0:
        raise ParameterError("empty trial set")
    if len(trial) <= dense_limit:
        return smallest_singular_value(op.section(test, trial))
    B = op.block(test, trial)
    N = spla.LinearOperator((len(trial),) * 2, matvec=lambda x: B.rmatvec(B.matvec(x)),
                            dtype=float)
    v0 = np.ones(len(trial)) / math.sqrt(len(trial))
    ev = spla.eigsh(N, k=1, which="SA", tol=1e-8, v0=v0, maxiter=200_000,
                    return_eigenvectors=False)
    return float(math.sqrt(max(ev[0], 0.0)))


def _normal_diagonal(op, trial, test):
    """diag(B^T B) of the scaled section, without forming B."""
    wr, wc = op.weights(test, "Y"), op.weights(trial, "X")
    if op.n == 1 and trial.caps is not None and test.caps is not None:
        D, M, G, A = op.D.data, op.M.data, op.G.data, op.A.data
        terms = [(D * D, sp.csr_matrix(M.multiply(M))), (2 * D * G, sp.csr_matrix(M.multiply(A))),
                 (G * G, sp.csr_matrix(A.multiply(A)))]
        sq = BlockKron(test, trial, terms, wr ** 2, wc ** 2)
        return sq.rmatvec(np.ones(len(test)))
    S = op.section(test, trial)
    return (S * S).sum(0)


def solve_fixed(op, trial, test, rhs, tol=1e-10, maxiter=None, check_rank="auto",
                dense_limit=2000):
    """Least squares Petrov-Galerkin solve on the section ``test x trial``.

    Preconditioned CG on the normal equations of the section, with the
    diagonal of the normal matrix as preconditioner.  ``rhs`` is the scaled
    load vector on ``test`` (SparseCoeffVector or dense array).
    """
    if len(trial) == 0:
        raise ParameterError("empty trial set")
    if len(test) < len(trial):
        raise SingularSectionError("fewer test than trial functions", 0.0)
    b = rhs.to_dense(test) if isinstance(rhs, SparseCoeffVector) else np.asarray(rhs, float)
    if b.size != len(test):
        raise ParameterError("right-hand side does not match the test set")
    small = len(trial) <= dense_limit
    if check_rank is True or (check_rank == "auto" and small):
        S = op.section(test, trial)
        s = np.linalg.svd(S, compute_uv=False)
        if s[-1] <= 1e-12 * max(s[0], 1e-300):
            raise SingularSectionError(f"section is rank deficient (sigma_min = {s[-1]:.3e})",
                                       float(s[-1]))
        B = spla.aslinearoperator(S)
    else:
        B = op.block(test, trial)
    d = _normal_diagonal(op, trial, test)
    if np.any(d <= 0):
        raise SingularSectionError("zero column in the section", 0.0)
    N = spla.LinearOperator((len(trial),) * 2, matvec=lambda x: B.rmatvec(B.matvec(x)),
                            dtype=float)
    P = spla.LinearOperator((len(trial),) * 2, matvec=lambda x: x / d, dtype=float)
    g = B.rmatvec(b)
    count = [0]

    def cb(_):
        count[0] += 1

    x, info = spla.cg(N, g, rtol=tol, atol=0.0, maxiter=maxiter or 20 * len(trial), M=P,
                      callback=cb)
    res = float(np.linalg.norm(g - N.matvec(x)))
    if info != 0:
        raise SingularSectionError(
            f"CG on the section normal equations did not converge (residual {res:.3e})",
            float("nan"))
    return SolveReport(SparseCoeffVector.from_dense(trial, x), res, count[0],
                       info={"normal_rhs_norm": float(np.linalg.norm(g)),
                             "ls_residual": float(np.linalg.norm(b - B.matvec(x)))})


# ---------------------------------------------------------------------------
# adaptive Richardson iteration on the normal equations

@dataclass
class AdaptiveParams:
    """Configuration of :func:`solve_adaptive`.

    ``eta0`` starts the geometric tolerance schedule ``eta_i = eta0 2^-i``
    (default: the trivial bound of the zero iterate).  An outer iteration
    ends when the certified error bound drops below ``eta_i``; every ``K``
    outer iterations the iterate is coarsened to ``theta_c`` times the
    current bound.  ``audit_every > 0`` compares every such apply call of
    the normal operator with the exact product.
    """

    omega: float | None = None
    eta0: float | None = None
    theta_c: float = 0.5
    K: int = 5
    max_outer: int = 80
    max_steps: int = 200_000
    sigma_min: float | None = None
    safety: float = 0.9
    audit_every: int = 0


def solve_adaptive(cop, provider, eps_target, params=None, reference=None, checkpoints=()):
    """Damped Richardson iteration ``u <- u + omega (RHS - APPLY_{B^T B} u)``.

    ``provider`` yields truncations of ``B^T f``.  The certified bound of an
    iterate is ``(||r|| + tol) / (safety sigma_min)^2`` with ``r`` the
    computed normal residual and ``tol`` its evaluation accuracy.  Once the
    bound is below ``eps / (1 + theta_c)`` the iterate is coarsened to
    ``theta_c`` times the bound and returned, so its bound is at most eps.

    ``checkpoints`` (tolerances larger than ``eps_target``) return the same
    kind of coarsened snapshot whenever the running bound first passes them;
    they are stored in ``report.info["snapshots"]``.
    """
    p = params or AdaptiveParams()
    if not eps_target > 0:
        raise ParameterError("eps_target must be positive")
    if not 0 < p.theta_c < 1:
        raise ParameterError("theta_c must lie in (0, 1)")
    nB = cop.norm_upper()
    omega = p.omega if p.omega is not None else 1.0 / nB ** 2
    if not 0 < omega < 2.0 / nB ** 2:
        raise ParameterError(f"damping {omega:g} outside (0, 2/||B^T B||) = (0, {2 / nB ** 2:g})")
    sigma = p.sigma_min if p.sigma_min is not None else estimate_infsup(cop.op, cop.X, cop.Y)
    s2 = (p.safety * sigma) ** 2
    X = cop.X
    ref = None if reference is None else (
        reference.to_dense(X) if isinstance(reference, SparseCoeffVector) else
        np.asarray(reference, float))
    rep = SolveReport(SparseCoeffVector.zeros(X.keys.shape[1]), 0.0, 0,
                      info={"omega": omega, "sigma_min": sigma, "snapshots": {},
                            "ratios": [], "coarsenings": [], "audits": []})
    if provider.norm == 0:
        rep.iterations = 1
        for hist, v in ((rep.support_history, 0), (rep.work_history, 0),
                        (rep.bound_history, 0.0), (rep.eta_history, 0.0),
                        (rep.error_history, 0.0 if ref is None else float(np.linalg.norm(ref)))):
            hist.append(v)
        return rep
    goal = eps_target / (1 + p.theta_c)
    eta0 = p.eta0 if p.eta0 is not None else provider.norm / s2
    pending = sorted((c for c in checkpoints if c > eps_target), reverse=True)
    u = np.zeros(len(X))
    outer, eta, steps = 0, eta0, 0
    work0 = cop.work.entries
    prev = None
    predicted = 1 - omega * sigma ** 2

    def snapshot(vec, bound):
        v = SparseCoeffVector.from_dense(X, vec)
        c = coarsen_to(v, p.theta_c * bound)
        err = None if ref is None else float(np.linalg.norm(c.to_dense(X) - ref))
        return c, (1 + p.theta_c) * bound, err

    while True:
        tol = 0.25 * s2 * min(eta, goal)
        F = provider(tol / 2).to_dense(X)
        A = apply_normal(cop, SparseCoeffVector.from_dense(X, u), tol / 2)
        r = F - A.output.to_dense(X)
        if p.audit_every and len(rep.bound_history) % p.audit_every == 0:
            exact = cop.exact.rmatvec(cop.exact.matvec(u))
            rep.info["audits"].append(
                (A.certified, float(np.linalg.norm(exact - A.output.to_dense(X)))))
        rn = float(np.linalg.norm(r))
        bound = (rn + tol) / s2
        rep.support_history.append(int(np.count_nonzero(u)))
        rep.work_history.append(int(cop.work.entries - work0))
        rep.bound_history.append(bound)
        rep.eta_history.append(eta)
        rep.error_history.append(None if ref is None else float(np.linalg.norm(u - ref)))
        if prev is not None:
            rep.info["ratios"].append(rn / prev)
        prev = rn
        while pending and bound <= pending[0] / (1 + p.theta_c):
            c, cb, err = snapshot(u, bound)
            rep.info["snapshots"][pending.pop(0)] = {
                "coefficients": c, "bound": cb, "error": err, "support": len(c),
                "iteration": steps, "work": int(cop.work.entries - work0)}
        if bound <= goal:
            break
        if bound <= eta:
            outer += 1
            eta = eta0 * 2.0 ** (-outer)
            if outer > p.max_outer:
                raise DivergenceError("outer iteration limit reached", rep)
            if outer % p.K == 0:
                v = coarsen_to(SparseCoeffVector.from_dense(X, u), p.theta_c * bound)
                u = v.to_dense(X)
                rep.info["coarsenings"].append((steps, len(v)))
                prev = None
                continue
        u = u + omega * r
        steps += 1
        if steps > p.max_steps or not np.isfinite(rn):
            raise DivergenceError(f"no convergence after {steps} steps (bound {bound:.3e})", rep)
    c, cb, err = snapshot(u, bound)
    rep.coefficients = c
    rep.residual_bound = cb
    rep.iterations = steps
    rep.x_error = err
    rep.info.update(predicted_ratio=predicted, outer=outer)
    return rep


def contraction_ok(report, slack=0.1):
    """Observed residual ratios versus ``1 - omega sigma_min^2 + slack``."""
    lim = report.info["predicted_ratio"] + slack
    ratios = np.asarray(report.info["ratios"])
    return bool(ratios.size == 0 or ratios.max() <= lim), float(ratios.max(initial=0.0)), lim


# ---------------------------------------------------------------------------
# coercivity on the half line

def _even_extension(t, v):
    """Samples of the even reflection of v restricted to t >= 0 on the same
    symmetric grid."""
    pos = t >= 0
    out = np.where(pos, v, 0.0)
    # grid is symmetric about 0 by construction
    return np.where(pos, out, out[::-1])


def verify_coercivity_halfline(ws, mus, alpha=0.125, window_factor=8.0, n=1 << 14, pad=4):
    """Measured ``B(w, v) / (||v||_Y ||w||_X)`` for ``v = R H^{-alpha} E_0 w``.

    ``ws`` are temporal coefficient functions (PiecewisePoly on [0, L]) of
    the spatial eigenmodes with V-eigenvalues ``mus``.  All norms are
    realised through Fourier multipliers on the symmetric window
    ``[-W, W]``, ``W = window_factor * max support end``:

    * ``||w||_X^2 = sum_k ||D^{1/2}_+ E_0 w_k||^2 + ||w_k||^2 + mu_k ||w_k||^2``
    * ``||v||_Y^2 = sum_k ||v_k||^2 + ||D^{1/2} e v_k||^2 / 2 + mu_k ||v_k||^2``
      with ``e v`` the even extension of v from the half line.
    """
    if not 0 < alpha <= 0.25:
        raise ParameterError("alpha must lie in (0, 1/4]")
    ws = [frac_calc._as_pp(w) for w in ws]
    if all(w.max_abs() == 0 for w in ws):
        raise ParameterError("w = 0 is excluded")
    if any(w.b[0] < -1e-14 for w in ws):
        raise ParameterError("trial functions live on the half line")
    W = window_factor * max(float(w.b[-1]) for w in ws)
    t = np.linspace(-W, W, n + 1)
    half = t >= 0
    bil = xn = yn = 0.0
    warn = None
    for w, mu in zip(ws, mus):
        inside = (t >= w.b[0]) & (t <= w.b[-1])
        g = np.where(inside, w(np.clip(t, w.b[0], w.b[-1])), 0.0)
        dg = np.where(inside, w.derivative()(np.clip(t, w.b[0], w.b[-1])), 0.0)
        G = frac_calc.GridFunction(t, g)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            v = frac_calc.hilbert_alpha(G, -alpha, pad).values
        if caught:
            warn = warn or str(caught[0].message)
        vr = np.where(half, v, 0.0)
        bil += np.trapezoid((dg * vr + mu * g * vr)[half], t[half])
        dp = frac_calc.d_half_fourier(G, +1, pad).values
        l2w = np.trapezoid(g ** 2, t)
        xn += np.trapezoid(dp ** 2, t) + (1 + mu) * l2w
        ev = frac_calc.GridFunction(t, _even_extension(t, v))
        de = frac_calc.d_half_fourier(ev, +1, pad).values
        l2v = np.trapezoid(vr[half] ** 2, t[half])
        yn += (1 + mu) * l2v + 0.5 * np.trapezoid(de ** 2, t)
    if warn:
        warnings.warn(warn, RuntimeWarning, stacklevel=2)
    return float(bil / math.sqrt(xn * yn))
