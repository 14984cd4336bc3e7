"""Numerical oracles for the fractional calculus identities.

Every check returns ``(name, measured, tolerance, quadrature_limited)``.
The oracles avoid the code path under test where possible: nested
fractional integrals go through a substitution that removes the kernel
singularity, pairings use graded Gauss rules, and the real-line Gagliardo
integral of a zero extension is taken directly over the whole line.
"""
from __future__ import annotations

import math
import warnings

import numpy as np

from . import frac_calc as fc
from .frac_calc import PiecewisePoly, leggauss


def random_pp(rng, lo=0.0, hi=4.0, pieces=4, degree=3, continuous=False, vanish=()):
    """Random piecewise polynomial on a jittered grid of [lo, hi]."""
    b = np.linspace(lo, hi, pieces + 1)
    b[1:-1] += rng.uniform(-0.3, 0.3, pieces - 1) * (hi - lo) / pieces
    if not continuous:
        return PiecewisePoly(b, rng.standard_normal((pieces, degree + 1)))
    y = rng.standard_normal(pieces + 1)
    if "left" in vanish:
        y[0] = 0.0
    if "right" in vanish:
        y[-1] = 0.0
    # continuous: piecewise linear plus local bubbles
    base = PiecewisePoly.from_nodal(b, y)
    c = np.zeros((pieces, 3))
    c[:, :2] = base.c
    bub = rng.standard_normal(pieces)
    h = np.diff(b)
    # bub * (s - a)(b - s) = bub * (h y - y^2) in the local variable y
    c[:, 1] += bub * h
    c[:, 2] -= bub
    return PiecewisePoly(b, c)


def tent(a=0.0, peak=1.0, b=2.0):
    return PiecewisePoly.from_nodal([a, peak, b], [0.0, 1.0, 0.0])


def _cell_rule(cells, n):
    x, w = leggauss(n)
    a, b = cells[:-1, None], cells[1:, None]
    return ((a + b) / 2 + (b - a) / 2 * x).ravel(), ((b - a) / 2 * w).ravel()


def _cumulative_integral(pp, t, n=8):
    """int_0^t pp by Gauss rules on the breakpoint cells (exact for cubics)."""
    t = np.atleast_1d(t)
    out = np.empty(t.size)
    for i, ti in enumerate(t):
        pts = np.union1d(pp.b[pp.b < ti], [min(pp.b[0], ti), ti])
        pts = pts[pts <= ti]
        if pts.size < 2:
            out[i] = 0.0
            continue
        x, w = _cell_rule(pts, n)
        out[i] = np.sum(w * pp(x))
    return out


def nested_half_integral(pp, t, n=40):
    """(I^{1/2}_+ I^{1/2}_+ pp)(t) with the outer integral substituted
    s = t - r^2, which turns (t - s)^{-1/2} ds into 2 dr."""
    t = np.atleast_1d(t)
    out = np.empty(t.size)
    for i, ti in enumerate(t):
        brk = ti - pp.b[(pp.b < ti) & (pp.b > 0)]
        r_end = math.sqrt(ti - max(float(pp.b[0]), 0.0))
        rs = np.union1d([0.0, r_end], np.sqrt(brk[brk > 0]))
        rs = rs[rs <= r_end]
        r, q = fc.endpoint_rule(rs, n)
        inner = fc.rl_plus(pp, 0.5, ti - r ** 2)
        out[i] = 2.0 / math.sqrt(math.pi) * np.sum(q * inner)
    return out


def check_semigroup(rng, samples=6):
    err = 0.0
    for _ in range(samples):
        phi = random_pp(rng, 0.0, 4.0)
        t = rng.uniform(0.05, 4.5, 5)
        lhs = nested_half_integral(phi, t)
        rhs = _cumulative_integral(phi, t)
        err = max(err, float(np.max(np.abs(lhs - rhs)) / max(1.0, np.max(np.abs(rhs)))))
    return "semigroup_I12_I12", err, 1e-8, True


def _pair_rule(pps, n=24):
    pts = np.unique(np.concatenate([p.b for p in pps]))
    hmin = float(min(np.min(p.widths) for p in pps))
    cells = fc._graded_cells(pts, hmin / 4)
    return fc.endpoint_rule(cells, n)


def check_integration_by_parts(rng, samples=6):
    err = 0.0
    for _ in range(samples):
        psi = random_pp(rng, 0.0, 3.0)
        phi = random_pp(rng, 0.5, 4.0)
        t, q = _pair_rule([psi, phi])
        lhs = np.sum(q * fc.rl_plus(psi, 0.5, t) * phi(t))
        rhs = np.sum(q * psi(t) * fc.rl_minus(phi, 0.5, t))
        err = max(err, abs(lhs - rhs) / (psi.norm_l2() * phi.norm_l2()))
    return "integration_by_parts", float(err), 1e-8, True


def _h1_norm(pp):
    d = pp.derivative()
    return math.sqrt(pp.inner(pp) + d.inner(d))


def check_pairing_identity(rng, samples=6):
    err = 0.0
    for _ in range(samples):
        w = random_pp(rng, 0.0, 3.0, continuous=True, vanish=("left",))
        v = random_pp(rng, 0.5, 4.0, continuous=True, vanish=("left", "right"))
        lhs = fc.fractional_pairing(w, v)
        rhs = -(w * v.derivative()).integral()
        err = max(err, abs(lhs - rhs) / (_h1_norm(w) * _h1_norm(v)))
    return "fractional_pairing_identity", float(err), 1e-6, True


def zero_extension_ratio(w):
    """||E_0 w||^2_{H^{1/2}(R)} / ||w||^2_{H^{1/2}_00}."""
    rep = fc.norm_h12(w, weighted=True)
    full = w.inner(w) + fc.gagliardo_sq(w, "interval", (-np.inf, np.inf))
    return full / rep.total_h1200_sq


def check_zero_extension(rng, samples=4):
    ws = [tent()] + [random_pp(rng, 0.0, 3.0, continuous=True, vanish=("left", "right"))
                     for _ in range(samples)]
    r = [zero_extension_ratio(w) for w in ws]
    return [("zero_extension_lower", float(min(r)), 0.95, "ge"),
            ("zero_extension_upper", float(max(r)), 2.05, "le")]


def check_commutation(rng, samples=4):
    err = 0.0
    for _ in range(samples):
        w = random_pp(rng, 0.0, 2.0, continuous=True, vanish=("left", "right"))
        t = rng.uniform(0.05, 2.5, 6)
        a = fc.frac_deriv_plus(fc.extend_zero(w, 4.0), t)
        b = fc.frac_deriv_plus(w, t)
        err = max(err, float(np.max(np.abs(a - b))))
        v = random_pp(rng, -1.0, 2.0, continuous=True, vanish=("left", "right"))
        t = rng.uniform(0.05, 2.5, 6)
        a = fc.frac_deriv_minus(fc.restrict_positive(v), t)
        b = fc.frac_deriv_minus(v, t)
        err = max(err, float(np.max(np.abs(a - b))))
    return "commutation_E0_R", err, 1e-8, True


def check_closed_forms():
    """Monomial values of the four one-sided operators."""
    one = PiecewisePoly.constant(0.0, 2.0)
    unit = PiecewisePoly.constant(0.0, 1.0)
    ramp = PiecewisePoly.from_nodal([0.0, 1.0, 2.0], [0.0, 1.0, 0.0])
    sp = math.sqrt(math.pi)
    errs = [abs(fc.frac_integral_plus(one, 0.5, 1.0) - 2 / sp),
            abs(fc.frac_integral_minus(unit, 0.5, 0.5) - math.sqrt(2) / sp),
            abs(fc.frac_deriv_plus(ramp, 0.25) - 1 / sp)]
    return "closed_form_values", float(max(errs)), 1e-12, False


def check_minus_finite_difference():
    v = tent()
    h = 1e-5
    t = np.array([0.3, 0.7, 1.3, 1.7])
    fd = -(fc.frac_integral_minus(v, 0.5, t + h) - fc.frac_integral_minus(v, 0.5, t - h)) / (2 * h)
    return "minus_derivative_fd", float(np.max(np.abs(fd - fc.frac_deriv_minus(v, t)))), 1e-6, True


def _smooth_bump(t, c=0.0, r=1.0):
    x = (t - c) / r
    out = np.zeros_like(x)
    m = np.abs(x) < 1
    out[m] = np.exp(-1.0 / (1 - x[m] ** 2))
    return out


def _grid(L=16.0, n=1 << 14):
    return np.linspace(-L, L, n, endpoint=False)


def check_norm_characterization():
    t = _grid()
    g = fc.GridFunction(t, _smooth_bump(t, 0.0, 2.0))
    p = np.trapezoid(fc.d_half_fourier(g, +1).values ** 2, t)
    m = np.trapezoid(fc.d_half_fourier(g, -1).values ** 2, t)
    return "dplus_dminus_norms", float(abs(p - m) / p), 1e-4, True


def gagliardo_bracket():
    """Gagliardo seminorm over ||D^{1/2}_+ u||^2 for a smooth bump, by
    both routes; the value is reported, not asserted."""
    t = _grid()
    g = fc.GridFunction(t, _smooth_bump(t, 0.0, 2.0))
    p = np.trapezoid(fc.d_half_fourier(g, +1).values ** 2, t)
    x = np.linspace(-2.0, 2.0, 257)
    pp = fc.PiecewisePoly.from_nodal(x, _smooth_bump(x, 0.0, 2.0))
    return fc.gagliardo_sq(pp, "interval", (-np.inf, np.inf)) / p


def check_hilbert_sign():
    """D^{1/2}_- H u = -D^{1/2}_+ u in the core of the window.

    u is the second derivative of a bump, so H u decays like t^-3 and the
    window truncation stays below the tolerance.
    """
    t = _grid(64.0, 1 << 16)
    b = _smooth_bump(t, 1.0, 2.0)
    g = fc.GridFunction(t, np.gradient(np.gradient(b, t), t))
    lhs = fc.d_half_fourier(fc.hilbert(g, pad=8), -1).values
    rhs = -fc.d_half_fourier(g, +1).values
    core = np.abs(t - 1.0) < 4
    return ("hilbert_sign_identity", float(np.max(np.abs(lhs - rhs)[core]) / np.max(np.abs(rhs))),
            1e-8, True)


def check_hilbert_cosine():
    """H of a slowly windowed cosine is the windowed sine in the core."""
    t = _grid(200.0, 1 << 16)
    win = _smooth_bump(t, 0.0, 150.0) / math.exp(-1.0)
    g = fc.GridFunction(t, np.cos(t) * win)
    Hg = fc.hilbert(g).values
    core = np.abs(t) < 20
    return "hilbert_cosine", float(np.max(np.abs(Hg[core] - np.sin(t[core]) * win[core]))), 1e-3, True


def check_hilbert_contraction(rng, samples=4):
    t = _grid()
    worst = 0.0
    for _ in range(samples):
        c = rng.uniform(-3, 3, 3)
        r = rng.uniform(0.5, 2.0, 3)
        u = sum(rng.standard_normal() * _smooth_bump(t, ci, ri) for ci, ri in zip(c, r))
        g = fc.GridFunction(t, u)
        worst = max(worst, math.sqrt(fc.hilbert(g).l2_sq() / g.l2_sq()))
    return "hilbert_contraction", float(worst), 1.0 + 1e-10, False


def _coercivity_sample(rng, basis, count=3):
    ws, mus = [], []
    for k in range(count):
        lev = int(rng.integers(0, 3))
        pos = int(basis.offsets[lev] + rng.integers(0, basis.count(lev)))
        w = basis.eval(pos)
        if w.b[-1] >= basis.L - 1e-12:
            w = basis.eval(int(basis.offsets[lev]))
        ws.append(w * float(rng.standard_normal()))
        mus.append(((k + 1) * math.pi) ** 2)
    return ws, mus


def check_coercivity(rng, basis, samples=3):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        vals = []
        for _ in range(samples):
            ws, mus = _coercivity_sample(rng, basis)
            vals.append(fc.coercivity_over_r(ws, mus)[0])
    return "coercivity_real_line", float(min(vals)), 0.0, "gt"
