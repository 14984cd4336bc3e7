"""Experiment driver behind the ``stwave`` command line.

Each ``run_*`` function writes one or more CSV files into the output
directory and returns a :class:`RunResult` listing the asserted criteria.
All randomness flows from the configured seed; worker threads only ever
run independent tasks whose results are collected in submission order, so
the CSV bytes do not depend on ``threads``.
"""
from __future__ import annotations

import hashlib
import math
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from functools import cached_property

import numpy as np
from threadpoolctl import threadpool_limits

from . import checks, compressive, solvers
from .assembly import (TensorOperator, assemble_rhs, assemble_spatial, heat_problem,
                       random_pairs, verify_D_dual_route)
from .errors import ParameterError
from .frac_calc import norm_h12
from .tensor_index import SparseCoeffVector, build_sparse_set, rule_b_time_weight
from .wavelets import build_basis, dual_project

CHECKS = ("semigroup", "integration_by_parts", "pairing", "zero_extension", "commutation",
          "closed_forms", "minus_fd", "norm_characterization", "hilbert_sign",
          "hilbert_cosine", "hilbert_contraction", "coercivity", "coercivity_halfline",
          "gagliardo_bracket", "window_tail", "d_dual_route")


def _floats(text):
    return tuple(float(x) for x in text.replace(";", ",").split(",") if x.strip())


@dataclass
class ExperimentConfig:
    problem: str = "heat"
    n: int = 1
    L_t: float = 8.0
    d_t: int = 2
    d_x: int = 2
    m: int = 1
    variant: str = "stable"
    weights: str = "exact"
    k_min: int = 2
    k_max: int = 7
    stab_k_max: int = 6
    oracle_t: int = 9
    oracle_x: int = 12
    pairs: int = 200
    pair_level: int = 6
    compress_k: int = 6
    apply_eps: tuple = (1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
    apply_vectors: int = 3
    universe_k: int = 8
    eps_grid: tuple = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)
    theta_c: float = 0.5
    K: int = 5
    audit_every: int = 25
    checks: str = "all"
    quad_tol: float | None = None
    seed: int = 0
    out: str = "results"
    threads: int = 1

    # keys that never influence CSV content
    _volatile = ("out", "threads")

    def __post_init__(self):
        if self.problem != "heat":
            raise ParameterError(f"unknown problem {self.problem!r} (available: heat)")
        if (self.d_t, self.d_x, self.m) != (2, 2, 1):
            raise ParameterError("only the (2, 2) piecewise linear family with m = 1 is built")
        if self.n != 1:
            raise ParameterError("the experiments run in one space dimension")
        if not 1 <= self.k_min <= self.k_max:
            raise ParameterError("need 1 <= k_min <= k_max")
        if self.threads < 1:
            raise ParameterError("threads must be positive")
        if self.weights not in ("exact", "dyadic"):
            raise ParameterError("weights must be 'exact' or 'dyadic'")

    @classmethod
    def from_text(cls, text, **overrides):
        kinds = {f.name: f for f in fields(cls)}
        vals = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParameterError(f"config line {lineno}: expected key=value")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in kinds or key.startswith("_"):
                raise ParameterError(f"config line {lineno}: unknown key {key!r}")
            vals[key] = val
        vals.update({k: v for k, v in overrides.items() if v is not None})
        out = {}
        defaults = cls()
        for key, val in vals.items():
            ref = getattr(defaults, key)
            if not isinstance(val, str):
                out[key] = val
            elif isinstance(ref, tuple):
                out[key] = _floats(val)
            elif key == "quad_tol":
                out[key] = float(val) if val else None
            elif isinstance(ref, bool):
                out[key] = val.lower() in ("1", "true", "yes")
            elif isinstance(ref, int):
                out[key] = int(val)
            elif isinstance(ref, float):
                out[key] = float(val)
            else:
                out[key] = val
        return cls(**out)

    @classmethod
    def from_file(cls, path, **overrides):
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read(), **overrides)

    def canonical(self):
        parts = []
        for f in fields(self):
            if f.name in self._volatile or f.name.startswith("_"):
                continue
            parts.append(f"{f.name}={getattr(self, f.name)!r}")
        return "\n".join(parts)

    def hash(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def rng(self, stream):
        """Independent generator per named stream."""
        tag = int.from_bytes(hashlib.sha256(stream.encode()).digest()[:4], "little")
        return np.random.default_rng([self.seed, tag])


@dataclass
class Criterion:
    name: str
    measured: float
    limit: float
    passed: bool


@dataclass
class RunResult:
    name: str
    criteria: list = field(default_factory=list)
    files: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(c.passed for c in self.criteria)


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        if math.isnan(x):
            return "nan"
        return format(float(x), ".10g")
    return str(x)


def write_csv(path, cfg, header, rows):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# config_hash={cfg.hash()}\n")
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(x) for x in r) + "\n")
    return path


def fit_slope(x, y):
    """Least squares slope of log y against log x."""
    x, y = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    return float(np.polyfit(x, y, 1)[0])


def _parallel(cfg, tasks):
    """Run zero-argument callables, results in submission order."""
    if cfg.threads == 1 or len(tasks) < 2:
        return [t() for t in tasks]
    with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
        futs = [ex.submit(t) for t in tasks]
        return [f.result() for f in futs]


# ---------------------------------------------------------------------------
# shared discretisation

class Context:
    """Bases, operators and the exact-solution oracle for one config."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.problem = heat_problem(cfg.n, cfg.L_t)
        wt = rule_b_time_weight(cfg.d_t, cfg.d_x, cfg.m)
        ks = [cfg.k_max, cfg.stab_k_max, cfg.universe_k, cfg.compress_k]
        self.t_cap = max(int(math.floor(k / wt + 1e-12)) for k in ks)
        self.x_cap = max(ks)
        self.Jt = max(cfg.oracle_t, self.t_cap + 1)
        self.Jx = max(cfg.oracle_x, self.x_cap)
        self.bt = build_basis("temporal_trial", L=cfg.L_t, max_level=self.Jt, variant=cfg.variant)
        self.by = build_basis("temporal_test", L=cfg.L_t, max_level=self.Jt, variant=cfg.variant)
        self.bx = build_basis("spatial_dirichlet", L=1.0, max_level=self.Jx, variant=cfg.variant)
        self._ops = {}

    def operator(self, weights=None):
        weights = weights or self.cfg.weights
        if weights not in self._ops:
            self._ops[weights] = TensorOperator(self.bt, self.by, self.bx, self.problem, self.cfg.m,
                                                weights, self.t_cap, self.x_cap)
        return self._ops[weights]

    def sets(self, k):
        X = build_sparse_set(k, "B", self.cfg.d_t, self.cfg.d_x, self.cfg.m, self.cfg.n,
                             time_basis=self.bt, space_bases=self.bx)
        return X, X.with_time_basis(self.by, 1)

    @cached_property
    def oracle(self):
        """Scaled coefficients of the exact solution, in separable form.

        ``c*[(l, m)] = w_X(l, m) g_l s_m`` with ``g``/``s`` the temporal and
        spatial basis coefficients of the factors of the exact solution.  The
        total ``||c*||^2 = sum (h_l + a_m) g_l^2 s_m^2`` splits into products of
        one-dimensional sums.
        """
        (gt, gx), = self.problem.u_terms
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            g, _ = dual_project(self.bt, self.Jt, gt)
            s, _ = dual_project(self.bx, self.Jx, gx[0])
        h = np.array([norm_h12(self.bt.eval(i), weighted=True, domain="interval",
                               span=(0.0, self.bt.L)).total_h1200_sq
                      for i in range(self.bt.n_total())])
        _, A = assemble_spatial(self.problem, self.bx)
        a = A.data.diagonal()
        total = float(np.sum(h * g ** 2) * np.sum(s ** 2) + np.sum(g ** 2) * np.sum(a * s ** 2))
        return {"g": g, "s": s, "h": h, "a": a, "total": total}

    def exact_on(self, X):
        o = self.oracle
        w = self.operator().weights(X, "X")
        return w * o["g"][X.keys[:, 0]] * o["s"][X.keys[:, 1]]


# ---------------------------------------------------------------------------
# verify-calculus

def _check_tasks(cfg, ctx):
    sel = CHECKS if cfg.checks.strip() == "all" else tuple(
        c.strip() for c in cfg.checks.split(",") if c.strip())
    unknown = [c for c in sel if c not in CHECKS]
    if unknown:
        raise ParameterError(f"unknown checks {unknown}; available: {', '.join(CHECKS)}")
    r = cfg.rng

    def coercivity_half():
        rng = r("coercivity_halfline")
        vals, drift = [], 0.0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            for _ in range(3):
                ws, mus = checks._coercivity_sample(rng, ctx.bt)
                a = solvers.verify_coercivity_halfline(ws, mus)
                b = solvers.verify_coercivity_halfline(ws, mus, window_factor=16.0, n=1 << 15)
                vals.append(a)
                drift = max(drift, abs(b / a - 1))
        return [("coercivity_halfline", min(vals), 0.0, "gt"),
                ("coercivity_halfline_window_drift", drift, 0.2, "le")]

    def d_dual():
        op = ctx.operator()
        pairs = random_pairs(op.D, cfg.pairs, r("d_pairs"), cfg.pair_level)
        err, _ = verify_D_dual_route(op.D, pairs)
        return [(f"D_dual_route_{len(pairs)}_pairs", err, 1e-6, "le")]

    def tail():
        (gt, gx), = ctx.problem.u_terms
        from scipy.integrate import quad
        m = quad(lambda t: gt(t) ** 2, cfg.L_t, np.inf)[0]
        return [("window_tail_mass", m, 1e-10, "recorded")]

    table = {
        "semigroup": lambda: [checks.check_semigroup(r("semigroup"))],
        "integration_by_parts": lambda: [checks.check_integration_by_parts(r("ibp"))],
        "pairing": lambda: [checks.check_pairing_identity(r("pairing"))],
        "zero_extension": lambda: checks.check_zero_extension(r("zero_extension")),
        "commutation": lambda: [checks.check_commutation(r("commutation"))],
        "closed_forms": lambda: [checks.check_closed_forms()],
        "minus_fd": lambda: [checks.check_minus_finite_difference()],
        "norm_characterization": lambda: [checks.check_norm_characterization()],
        "hilbert_sign": lambda: [checks.check_hilbert_sign()],
        "hilbert_cosine": lambda: [checks.check_hilbert_cosine()],
        "hilbert_contraction": lambda: [checks.check_hilbert_contraction(r("hilbert"))],
        "coercivity": lambda: [checks.check_coercivity(r("coercivity"), ctx.bt)],
        "coercivity_halfline": coercivity_half,
        "gagliardo_bracket": lambda: [("gagliardo_over_dplus_sq", checks.gagliardo_bracket(),
                                       4.0, "recorded")],
        "window_tail": tail,
        "d_dual_route": d_dual,
    }
    return sel, [table[c] for c in sel]


def _judge(measured, tol, mode):
    if mode == "recorded":
        return "recorded"
    if mode == "ge":
        return measured >= tol
    if mode == "gt":
        return measured > tol
    return measured <= tol


def run_verify_calculus(cfg, ctx=None, name="verify_calculus.csv"):
    ctx = ctx or Context(cfg)
    sel, tasks = _check_tasks(cfg, ctx)
    rows = []
    if not sel:
        warnings.warn("empty check list: nothing verified", RuntimeWarning, stacklevel=2)
    for out in _parallel(cfg, tasks):
        for check_name, measured, tol, mode in out:
            if mode is True and cfg.quad_tol is not None:
                tol = cfg.quad_tol
            mode = "le" if mode in (True, False) else mode
            rows.append((check_name, float(measured), float(tol), _judge(measured, tol, mode)))
    path = write_csv(os.path.join(cfg.out, name), cfg,
                     ("check_name", "measured", "tolerance", "pass"), rows)
    res = RunResult("verify-calculus", files=[path])
    for r in rows:
        if r[3] != "recorded":
            res.criteria.append(Criterion(r[0], r[1], r[2], bool(r[3])))
    return res


# ---------------------------------------------------------------------------
# rates and quasi-optimality

def run_rates(cfg, ctx=None):
    ctx = ctx or Context(cfg)
    op = ctx.operator()
    total = ctx.oracle["total"]
    rows, qrows = [], []
    for k in range(cfg.k_min, cfg.k_max + 1):
        X, Y = ctx.sets(k)
        f = assemble_rhs(ctx.problem, Y, op)
        rep = solvers.solve_fixed(op, X, Y, f, check_rank=False)
        c = rep.coefficients.to_dense(X)
        cs = ctx.exact_on(X)
        out_sq = max(total - float(np.sum(cs ** 2)), 0.0)
        err = math.sqrt(float(np.sum((c - cs) ** 2)) + out_sq)
        best = math.sqrt(out_sq)
        sig_min = solvers.estimate_infsup(op, X, Y)
        sig_max = compressive.top_singular_value(op.block(Y, X))
        orth = rep.residual_bound / max(rep.info["normal_rhs_norm"], 1e-300)
        rows.append([k, len(X), err, None])
        n_fit = rows[-3:]
        if len(n_fit) >= 2:
            rows[-1][3] = -fit_slope([r[1] for r in n_fit], [r[2] for r in n_fit])
        qrows.append((k, len(X), err, best, err / best if best > 0 else float("nan"),
                      sig_max / sig_min, orth))
    files = [write_csv(os.path.join(cfg.out, "rates.csv"), cfg,
                       ("k", "N_dof", "X_error", "slope"), rows),
             write_csv(os.path.join(cfg.out, "quasi_optimality.csv"), cfg,
                       ("k", "N_dof", "X_error", "best_error", "ratio", "C_over_gamma",
                        "orthogonality"), qrows)]
    res = RunResult("rates", files=files, info={"rows": rows, "quasi": qrows})
    if len(rows) >= 3:
        s = rows[-1][3]
        res.criteria.append(Criterion("rate_slope_last_three", s, 0.8, s >= 0.8))
    worst = max(q[4] for q in qrows)
    res.criteria.append(Criterion("quasi_optimality_ratio_max", worst, 10.0, worst <= 10.0))
    orth = max(q[6] for q in qrows)
    res.criteria.append(Criterion("galerkin_orthogonality", orth, 1e-8, orth <= 1e-8))
    return res


# ---------------------------------------------------------------------------
# stability

def _stability_rows(cfg, ctx, weights):
    op = ctx.operator(weights)

    def level(k):
        X, Y = ctx.sets(k)
        s = np.linalg.svd(op.section(Y, X), compute_uv=False)
        return (k, float(s[-1]), float(s[0]), float((s[0] / s[-1]) ** 2))

    return _parallel(cfg, [lambda k=k: level(k) for k in range(1, cfg.stab_k_max + 1)])


def run_stability(cfg, ctx=None):
    ctx = ctx or Context(cfg)
    hdr = ("k", "sigma_min", "sigma_max", "kappa_normal")
    rows = _stability_rows(cfg, ctx, cfg.weights)
    ab = _stability_rows(cfg, ctx, "none")
    files = [write_csv(os.path.join(cfg.out, "stability.csv"), cfg, hdr, rows),
             write_csv(os.path.join(cfg.out, "stability_unscaled.csv"), cfg, hdr, ab)]
    res = RunResult("stability", files=files, info={"rows": rows, "unscaled": ab})
    kap = [r[3] for r in rows]
    if len(kap) >= 2:
        q = kap[-1] / kap[-2]
        res.criteria.append(Criterion("kappa_ratio_last_two", q, 1.1, q <= 1.1))
    g1 = rows[0][1]
    gmin = min(r[1] for r in rows)
    res.criteria.append(Criterion("infsup_min_over_level1", gmin / g1, 0.5, gmin >= 0.5 * g1))
    if len(ab) >= 2:
        grow = min(b[3] / a[3] for a, b in zip(ab[:-1], ab[1:]))
        res.criteria.append(Criterion("unscaled_kappa_growth_min", grow, 2.0, grow >= 2.0))
    return res


# ---------------------------------------------------------------------------
# compressibility and APPLY

def run_compress(cfg, ctx=None):
    ctx = ctx or Context(cfg)
    op = ctx.operator()
    X, Y = ctx.sets(cfg.compress_k)
    cop = compressive.CompressedOperator(op, X, Y)
    srows, s_bar = compressive.measure_sstar(cop, range(cop.j_max + 1))
    files = [write_csv(os.path.join(cfg.out, "compress_stages.csv"), cfg,
                       ("j", "N_j", "error", "bound"), srows)]
    rng = cfg.rng("apply")
    hdr = ("eps", "support", "work", "certified_bound", "exact_error")
    arows, nrows = [], []
    res = RunResult("compress", info={"s_bar": s_bar, "norm": cop.norm()})
    ok, monotone = True, True
    worst = 0.0
    tl, xl = X.level_arrays()
    for v in range(cfg.apply_vectors):
        # coefficient decay mimicking a smooth solution
        decay = 2.0 ** (-1.0 * (tl + xl[:, 0])) if v else np.ones(len(X))
        x = rng.standard_normal(len(X)) * decay
        w = SparseCoeffVector.from_dense(X, x)
        Bx = cop.exact.matvec(x)
        BtBx = cop.exact.rmatvec(Bx)
        prev = [None, None]
        for eps in sorted(cfg.apply_eps, reverse=True):
            for slot, (fn, ref, dst, rows) in enumerate(
                    ((compressive.apply, Bx, Y, arows), (compressive.apply_normal, BtBx, X, nrows))):
                rep = fn(cop, w, eps)
                err = float(np.linalg.norm(ref - rep.output.to_dense(dst)))
                rows.append((eps, rep.support, rep.work, rep.certified, err))
                ok &= err <= rep.certified * (1 + 1e-12) + 1e-15 and rep.certified <= eps
                worst = max(worst, err / eps)
                if prev[slot] is not None and rep.work < prev[slot]:
                    monotone = False
                prev[slot] = rep.work
    files.append(write_csv(os.path.join(cfg.out, "apply_trace.csv"), cfg, hdr, arows))
    files.append(write_csv(os.path.join(cfg.out, "apply_normal_trace.csv"), cfg, hdr, nrows))
    res.files = files
    res.criteria.append(Criterion("apply_certified", worst, 1.0, bool(ok)))
    res.criteria.append(Criterion("apply_work_monotone", float(monotone), 1.0, bool(monotone)))
    res.info["calls"] = len(arows) + len(nrows)
    return res


# ---------------------------------------------------------------------------
# adaptive solve

def coefficient_rate(v, lo, hi):
    """Fitted s in ||v - v_N|| ~ N^-s over the tail window [lo, hi]."""
    e = v.tail_norms()[1:-1]
    N = np.arange(1, e.size + 1)
    sel = (e <= hi) & (e >= lo)
    if sel.sum() < 2:
        return float("nan")
    return -fit_slope(N[sel], e[sel])


def run_adaptive(cfg, ctx=None):
    ctx = ctx or Context(cfg)
    op = ctx.operator()
    X, Y = ctx.sets(cfg.universe_k)
    f = assemble_rhs(ctx.problem, Y, op)
    ref = solvers.solve_fixed(op, X, Y, f, check_rank=False, tol=1e-12)
    cop = compressive.CompressedOperator(op, X, Y)
    provider = compressive.normal_rhs(cop, f)
    sigma = solvers.estimate_infsup(op, X, Y)
    eps = sorted(cfg.eps_grid, reverse=True)
    params = solvers.AdaptiveParams(theta_c=cfg.theta_c, K=cfg.K, sigma_min=sigma,
                                    audit_every=cfg.audit_every)
    rep = solvers.solve_adaptive(cop, provider, eps[-1], params, reference=ref.coefficients,
                                 checkpoints=eps[:-1])
    trace = [(i, rep.eta_history[i], rep.support_history[i], rep.work_history[i],
              rep.bound_history[i], rep.error_history[i]) for i in range(len(rep.bound_history))]
    summary = []
    for e in eps:
        if e == eps[-1]:
            summary.append((e, len(rep.coefficients), rep.work_history[-1], rep.residual_bound,
                            rep.x_error))
        else:
            sn = rep.info["snapshots"][e]
            summary.append((e, sn["support"], sn["work"], sn["bound"], sn["error"]))
    files = [write_csv(os.path.join(cfg.out, "adaptive_trace.csv"), cfg,
                       ("iter", "eta", "support", "work", "certified_bound", "true_error"), trace),
             write_csv(os.path.join(cfg.out, "adaptive_eps.csv"), cfg,
                       ("eps", "support", "work", "certified_bound", "true_error"), summary)]
    s_fit = coefficient_rate(ref.coefficients, eps[-1], eps[0])
    slope = fit_slope([1 / e for e in eps], [r[1] for r in summary])
    res = RunResult("adaptive", files=files, info={"s_fit": s_fit, "slope": slope,
                                                   "summary": summary, "sigma_min": sigma,
                                                   "steps": rep.iterations})
    res.criteria.append(Criterion("support_slope_vs_1.25_over_s", slope, 1.25 / s_fit,
                                  slope <= 1.25 / s_fit))
    worst = max(r[4] / r[0] for r in summary)
    res.criteria.append(Criterion("adaptive_error_over_eps_max", worst, 1.0, worst <= 1.0))
    cert = max(e / b for b, e in zip(rep.bound_history, rep.error_history) if b > 0)
    res.criteria.append(Criterion("certificate_over_true_error", cert, 1.0, cert <= 1.0))
    ok_c, rmax, lim = solvers.contraction_ok(rep)
    res.criteria.append(Criterion("richardson_contraction", rmax, lim, ok_c))
    audits = rep.info["audits"]
    if audits:
        a = max(err / c if c > 0 else (0.0 if err == 0 else np.inf) for c, err in audits)
        res.criteria.append(Criterion("apply_normal_audit", a, 1.0, a <= 1.0))
    return res


# ---------------------------------------------------------------------------

RUNNERS = {
    "verify-calculus": run_verify_calculus,
    "rates": run_rates,
    "stability": run_stability,
    "compress": run_compress,
    "adaptive": run_adaptive,
}


def run(command, cfg, ctx=None):
    """Run one subcommand (or ``all``) under a single BLAS thread."""
    with threadpool_limits(limits=1):
        ctx = ctx or Context(cfg)
        timings = {}
        names = list(RUNNERS) if command == "all" else [command]
        if command != "all" and command not in RUNNERS:
            raise ParameterError(f"unknown command {command!r}")
        results = []
        for nm in names:
            t0 = time.perf_counter()
            results.append(RUNNERS[nm](cfg, ctx))
            timings[nm] = time.perf_counter() - t0
        if command == "all":
            rows = [(r.name, c.name, c.measured, c.limit, c.passed)
                    for r in results for c in r.criteria]
            write_csv(os.path.join(cfg.out, "summary.csv"), cfg,
                      ("run", "criterion", "measured", "limit", "pass"), rows)
    return results, timings
