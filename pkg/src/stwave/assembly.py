"""Factor matrices, Riesz scalings and sections of the space-time operator.

The bilinear form of the parabolic problem, written in the tensor bases,
is ``D (x) M + G (x) A`` with

* ``D[i, j] = <theta_j^X', theta_i^Y>``, ``G[i, j] = <theta_j^X, theta_i^Y>``
  over the temporal trial and test bases,
* ``M = <sigma, sigma>`` and ``A = a(sigma, sigma)`` over the spatial basis.

All basis functions are L2 normalised; the Riesz scalings are applied as
diagonals around the factor products.  The full matrix is never formed.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.polynomial.legendre import leggauss

from . import frac_calc
from .errors import ParameterError
from .tensor_index import IndexSet, SparseCoeffVector

KINDS = ("temporal_D", "temporal_G", "spatial_M", "spatial_A")


# ---------------------------------------------------------------------------
# problem description

def _as_callable(v):
    if callable(v):
        return v
    return lambda x, v=float(v): np.full(np.shape(x), v)


@dataclass
class ProblemSpec:
    """Heat-type problem ``u_t - div(a grad u) + c u = f`` with ``u(0) = 0``.

    ``f_terms`` / ``u_terms`` are optional separable representations,
    lists of ``(g_t, (g_x1, ..., g_xn))``; they take precedence over the
    generic callables ``f(t, x1, ..., xn)`` and ``u_star``.
    """

    a: object = 1.0
    c: object = 0.0
    f: Callable | None = None
    f_terms: list | None = None
    u_star: Callable | None = None
    u_terms: list | None = None
    L_t: float = 8.0
    L_x: float = 1.0
    n: int = 1
    gamma_min: float = 1e-12

    def __post_init__(self):
        self.check_ellipticity()

    def check_ellipticity(self, samples=1001):
        x = np.linspace(0.0, self.L_x, samples)
        a = _as_callable(self.a)(x)
        c = _as_callable(self.c)(x)
        if np.min(a) <= self.gamma_min:
            raise ParameterError(f"ellipticity violated: min a = {np.min(a):g} <= 0")
        if np.min(c) < 0:
            raise ParameterError(f"reaction coefficient negative: min c = {np.min(c):g}")

    def rhs_terms(self):
        if self.f_terms is not None:
            return self.f_terms
        return None


def heat_problem(n=1, L_t=8.0):
    """Manufactured solution ``u = t exp(-t) prod sin(pi x_i)``."""
    pi2 = math.pi ** 2
    sx = tuple(lambda x: np.sin(math.pi * x) for _ in range(n))
    u_t = lambda t: t * np.exp(-t)
    f_t = lambda t: (1.0 - t + n * pi2 * t) * np.exp(-t)

    def u_star(t, *xs):
        out = u_t(t)
        for x in xs:
            out = out * np.sin(math.pi * x)
        return out

    def f(t, *xs):
        out = f_t(t)
        for x in xs:
            out = out * np.sin(math.pi * x)
        return out

    return ProblemSpec(a=1.0, c=0.0, f=f, f_terms=[(f_t, sx)], u_star=u_star,
                       u_terms=[(u_t, sx)], L_t=L_t, L_x=1.0, n=n)


# ---------------------------------------------------------------------------
# factor matrices

@dataclass
class FactorMatrix:
    kind: str
    data: object                 # ndarray or scipy sparse, (rows, cols) in flat basis order
    row_basis: object
    col_basis: object
    _masks: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown factor kind {self.kind!r}")

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_sparse(self):
        return sp.issparse(self.data)

    def dense(self):
        return self.data.toarray() if self.is_sparse else np.asarray(self.data)

    def level_gap(self):
        """Level gap of every stored entry (same storage as ``data``)."""
        rl, cl = self.row_basis.levels, self.col_basis.levels
        if self.is_sparse:
            coo = self.data.tocoo()
            return sp.csr_matrix((np.abs(rl[coo.row] - cl[coo.col]) + 1.0, (coo.row, coo.col)),
                                 shape=self.shape)
        return np.abs(rl[: self.shape[0], None] - cl[None, : self.shape[1]])

    def truncated(self, r):
        """Entries with level gap > r removed."""
        if r in self._masks:
            return self._masks[r]
        rl, cl = self.row_basis.levels, self.col_basis.levels
        if self.is_sparse:
            coo = self.data.tocoo()
            keep = np.abs(rl[coo.row] - cl[coo.col]) <= r
            out = sp.csr_matrix((coo.data[keep], (coo.row[keep], coo.col[keep])), shape=self.shape)
        else:
            gap = np.abs(rl[: self.shape[0], None] - cl[None, : self.shape[1]])
            out = np.where(gap <= r, self.data, 0.0)
        self._masks[r] = out
        return out

    def abs(self):
        return abs(self.data) if self.is_sparse else np.abs(self.data)

    def max_gap(self):
        return int(max(self.row_basis.levels.max(), self.col_basis.levels.max()))

    def to_coordinate_text(self, tol=0.0):
        coo = sp.coo_matrix(self.data)
        keep = np.abs(coo.data) > tol
        return "".join(f"{r} {c} {v:.17g}\n"
                       for r, c, v in zip(coo.row[keep], coo.col[keep], coo.data[keep]))


def _check_temporal(trial, test):
    if trial.flavor != "temporal_trial" or test.flavor != "temporal_test":
        raise ParameterError(
            f"flavor mismatch: need (temporal_trial, temporal_test), "
            f"got ({trial.flavor}, {test.flavor})")
    if trial.L != test.L or trial.n0 != test.n0:
        raise ParameterError("trial and test bases live on different meshes")


def _temporal_pair(trial, test, level_cap):
    _check_temporal(trial, test)
    cap_y = test.max_level if level_cap is None else min(level_cap + 1, test.max_level)
    cap_x = trial.max_level if level_cap is None else min(level_cap, trial.max_level)
    J = max(cap_x, cap_y)
    if J > trial.max_level or J > test.max_level:
        raise ParameterError("bases not built deep enough for the requested cap")
    Tx = trial.synthesis(J)[:, : trial.offsets[cap_x + 1]]
    Ty = test.synthesis(J)[:, : test.offsets[cap_y + 1]]
    return Tx, Ty, J


def assemble_temporal_D(trial, test, level_cap=None):
    """``D[i, j] = int theta_j^X' theta_i^Y`` (exact, through the synthesis)."""
    Tx, Ty, J = _temporal_pair(trial, test, level_cap)
    C = trial.fine_advection(J, test)
    return FactorMatrix("temporal_D", (Ty.T @ C @ Tx).toarray(), test, trial)


def assemble_temporal_G(trial, test, level_cap=None):
    Tx, Ty, J = _temporal_pair(trial, test, level_cap)
    M = _p1_cross_mass(trial, test, J)
    return FactorMatrix("temporal_G", (Ty.T @ M @ Tx).toarray(), test, trial)


def _p1_cross_mass(trial, test, J):
    n, h = trial.cells(J), trial.h(J)
    main = np.full(n + 1, 2 * h / 3)
    main[0] = main[-1] = h / 3
    off = np.full(n, h / 6)
    full = sp.diags([off, main, off], [-1, 0, 1], format="csr")
    return full[test.nodes(J)][:, trial.nodes(J)]


def _p1_weighted(basis, level, a, c, nq=4):
    """P1 matrices int a phi_i' phi_j + c phi_i phi_j on one level."""
    n, h = basis.cells(level), basis.h(level)
    g, w = leggauss(nq)
    left = np.arange(n) * h
    pts = left[:, None] + h * (g[None] + 1) / 2
    wts = h * w / 2
    aa = _as_callable(a)(pts)
    cc = _as_callable(c)(pts)
    a_cell = (aa * wts).sum(1) / h ** 2
    phi_l = (1 - (g + 1) / 2)
    phi_r = (g + 1) / 2
    c_ll = (cc * wts * phi_l * phi_l).sum(1)
    c_rr = (cc * wts * phi_r * phi_r).sum(1)
    c_lr = (cc * wts * phi_l * phi_r).sum(1)
    rows = np.concatenate([np.arange(n), np.arange(1, n + 1), np.arange(n), np.arange(1, n + 1)])
    cols = np.concatenate([np.arange(n), np.arange(1, n + 1), np.arange(1, n + 1), np.arange(n)])
    vals = np.concatenate([a_cell + c_ll, a_cell + c_rr, -a_cell + c_lr, -a_cell + c_lr])
    K = sp.csr_matrix((vals, (rows, cols)), shape=(n + 1, n + 1))
    nodes = basis.nodes(level)
    return K[nodes][:, nodes]


def assemble_spatial(problem, basis, level_cap=None):
    """(M, A) over one spatial basis, as sparse multilevel matrices."""
    if basis.flavor != "spatial_dirichlet":
        raise ParameterError("spatial factors need the spatial_dirichlet flavor")
    problem.check_ellipticity()
    J = basis.max_level if level_cap is None else level_cap
    T = basis.synthesis(J)
    M = (T.T @ basis.fine_mass(J) @ T).tocsr()
    A = (T.T @ _p1_weighted(basis, J, problem.a, problem.c) @ T).tocsr()
    M = _symmetrize(M)
    A = _symmetrize(A)
    return (FactorMatrix("spatial_M", M, basis, basis), FactorMatrix("spatial_A", A, basis, basis))


def _symmetrize(S):
    S = ((S + S.T) * 0.5).tocsr()
    S.eliminate_zeros()
    return S


# ---------------------------------------------------------------------------
# dual-route check of D

def d_fractional_entry(trial, test, i_test, j_trial):
    """``<D^{1/2}_+ theta_j^X, D^{1/2}_- E0 theta_i^Y>`` by quadrature."""
    return frac_calc.fractional_pairing(trial.eval(int(j_trial)), test.eval(int(i_test)))


def verify_D_dual_route(D, pairs):
    """Max |D_exact - D_fractional| over ``pairs`` of (test_pos, trial_pos)."""
    test, trial = D.row_basis, D.col_basis
    diffs = []
    for i, j in pairs:
        diffs.append(abs(D.data[i, j] - d_fractional_entry(trial, test, i, j)))
    return float(max(diffs)) if diffs else 0.0, np.array(diffs)


def random_pairs(D, count, rng, max_level=6, overlap_fraction=0.8):
    """Random (test, trial) positions up to ``max_level``, mostly overlapping."""
    test, trial = D.row_basis, D.col_basis
    ny = test.offsets[min(max_level, test.max_level) + 1]
    nx = trial.offsets[min(max_level, trial.max_level) + 1]
    ny, nx = min(ny, D.shape[0]), min(nx, D.shape[1])
    nz = np.argwhere(np.abs(D.data[:ny, :nx]) > 0)
    n_ov = int(round(overlap_fraction * count))
    picks = nz[rng.choice(nz.shape[0], size=min(n_ov, nz.shape[0]), replace=False)]
    rest = np.stack([rng.integers(0, ny, count - picks.shape[0]),
                     rng.integers(0, nx, count - picks.shape[0])], 1)
    return [tuple(map(int, p)) for p in np.concatenate([picks, rest])]


# ---------------------------------------------------------------------------
# Riesz weights

def riesz_weights(index_set, flavor="X", m=1, mode="dyadic", op=None):
    """Diagonal scaling of an index set.

    ``dyadic``: ``sqrt(2^{2m|mu|} + 2^{|lambda|})`` with ``|mu|`` the largest
    spatial level.  ``exact``: ``sqrt(a(sigma, sigma) + |theta|_{H^1/2}^2)``
    from the assembled factors (``op`` required).  ``none``: all ones.
    """
    if flavor not in ("X", "Y"):
        raise ParameterError("flavor must be 'X' or 'Y'")
    tl, xl = index_set.level_arrays()
    if mode == "none":
        return np.ones(len(index_set))
    if mode == "dyadic":
        q = xl.max(1) if xl.size else np.zeros(0)
        return np.sqrt(2.0 ** (2 * m * q) + 2.0 ** tl)
    if mode == "exact":
        if op is None:
            raise ParameterError("exact weights need the operator")
        ht = op.temporal_h12_sq("X" if flavor == "X" else "Y")[index_set.keys[:, 0]]
        vx = sum(op.A_diag[index_set.keys[:, 1 + d]] for d in range(index_set.n))
        return np.sqrt(ht + vx)
    raise ParameterError(f"unknown weight mode {mode!r}")


# ---------------------------------------------------------------------------
# block Kronecker kernels

class BlockKron(spla.LinearOperator):
    """``diag(1/wr) (sum_k Ft_k (x) Fx_k) diag(1/wc)`` between two
    prefix-shaped sets in one space dimension."""

    def __init__(self, rows, cols, terms, wr=None, wc=None):
        rc, cc = rows.caps, cols.caps
        if rc is None or cc is None:
            raise ParameterError("block kernels need prefix-shaped index sets")
        self.rows, self.cols, self.terms = rows, cols, terms
        self.rcaps, self.ccaps = rc, cc
        self.wr = np.ones(len(rows)) if wr is None else wr
        self.wc = np.ones(len(cols)) if wc is None else wc
        tr, tc = rows.time_basis, cols.time_basis
        xb = rows.space_bases[0]
        self._rblk = self._layout(rows, rc, tr, xb)
        self._cblk = self._layout(cols, cc, tc, xb)
        self.nx_rmax = max(b[3] for b in self._rblk.values())
        self.nx_cmax = max(b[3] for b in self._cblk.values())
        self._slices = {}
        super().__init__(float, (len(rows), len(cols)))

    @staticmethod
    def _layout(s, caps, tb, xb):
        out, start = {}, 0
        for p, Q in caps.items():
            nt = tb.count(p)
            nx = int(xb.offsets[Q + 1])
            out[p] = (start, slice(tb.offsets[p], tb.offsets[p + 1]), nt, nx)
            start += nt * nx
        if start != len(s):
            raise ParameterError("index set is not the union of its blocks")
        return out

    def _xslice(self, k, a, b, transpose=False):
        key = (k, a, b, transpose)
        if key not in self._slices:
            Fx = self.terms[k][1]
            S = Fx[:a, :b] if not transpose else Fx[:b, :a].T
            self._slices[key] = sp.csr_matrix(S) if sp.issparse(Fx) else np.asarray(S)
        return self._slices[key]

    def _apply(self, x, rblk, cblk, transpose):
        y = np.zeros(sum(b[2] * b[3] for b in rblk.values()))
        nx_out = max(b[3] for b in rblk.values())
        for k, (Ft, _) in enumerate(self.terms):
            for p, (st, tsl, nt, nx) in cblk.items():
                X = x[st: st + nt * nx].reshape(nt, nx)
                if not X.any():
                    continue
                S = self._xslice(k, nx_out, nx, transpose)      # (nx_out, nx)
                Z = (S @ X.T).T                                  # (nt, nx_out)
                for pp, (rst, rtsl, rnt, rnx) in rblk.items():
                    T = Ft[rtsl, tsl] if not transpose else Ft[tsl, rtsl].T
                    if not T.any():
                        continue
                    y[rst: rst + rnt * rnx] += (T @ Z[:, :rnx]).ravel()
        return y

    def _matvec(self, x):
        x = np.asarray(x, float).ravel() / self.wc
        return self._apply(x, self._rblk, self._cblk, False) / self.wr

    def _rmatvec(self, y):
        y = np.asarray(y, float).ravel() / self.wr
        return self._apply(y, self._cblk, self._rblk, True) / self.wc

    def _matmat(self, X):
        return np.column_stack([self._matvec(c) for c in X.T])

    def _rmatmat(self, Y):
        return np.column_stack([self._rmatvec(c) for c in Y.T])


# ---------------------------------------------------------------------------
# the operator

class TensorOperator:
    """Scaled operator ``W_Y^{-1} (D (x) M + G (x) A) W_X^{-1}``."""

    def __init__(self, trial_t, test_t, space_bases, problem, m=1, weights="exact",
                 level_cap_t=None, level_cap_x=None):
        if isinstance(space_bases, (list, tuple)):
            space_bases = tuple(space_bases)
        else:
            space_bases = (space_bases,) * problem.n
        if len(space_bases) != problem.n:
            raise ParameterError("one spatial basis per dimension required")
        if abs(trial_t.L - problem.L_t) > 1e-12 or any(abs(b.L - problem.L_x) > 1e-12
                                                       for b in space_bases):
            raise ParameterError("basis domains disagree with the problem")
        self.trial_t, self.test_t = trial_t, test_t
        self.space_bases = space_bases
        self.problem, self.m, self.weight_mode = problem, m, weights
        self.D = assemble_temporal_D(trial_t, test_t, level_cap_t)
        self.G = assemble_temporal_G(trial_t, test_t, level_cap_t)
        self.M, self.A = assemble_spatial(problem, space_bases[0], level_cap_x)
        self.A_diag = self.A.data.diagonal()
        self._h12 = {}

    @property
    def n(self):
        return len(self.space_bases)

    # -- weights -----------------------------------------------------------
    def temporal_h12_sq(self, flavor):
        """Squared H^{1/2} norms of the temporal functions (trial side uses
        the norm with the boundary weight at 0)."""
        if flavor not in self._h12:
            basis = self.trial_t if flavor == "X" else self.test_t
            ncols = self.D.shape[1] if flavor == "X" else self.D.shape[0]
            vals = np.empty(ncols)
            for pos in range(ncols):
                f = basis.eval(pos)
                rep = frac_calc.norm_h12(f, weighted=(flavor == "X"), domain="interval",
                                         span=(0.0, basis.L))
                vals[pos] = rep.total_h1200_sq if flavor == "X" else rep.total_h12_sq
            self._h12[flavor] = vals
        return self._h12[flavor]

    def weights(self, index_set, flavor):
        return riesz_weights(index_set, flavor, self.m, self.weight_mode, self)

    # -- sections ----------------------------------------------------------
    def terms(self):
        return [(self.D.data, self.M.data), (self.G.data, self.A.data)]

    def _check_caps(self, rows, cols):
        if len(rows) and rows.keys[:, 0].max() >= self.D.shape[0]:
            raise ParameterError("test index outside the assembled temporal cap")
        if len(cols) and cols.keys[:, 0].max() >= self.D.shape[1]:
            raise ParameterError("trial index outside the assembled temporal cap")
        for s in (rows, cols):
            if len(s) and s.keys[:, 1:].max() >= self.M.shape[0]:
                raise ParameterError("spatial index outside the assembled cap")

    def section(self, rows, cols, scaled=True):
        """Dense finite section with rows from the test set."""
        self._check_caps(rows, cols)
        if len(rows) == 0 or len(cols) == 0:
            return np.zeros((len(rows), len(cols)))
        rt, ct = rows.keys[:, 0], cols.keys[:, 0]
        Mx = np.ones((len(rows), len(cols)))
        Ax = np.zeros((len(rows), len(cols)))
        mparts = [self.M.data[rows.keys[:, 1 + d]][:, cols.keys[:, 1 + d]].toarray()
                  for d in range(self.n)]
        aparts = [self.A.data[rows.keys[:, 1 + d]][:, cols.keys[:, 1 + d]].toarray()
                  for d in range(self.n)]
        for d in range(self.n):
            Mx = Mx * mparts[d]
        for d in range(self.n):
            term = aparts[d]
            for e in range(self.n):
                if e != d:
                    term = term * mparts[e]
            Ax += term
        B = self.D.data[np.ix_(rt, ct)] * Mx + self.G.data[np.ix_(rt, ct)] * Ax
        if scaled:
            B /= self.weights(rows, "Y")[:, None]
            B /= self.weights(cols, "X")[None, :]
        return B

    def block(self, rows, cols, scaled=True, terms=None):
        """Matrix-free section (``scipy`` LinearOperator) for prefix sets."""
        self._check_caps(rows, cols)
        if self.n != 1 or rows.caps is None or cols.caps is None:
            S = self.section(rows, cols, scaled)
            return spla.aslinearoperator(S)
        wr = self.weights(rows, "Y") if scaled else None
        wc = self.weights(cols, "X") if scaled else None
        return BlockKron(rows, cols, self.terms() if terms is None else terms, wr, wc)

    def entry(self, row_key, col_key, scaled=True):
        i, j = int(row_key[0]), int(col_key[0])
        mm, aa = 1.0, 0.0
        ms = [self.M.data[row_key[1 + d], col_key[1 + d]] for d in range(self.n)]
        as_ = [self.A.data[row_key[1 + d], col_key[1 + d]] for d in range(self.n)]
        for v in ms:
            mm *= v
        for d in range(self.n):
            t = as_[d]
            for e in range(self.n):
                if e != d:
                    t *= ms[e]
            aa += t
        val = self.D.data[i, j] * mm + self.G.data[i, j] * aa
        if scaled:
            if self.weight_mode == "dyadic":
                tl_r = self.test_t.levels[i]
                tl_c = self.trial_t.levels[j]
                xr = max(self.space_bases[0].levels[r] for r in row_key[1:])
                xc = max(self.space_bases[0].levels[c] for c in col_key[1:])
                val /= math.sqrt(4.0 ** (self.m * xr) + 2.0 ** tl_r)
                val /= math.sqrt(4.0 ** (self.m * xc) + 2.0 ** tl_c)
            else:
                raise ParameterError("entry() supports dyadic weights only")
        return float(val)


def direct_entry(op, row_key, col_key, nq=8):
    """Unscaled entry by quadrature of the bilinear form on the functions
    themselves (independent of the factor matrices)."""
    th_y = op.test_t.eval(int(row_key[0]))
    th_x = op.trial_t.eval(int(col_key[0]))
    tpart_d = th_x.derivative().inner(th_y)
    tpart_g = th_x.inner(th_y)
    a = _as_callable(op.problem.a)
    c = _as_callable(op.problem.c)
    ms, as_ = [], []
    for d in range(op.n):
        sy = op.space_bases[d].eval(int(row_key[1 + d]))
        sx = op.space_bases[d].eval(int(col_key[1 + d]))
        ms.append(sx.inner(sy))
        as_.append(_weighted_inner(sx.derivative(), sy.derivative(), a, nq)
                   + _weighted_inner(sx, sy, c, nq))
    mm = float(np.prod(ms))
    aa = 0.0
    for d in range(op.n):
        aa += as_[d] * float(np.prod([ms[e] for e in range(op.n) if e != d]))
    return tpart_d * mm + tpart_g * aa


def _weighted_inner(u, v, wfun, nq):
    b = np.union1d(u.b, v.b)
    g, w = leggauss(nq)
    tot = 0.0
    for lo, hi in zip(b[:-1], b[1:]):
        t = (hi - lo) * (g + 1) / 2 + lo
        wt = (hi - lo) * w / 2
        tot += float(np.sum(wt * wfun(t) * u(t) * v(t)))
    return tot


# ---------------------------------------------------------------------------
# right-hand side

def _hat_eval_matrix(basis, level, pts):
    """Sparse values of the active level hats at ``pts``."""
    h, n = basis.h(level), basis.cells(level)
    cell = np.clip(np.floor(pts / h).astype(np.int64), 0, n - 1)
    r = pts / h - cell
    full_pos = -np.ones(n + 1, np.int64)
    full_pos[basis.nodes(level)] = np.arange(basis.nodes(level).size)
    rows, cols, vals = [], [], []
    for node, val in ((cell, 1 - r), (cell + 1, r)):
        pos = full_pos[node]
        keep = pos >= 0
        rows.append(np.nonzero(keep)[0])
        cols.append(pos[keep])
        vals.append(val[keep])
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(pts.size, basis.nodes(level).size))


def _gauss_points(basis, level, nq):
    g, w = leggauss(nq)
    h = basis.h(level)
    left = np.arange(basis.cells(level)) * h
    return (left[:, None] + h * (g[None] + 1) / 2).ravel(), np.tile(h * w / 2, basis.cells(level))


def _moment_matrix(basis, level, fun, nq):
    """``int fun * theta`` for all multilevel functions up to ``level``."""
    pts, wts = _gauss_points(basis, level, nq)
    Phi = _hat_eval_matrix(basis, level, pts)
    T = basis.synthesis(level)
    return T.T @ (Phi.T @ (wts * fun(pts)))


def rhs_full(problem, test_t, space_basis, t_level, x_level, nq=8):
    """Unscaled load matrix ``F[i, j] = f(theta_i^Y sigma_j)`` on the full
    product up to the given levels (n = 1)."""
    if problem.n != 1:
        raise ParameterError("rhs_full handles one space dimension")
    terms = problem.rhs_terms()
    if terms is not None:
        F = 0.0
        for ft, fx in terms:
            F = F + np.outer(_moment_matrix(test_t, t_level, ft, nq),
                             _moment_matrix(space_basis, x_level, fx[0], nq))
        return np.asarray(F)
    tp, tw = _gauss_points(test_t, t_level, nq)
    xp, xw = _gauss_points(space_basis, x_level, nq)
    Pt = _hat_eval_matrix(test_t, t_level, tp)
    Px = _hat_eval_matrix(space_basis, x_level, xp)
    S = np.zeros((Pt.shape[1], xp.size))
    chunk = max(1, 2_000_000 // max(xp.size, 1))
    for s in range(0, tp.size, chunk):
        sl_ = slice(s, s + chunk)
        vals = problem.f(tp[sl_, None], xp[None, :])
        S += Pt[sl_].T @ (tw[sl_, None] * vals)
    S = (Px.T @ (S * xw[None, :]).T).T
    return test_t.synthesis(t_level).T @ S @ space_basis.synthesis(x_level)


def assemble_rhs(problem, test_set, op=None, nq=8, tol=1e-8):
    """Scaled load vector on ``test_set`` (tensor Gauss, ``nq`` nodes/cell/axis)."""
    tb = test_set.time_basis
    xb = test_set.space_bases[0]
    if len(test_set) == 0:
        return SparseCoeffVector.zeros(1 + test_set.n)
    tl, xl = test_set.level_arrays()
    t_level, x_level = int(tl.max()), int(xl.max())
    if test_set.n == 1:
        F = rhs_full(problem, tb, xb, t_level, x_level, nq)
        vals = F[test_set.keys[:, 0], test_set.keys[:, 1]]
        F2 = rhs_full(problem, tb, xb, t_level, x_level, max(nq - 2, 2))
        res = float(np.max(np.abs(F2[test_set.keys[:, 0], test_set.keys[:, 1]] - vals)))
    else:
        vals, res = _rhs_tensor_nd(problem, test_set, nq)
    if res > tol * max(1.0, float(np.max(np.abs(vals)))):
        warnings.warn(f"load vector quadrature residual {res:.2e}", RuntimeWarning, stacklevel=2)
    if op is not None:
        vals = vals / op.weights(test_set, "Y")
    else:
        vals = vals / riesz_weights(test_set, "Y")
    return SparseCoeffVector(test_set.keys, vals)


def _rhs_tensor_nd(problem, test_set, nq):
    terms = problem.rhs_terms()
    if terms is None:
        raise ParameterError("n > 1 load vectors need a separable right-hand side")
    tb = test_set.time_basis
    tl, xl = test_set.level_arrays()
    vals = np.zeros(len(test_set))
    for ft, fxs in terms:
        part = _moment_matrix(tb, int(tl.max()), ft, nq)[test_set.keys[:, 0]]
        for d, fx in enumerate(fxs):
            b = test_set.space_bases[d]
            part = part * _moment_matrix(b, int(xl[:, d].max()), fx, nq)[test_set.keys[:, 1 + d]]
        vals += part
    return vals, 0.0
