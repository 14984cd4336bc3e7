"""Compressed stages of the space-time operator and the APPLY routines.

Everything acts on a fixed pair of universes: a trial index set ``X`` and a
test index set ``Y`` (both prefix shaped).  ``B`` below always means the
scaled section of the operator on ``Y x X``; bounds are certified for it.

Stage ``j`` keeps the factor entries whose level gap is at most
``r(j) = floor(j / 2)``.  With both factors truncated at gap ``r`` a tensor
column keeps about ``2^r * 2^r = 2^j`` entries, which is the column budget
of a compressible operator.

The stage error bound comes from an entrywise majorant.  Because a stage
agrees with ``B`` wherever it is nonzero,

    |B - B_j| = (|D| (x) |M| - |D_r| (x) |M_r|) + (|G| (x) |A| - |G_r| (x) |A_r|)

holds entry by entry (both terms are nonnegative), and the Schur test with
unit vectors turns this majorant into a bound for ``||B - B_j||``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .assembly import BlockKron
from .errors import ParameterError
from .tensor_index import SparseCoeffVector, best_n_term

_MAX_BIN = 48


def _abs(F):
    return abs(F) if hasattr(F, "tocsr") else np.abs(F)


def top_singular_value(linop, tol=1e-10, seed=0):
    """Largest singular value by Lanczos (``svds``), deterministic start."""
    m, n = linop.shape
    if min(m, n) == 0:
        return 0.0
    if min(m, n) <= 2:
        M = linop @ np.eye(n)
        return float(np.linalg.norm(M, 2))
    v0 = np.random.default_rng(seed).standard_normal(min(m, n))
    probe = linop.rmatvec(linop.matvec(v0)) if n <= m else linop.matvec(linop.rmatvec(v0))
    if not np.any(probe):
        return 0.0
    s = spla.svds(linop, k=1, tol=tol, v0=v0, return_singular_vectors=False)
    return float(s[0])


def power_norm(linop, steps=50, seed=0):
    """Plain power iteration on ``A^T A``; returns the norm estimate."""
    x = np.random.default_rng(seed).standard_normal(linop.shape[1])
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(steps):
        y = linop.rmatvec(linop.matvec(x))
        ny = np.linalg.norm(y)
        if ny == 0:
            return 0.0
        est = np.sqrt(ny)
        x = y / ny
    return float(est)


@dataclass
class WorkCounter:
    entries: int = 0
    calls: int = 0

    @property
    def flops(self):
        return 2 * self.entries

    def add(self, entries):
        self.entries += int(entries)
        self.calls += 1


@dataclass
class ApplyReport:
    output: SparseCoeffVector
    eps: float
    certified: float
    support: int
    work: int
    bins: list = field(default_factory=list)    # (bin, stage, column count)

    def __post_init__(self):
        if self.certified > self.eps * (1 + 1e-12):
            raise AssertionError("certified bound exceeds the requested tolerance")


class CompressedOperator:
    """Compression stages of ``B`` on the universes ``trial`` / ``test``."""

    def __init__(self, op, trial, test):
        if trial.caps is None or test.caps is None:
            raise ParameterError("universes must be prefix-shaped sparse sets")
        self.op, self.X, self.Y = op, trial, test
        self.wc = op.weights(trial, "X")
        self.wr = op.weights(test, "Y")
        self.full_terms = op.terms()
        self.gap_max = max(op.D.max_gap(), op.M.max_gap())
        self.j_max = 2 * self.gap_max
        self.work = WorkCounter()
        self._stage = {}
        self._bound = {}
        self._colnnz = {}
        self._norm = None
        self.exact = BlockKron(test, trial, self.full_terms, self.wr, self.wc)
        self._abs_full = BlockKron(test, trial, [(_abs(a), _abs(b)) for a, b in self.full_terms],
                                   self.wr, self.wc)

    # -- stages -------------------------------------------------------------
    @staticmethod
    def radius(j):
        if j < 0:
            raise ParameterError("stage index must be nonnegative")
        return j // 2

    def _r(self, j):
        return min(self.radius(j), self.gap_max)

    def terms(self, j):
        r = self._r(j)
        op = self.op
        return [(op.D.truncated(r), op.M.truncated(r)), (op.G.truncated(r), op.A.truncated(r))]

    def stage(self, j):
        r = self._r(j)
        if r >= self.gap_max:
            return self.exact
        if r not in self._stage:
            self._stage[r] = BlockKron(self.Y, self.X, self.terms(j), self.wr, self.wc)
        return self._stage[r]

    def stage_bound(self, j):
        """Certified upper bound for ``||B - B_j||`` (Schur test)."""
        r = self._r(j)
        if r >= self.gap_max:
            return 0.0
        if r not in self._bound:
            trunc = BlockKron(self.Y, self.X, [(_abs(a), _abs(b)) for a, b in self.terms(j)],
                              self.wr, self.wc)
            one_c = np.ones(len(self.X))
            one_r = np.ones(len(self.Y))
            row_sums = self._abs_full.matvec(one_c) - trunc.matvec(one_c)
            col_sums = self._abs_full.rmatvec(one_r) - trunc.rmatvec(one_r)
            # the majorant is nonnegative; clip roundoff before the square root
            rs = max(float(row_sums.max()), 0.0)
            cs = max(float(col_sums.max()), 0.0)
            self._bound[r] = float(np.sqrt(rs * cs)) * (1 + 1e-9)
        return self._bound[r]

    def stage_error(self, j, tol=1e-8):
        """Measured ``||B - B_j||`` (Lanczos on the difference)."""
        if self._r(j) >= self.gap_max:
            return 0.0
        S, E = self.stage(j), self.exact
        diff = spla.LinearOperator(E.shape, matvec=lambda x: E.matvec(x) - S.matvec(x),
                                   rmatvec=lambda y: E.rmatvec(y) - S.rmatvec(y), dtype=float)
        return top_singular_value(diff, tol=tol)

    def column_nnz(self, j, transpose=False):
        """Entries touched per input index by stage ``j`` (tensor product of
        the factor column counts)."""
        r = self._r(j)
        key = (r, transpose)
        if key not in self._colnnz:
            (D, M), (G, A) = self.terms(j)
            tr = np.unique(self.Y.keys[:, 0])
            tc = np.unique(self.X.keys[:, 0])
            xr = np.unique(self.Y.keys[:, 1])
            xc = np.unique(self.X.keys[:, 1])
            Tm = (np.abs(D) + np.abs(G))[np.ix_(tr, tc)] > 0
            Xm = (abs(M) + abs(A)).tocsr()[xr][:, xc].toarray() > 0
            if not transpose:
                ct = dict(zip(tc.tolist(), Tm.sum(0).tolist()))
                cx = dict(zip(xc.tolist(), Xm.sum(0).tolist()))
                keys = self.X.keys
            else:
                ct = dict(zip(tr.tolist(), Tm.sum(1).tolist()))
                cx = dict(zip(xr.tolist(), Xm.sum(1).tolist()))
                keys = self.Y.keys
            t = np.array([ct[v] for v in keys[:, 0].tolist()], np.int64)
            x = np.array([cx[v] for v in keys[:, 1].tolist()], np.int64)
            self._colnnz[key] = t * x
        return self._colnnz[key]

    def max_column_nnz(self, j):
        return int(self.column_nnz(j).max())

    # -- norms --------------------------------------------------------------
    def norm(self):
        """``||B||`` of the universe section, cached."""
        if self._norm is None:
            self._norm = top_singular_value(self.exact)
        return self._norm

    def norm_upper(self):
        return self.norm() * (1 + 1e-8)


def compress(op, j, trial, test):
    """Stage ``j`` of ``op`` on the given universes (a scipy LinearOperator)."""
    return CompressedOperator(op, trial, test).stage(j)


# ---------------------------------------------------------------------------
# APPLY

def _dense_on(v, index_set):
    return v.to_dense(index_set)


def apply(cop, w, eps, transpose=False):
    """``z`` with certified ``||B w - z|| <= eps`` (or ``B^T`` for transpose).

    Entries of ``w`` are discarded from the small end as long as
    ``||B|| * ||discarded||`` stays below ``eps / 2``.  The rest is split
    into dyadic magnitude bins; each bin gets the cheapest stage whose
    certified error times the bin norm fits an equal share of the remaining
    budget, so larger entries see more accurate stages.
    """
    if not eps > 0:
        raise ParameterError("eps must be positive")
    src, dst = (cop.Y, cop.X) if transpose else (cop.X, cop.Y)
    width = dst.keys.shape[1]
    if len(w) == 0:
        cop.work.add(0)
        return ApplyReport(SparseCoeffVector.zeros(width), eps, 0.0, 0, 0)
    nB = cop.norm_upper()
    order = w.order
    tails = w.tail_norms()
    ok = nB * tails <= eps / 2
    N = int(np.argmax(ok))
    if N == 0:
        cop.work.add(0)
        return ApplyReport(SparseCoeffVector.zeros(width), eps, float(nB * tails[0]), 0, 0)
    keep = order[:N]
    vals = w.values[keep]
    pos = src.positions(w.keys[keep])
    if np.any(pos < 0):
        raise ParameterError("input has entries outside the universe")
    mags = np.abs(vals)
    bins = np.minimum(np.floor(np.log2(mags[0] / mags)).astype(int), _MAX_BIN)
    used = np.unique(bins)
    budget = eps - nB * tails[N]
    share = budget / used.size
    bounds = [cop.stage_bound(j) for j in range(cop.j_max + 1)]
    groups = {}
    certified = nB * tails[N]
    records = []
    for b in used:
        sel = bins == b
        nb = float(np.linalg.norm(vals[sel]))
        j = next(j for j in range(cop.j_max + 1) if bounds[j] * nb <= share)
        certified += bounds[j] * nb
        groups.setdefault(j, []).append(sel)
        records.append((int(b), int(j), int(sel.sum())))
    z = np.zeros(len(dst))
    work = 0
    for j, sels in sorted(groups.items()):
        sel = np.logical_or.reduce(sels)
        x = np.zeros(len(src))
        x[pos[sel]] = vals[sel]
        S = cop.stage(j)
        z += S.rmatvec(x) if transpose else S.matvec(x)
        work += int(cop.column_nnz(j, transpose)[pos[sel]].sum())
    cop.work.add(work)
    out = SparseCoeffVector.from_dense(dst, z)
    return ApplyReport(out, eps, float(min(certified, eps)), len(out), work, records)


def apply_transpose(cop, w, eps):
    return apply(cop, w, eps, transpose=True)


def apply_normal(cop, w, eps):
    """``B^T B w`` to ``eps``: ``APPLY_{B^T}[APPLY_B[w, eps / (2 ||B^T||)], eps / 2]``."""
    if not eps > 0:
        raise ParameterError("eps must be positive")
    nB = cop.norm_upper()
    if len(w) == 0 or nB == 0:
        cop.work.add(0)
        return ApplyReport(SparseCoeffVector.zeros(cop.X.keys.shape[1]), eps, 0.0, 0, 0)
    first = apply(cop, w, eps / (2 * nB))
    if len(first.output) == 0:
        second = ApplyReport(SparseCoeffVector.zeros(cop.X.keys.shape[1]), eps / 2, 0.0, 0, 0)
    else:
        second = apply_transpose(cop, first.output, eps / 2)
    cert = nB * first.certified + second.certified
    return ApplyReport(second.output, eps, float(min(cert, eps)), second.support,
                       first.work + second.work)


# ---------------------------------------------------------------------------
# right-hand sides

class RHSProvider:
    """Best-N truncations of a deep reference vector.

    ``floor`` is the accuracy of the reference itself; tolerances below it
    cannot be honoured.
    """

    def __init__(self, reference, floor=0.0):
        self.reference = reference
        self.floor = float(floor)
        self._tails = reference.tail_norms()

    def __call__(self, eps):
        return rhs(self, eps)

    @property
    def norm(self):
        return self.reference.norm()


def rhs(provider, eps):
    if eps < 0:
        raise ParameterError("eps must be nonnegative")
    if eps < provider.floor or (eps == 0 and provider.floor > 0):
        raise ParameterError(
            f"tolerance {eps:.3e} below the reference resolution floor {provider.floor:.3e}")
    e = provider._tails
    N = int(np.argmax(e <= eps))
    return best_n_term(provider.reference, N)


def normal_rhs(cop, f_ref, floor=0.0):
    """Provider for ``B^T f`` computed exactly from the reference load."""
    g = cop.exact.rmatvec(f_ref.to_dense(cop.Y))
    return RHSProvider(SparseCoeffVector.from_dense(cop.X, g), floor * cop.norm_upper())


# ---------------------------------------------------------------------------
# compressibility

def measure_sstar(cop, j_range):
    """Rows ``(j, N_j, error, bound)`` and the fitted decay rate.

    ``N_j`` is the largest column count of stage ``j``, ``error`` the
    measured ``||B - B_j||`` and ``bound`` its certified majorant.  The rate
    is minus the least squares slope of log error against log N_j over the
    stages with nonzero error.
    """
    rows = []
    for j in j_range:
        rows.append((int(j), cop.max_column_nnz(j), cop.stage_error(j), cop.stage_bound(j)))
    pts = [(np.log(n), np.log(e)) for _, n, e, _ in rows if e > 1e-14 * max(cop.norm(), 1)]
    if len(pts) >= 2 and len({p[0] for p in pts}) >= 2:
        x, y = np.array(pts).T
        s_bar = float(-np.polyfit(x, y, 1)[0])
    else:
        s_bar = float("nan")
    return rows, s_bar
