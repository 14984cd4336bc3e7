"""Boundary adapted piecewise linear biorthogonal wavelets on an interval.

The primal multiresolution consists of continuous piecewise linear
splines on dyadic refinements of a coarse mesh with ``n0`` cells.  The
flavor fixes which end nodes are active:

==================  =========  =========
flavor              t = 0      t = L
==================  =========  =========
temporal_trial      zero       free
temporal_test       free       free
spatial_dirichlet   zero       zero
==================  =========  =========

A wavelet of level ``l >= 1`` is the fine hat at a new (odd) node minus a
combination of nearby coarse hats with vanishing low moments.

``variant="lifted"`` is the textbook lifted (2,2) wavelet, two coarse hats
and two vanishing moments, with filter ``[-1/8, -1/4, 3/4, -1/4, -1/8]``
in the interior.  Its Riesz constants keep drifting for many levels.

The default ``"stable"`` variant subtracts four coarse hats with weights
``(-19, 131, 131, -19)/448``: two vanishing moments plus orthogonality to the
two nearest coarse hats in a mildly gradient weighted inner product, which
makes neighbouring levels nearly orthogonal in L2 and in H1.
At a free end the four nearest hats are used with the same conditions.
At a Dirichlet end the wavelets are the odd reflections of the interior
ones, so they vanish against ``t - end`` but not against constants; in
exchange the Riesz bounds are those of the interior construction.

Dual functions are never formed; the fast transform realises them
implicitly.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ParameterError
from .frac_calc import PiecewisePoly

FLAVORS = ("temporal_trial", "temporal_test", "spatial_dirichlet")
VARIANTS = ("stable", "lifted")
MAX_LEVEL_CAP = 14
_GAUSS4 = np.polynomial.legendre.leggauss(4)
# interior weights on the coarse hats k-1..k+2: two vanishing moments and
# orthogonality to the hats k and k+1 in (u, v) + h^2/25 (u', v'), h the
# coarse mesh width.  The small gradient term trades a little L2 stability
# for a flatter H1 upper bound.
_INTERIOR = (-19 / 448, 131 / 448, 131 / 448, -19 / 448)


@dataclass(frozen=True, order=True)
class WaveletIndex:
    level: int
    translation: int

    def __post_init__(self):
        if self.level < 0 or self.translation < 0:
            raise ParameterError(f"invalid wavelet index {self}")


def _active_nodes(flavor, n):
    lo = 0 if flavor == "temporal_test" else 1
    hi = n - 1 if flavor == "spatial_dirichlet" else n
    return np.arange(lo, hi + 1)


class IntervalBasis:
    """Multilevel basis; functions are L2 normalised.

    Flat ordering: level 0 scaling functions, then level 1 wavelets,
    level 2 wavelets and so on, each block ordered by translation.
    """

    def __init__(self, flavor, d=2, d_tilde=2, L=1.0, max_level=6, n0=4, variant="stable"):
        if flavor not in FLAVORS:
            raise ParameterError(f"unknown flavor {flavor!r}")
        if (d, d_tilde) != (2, 2):
            raise ParameterError(f"only (d, d_tilde) = (2, 2) is supported, got ({d}, {d_tilde})")
        if not 0 <= max_level <= MAX_LEVEL_CAP:
            raise ParameterError(
                f"max_level {max_level} outside [0, {MAX_LEVEL_CAP}] (breakpoint resolution)")
        if n0 < 2 or (flavor == "spatial_dirichlet" and n0 < 4):
            raise ParameterError("coarse mesh too small for two vanishing moments")
        if variant not in VARIANTS:
            raise ParameterError(f"unknown variant {variant!r}")
        self.flavor, self.d, self.d_tilde, self.variant = flavor, d, d_tilde, variant
        self.L, self.max_level, self.n0 = float(L), int(max_level), int(n0)
        self.zero_left = flavor != "temporal_test"
        self.zero_right = flavor == "spatial_dirichlet"
        self._nodes = [_active_nodes(flavor, self.cells(l)) for l in range(max_level + 1)]
        self._refine = [None]
        self._wav = [None]
        self._pairs = [None]
        for l in range(1, max_level + 1):
            P, Q, pairs = self._two_scale(l)
            self._refine.append(P)
            self._wav.append(Q)
            self._pairs.append(pairs)
        self._norms = self._compute_norms()

    # -- mesh bookkeeping -------------------------------------------------
    def cells(self, level):
        return self.n0 << level

    def h(self, level):
        return self.L / self.cells(level)

    def nodes(self, level):
        return self._nodes[level]

    def n_single(self, level):
        return self._nodes[level].size

    def count(self, level):
        return self.n_single(0) if level == 0 else self.cells(level - 1)

    def n_total(self, level=None):
        level = self.max_level if level is None else level
        return self.n_single(level)

    @cached_property
    def levels(self):
        return np.concatenate([np.full(self.count(l), l) for l in range(self.max_level + 1)])

    @cached_property
    def translations(self):
        return np.concatenate([np.arange(self.count(l)) for l in range(self.max_level + 1)])

    @cached_property
    def offsets(self):
        c = [self.count(l) for l in range(self.max_level + 1)]
        return np.concatenate([[0], np.cumsum(c)])

    def flat(self, idx):
        if not 0 <= idx.level <= self.max_level or idx.translation >= self.count(idx.level):
            raise ParameterError(f"index {idx} outside the built range")
        return int(self.offsets[idx.level] + idx.translation)

    def index(self, pos):
        return WaveletIndex(int(self.levels[pos]), int(self.translations[pos]))

    # -- two-scale relations ------------------------------------------------
    def _hat_moments(self, level, node, m=2):
        """Moments int phi t^j, j < m, of an active hat (exact Gauss)."""
        h = self.h(level)
        x = node * h
        g, w = _GAUSS4
        out = np.zeros(m)
        for a, b in ((x - h, x), (x, x + h)):
            if a < -1e-12 * self.L or b > self.L * (1 + 1e-12):
                continue
            t = (b - a) * (g + 1) / 2 + a
            wt = (b - a) * w / 2 * (1 - np.abs(t - x) / h)
            out += [np.dot(wt, t ** j) for j in range(m)]
        return out

    def _coarse_combination(self, l, k, cset, gram=None):
        """Coarse hats and weights subtracted from the new fine hat 2k+1."""
        if self.variant == "lifted":
            left, right = k, k + 1
            if left not in cset:
                left, right = right, right + 1
            elif right not in cset:
                left, right = left - 1, left
            cand = [left, right]
            A = np.array([self._hat_moments(l - 1, c) for c in cand]).T
            return cand, np.linalg.solve(A, self._hat_moments(l, 2 * k + 1))
        nc = self.cells(l - 1)
        coef = {}
        for c, a in zip((k - 1, k, k + 1, k + 2), _INTERIOR):
            if 0 < c < nc:
                coef[c] = coef.get(c, 0.0) + a
            elif 0 not in cset and c <= 0:
                # odd reflection at a Dirichlet end; the hat at the end drops out
                if c < 0:
                    coef[-c] = coef.get(-c, 0.0) - a
            elif nc not in cset and c >= nc:
                if c > nc:
                    coef[2 * nc - c] = coef.get(2 * nc - c, 0.0) - a
            else:
                coef = None
                break
        if coef is not None:
            cand = sorted(coef)
            return cand, np.array([coef[c] for c in cand])
        # free end: four nearest hats, two moments, orthogonal to the two nearest
        near = sorted(cset, key=lambda c: (abs(c - k - 0.5), c))
        cand = sorted(near[:4])
        fine_ip, coarse_ip = gram
        A = [np.array([self._hat_moments(l - 1, c)[j] for c in cand]) for j in range(2)]
        rhs = list(self._hat_moments(l, 2 * k + 1))
        for c in near[:2]:
            A.append(np.array([coarse_ip(c, cc) for cc in cand]))
            rhs.append(fine_ip(2 * k + 1, c))
        return cand, np.linalg.solve(np.array(A), np.array(rhs))

    def _two_scale(self, l):
        fine = self._nodes[l]
        coarse = self._nodes[l - 1]
        fpos = {int(v): i for i, v in enumerate(fine)}
        cpos = {int(v): i for i, v in enumerate(coarse)}
        nf = fine.size
        rows, cols, vals = [], [], []
        # coarse hat at node c = 1/2 fine(2c-1) + fine(2c) + 1/2 fine(2c+1)
        for j, c in enumerate(coarse):
            for off, wgt in ((-1, 0.5), (0, 1.0), (1, 0.5)):
                f = 2 * int(c) + off
                if f in fpos:
                    rows.append(fpos[f])
                    cols.append(j)
                    vals.append(wgt)
        P = sp.csr_matrix((vals, (rows, cols)), shape=(nf, coarse.size))
        ncw = self.cells(l - 1)
        rows, cols, vals, pairs = [], [], [], []
        cset = set(int(v) for v in coarse)
        Pc = P.tocsc()
        Mf = self.fine_mass(l)
        MP = (Mf @ P).tocsc()
        Mc = (P.T @ MP).tocsr()

        def fine_ip(f, c):
            return MP[fpos[f], cpos[c]]

        def coarse_ip(c, cc):
            return Mc[cpos[c], cpos[cc]]

        for k in range(ncw):
            cand, a = self._coarse_combination(l, k, cset, (fine_ip, coarse_ip))
            pairs.append((tuple(cand), tuple(a)))
            rows.append(fpos[2 * k + 1])
            cols.append(k)
            vals.append(1.0)
            for c, ac in zip(cand, a):
                j = cpos[c]
                lo, hi = Pc.indptr[j], Pc.indptr[j + 1]
                for r, v in zip(Pc.indices[lo:hi], Pc.data[lo:hi]):
                    rows.append(r)
                    cols.append(k)
                    vals.append(-ac * v)
        Q = sp.csr_matrix((vals, (rows, cols)), shape=(nf, ncw))
        Q.sum_duplicates()
        return P, Q, pairs

    def wavelet_filter(self, level, k):
        """(coarse nodes, weights) of the raw wavelet (level, k)."""
        return self._pairs[level][k]

    # -- transforms -------------------------------------------------------
    def _compute_norms(self):
        norms = np.empty(self.offsets[-1])
        for l in range(self.max_level + 1):
            M = self.fine_mass(l)
            if l == 0:
                norms[: self.count(0)] = np.sqrt(M.diagonal())
            else:
                Q = self._wav[l]
                norms[self.offsets[l]: self.offsets[l + 1]] = np.sqrt(
                    np.asarray((Q.multiply(M @ Q)).sum(0)).ravel())
        return norms

    @property
    def norms(self):
        return self._norms

    def fine_mass(self, level):
        """P1 mass matrix of the active hats of a level."""
        return _p1_matrix(self._nodes[level], self.cells(level), self.h(level), "mass")

    def fine_stiffness(self, level):
        return _p1_matrix(self._nodes[level], self.cells(level), self.h(level), "stiff")

    def fine_advection(self, level, test=None):
        """C[i, j] = int phi_j' phi_i with rows from ``test`` nodes (same level)."""
        test_nodes = self._nodes[level] if test is None else test.nodes(level)
        return _p1_advection(self._nodes[level], test_nodes, self.cells(level), self.h(level))

    def synthesis(self, level=None):
        """Sparse map: normalised multilevel coefficients up to ``level`` ->
        hat coefficients (nodal values) on the level mesh."""
        level = self.max_level if level is None else level
        return self._synthesis(level)

    def _synthesis(self, level):
        cache = self.__dict__.setdefault("_syn_cache", {})
        if level in cache:
            return cache[level]
        n0 = self.count(0)
        if level == 0:
            T = sp.diags(1.0 / self._norms[:n0]).tocsc()
        else:
            prev = self._synthesis(level - 1)
            Q = self._wav[level] @ sp.diags(
                1.0 / self._norms[self.offsets[level]: self.offsets[level + 1]])
            T = sp.hstack([self._refine[level] @ prev, Q]).tocsc()
        cache[level] = T
        return T

    def _solver(self, level):
        cache = self.__dict__.setdefault("_lu_cache", {})
        if level not in cache:
            R = sp.hstack([self._refine[level], self._wav[level]]).tocsc()
            cache[level] = spla.splu(R)
        return cache[level]

    def analysis(self, nodal, level=None):
        """Inverse of :meth:`synthesis`: nodal values on the level mesh ->
        normalised multilevel coefficients (columns processed independently)."""
        level = self.max_level if level is None else level
        x = np.asarray(nodal, float)
        vec = x.ndim == 1
        x = x.reshape(x.shape[0], -1)
        parts = []
        for l in range(level, 0, -1):
            y = self._solver(l).solve(x)
            nc = self._refine[l].shape[1]
            parts.append(y[nc:] * self._norms[self.offsets[l]: self.offsets[l + 1], None])
            x = y[:nc]
        parts.append(x * self._norms[: self.count(0), None])
        out = np.vstack(parts[::-1])
        return out.ravel() if vec else out

    def reconstruct(self, coeffs, level=None):
        level = self.max_level if level is None else level
        return self.synthesis(level) @ np.asarray(coeffs, float)

    def node_coordinates(self, level):
        return self._nodes[level] * self.h(level)

    # -- functions ----------------------------------------------------------
    def eval(self, idx):
        """The L2 normalised primal function as a PiecewisePoly."""
        if isinstance(idx, (int, np.integer)):
            pos = int(idx)
            idx = self.index(pos)
        else:
            pos = self.flat(idx)
        l = idx.level
        col = self.synthesis(l)[:, pos].toarray().ravel()
        return self._nodal_to_pp(col, l)

    def _nodal_to_pp(self, vals, level):
        n = self.cells(level)
        full = np.zeros(n + 1)
        full[self._nodes[level]] = vals
        nz = np.nonzero(np.abs(full) > 0)[0]
        if nz.size == 0:
            return PiecewisePoly.zero(0.0, self.L)
        lo = max(nz[0] - 1, 0)
        hi = min(nz[-1] + 1, n)
        x = np.arange(lo, hi + 1) * self.h(level)
        return PiecewisePoly.from_nodal(x, full[lo: hi + 1])

    def function(self, coeffs, level=None):
        level = self.max_level if level is None else level
        return self._nodal_to_pp(self.reconstruct(coeffs, level), level)

    # -- audits -------------------------------------------------------------
    def support_lengths(self):
        out = np.empty(self.offsets[-1])
        for pos in range(out.size):
            f = self.eval(pos)
            out[pos] = f.b[-1] - f.b[0]
        return out

    def audit(self, level=None):
        """Invariant audit; returns a dict of measured constants and residuals."""
        level = self.max_level if level is None else level
        n = self.offsets[level + 1]
        T = self.synthesis(level)
        M = self.fine_mass(level)
        G = (T.T @ M @ T).toarray()
        fns = [self.eval(p) for p in range(n)]
        norm_err = float(np.max(np.abs(np.diag(G) - 1.0)))
        lev = self.levels[:n]
        supp = np.array([f.b[-1] - f.b[0] for f in fns])
        c_supp = float(np.max(supp * 2.0 ** lev / self.L))
        # wavelets touching a zero end only vanish against the linear
        # polynomial that satisfies the same boundary condition
        moments = 0.0
        t_up = PiecewisePoly.from_nodal([0.0, self.L], [0.0, self.L])
        t_down = PiecewisePoly.from_nodal([0.0, self.L], [self.L, 0.0])
        stable = self.variant == "stable"
        for f, l, k in zip(fns, lev, self.translations[:n]):
            if l == 0:
                continue
            at0 = stable and self.zero_left and k - 1 <= 0
            atL = stable and self.zero_right and k + 2 >= self.cells(l - 1)
            if at0:
                res = [abs(f.inner(t_up))]
            elif atL:
                res = [abs(f.inner(t_down))]
            else:
                res = [abs(f.integral()), abs(f.inner(t_up))]
            moments = max(moments, *res)
        sup0 = np.array([f.max_abs() for f in fns])
        sup1 = np.array([np.max(np.abs(f.derivative().c[:, 0])) for f in fns])
        c_b0 = float(np.max(sup0 / 2.0 ** (lev / 2)))
        c_b1 = float(np.max(sup1 / 2.0 ** (1.5 * lev)))
        overlap = 0
        for l in range(level + 1):
            sel = [f for f, ll in zip(fns, lev) if ll == l]
            pts = np.linspace(0, self.L, 8 * self.cells(l) + 1)[1:-1] + self.h(l) / 16
            pts = pts[pts < self.L]
            cnt = np.zeros(pts.size, int)
            for f in sel:
                cnt += (pts > f.b[0]) & (pts < f.b[-1])
            overlap = max(overlap, int(cnt.max()))
        bvals0 = max(abs(float(f(0.0))) for f in fns)
        bvalsL = max(abs(float(f(self.L, side="left"))) for f in fns)
        return {
            "norm_error": norm_err,
            "support_constant": c_supp,
            "overlap": overlap,
            "moment_residual": moments,
            "bernstein_c0": c_b0,
            "bernstein_c1": c_b1,
            "max_abs_at_0": bvals0,
            "max_abs_at_L": bvalsL,
            "gram_eigs": (float(np.linalg.eigvalsh(G).min()), float(np.linalg.eigvalsh(G).max())),
        }

    def gram(self, level=None, kind="mass"):
        level = self.max_level if level is None else level
        T = self.synthesis(level)
        K = self.fine_mass(level) if kind == "mass" else self.fine_stiffness(level)
        return (T.T @ K @ T).toarray()


def _p1_matrix(nodes, n, h, kind):
    full = n + 1
    if kind == "mass":
        main = np.full(full, 2 * h / 3)
        main[0] = main[-1] = h / 3
        off = np.full(full - 1, h / 6)
    else:
        main = np.full(full, 2 / h)
        main[0] = main[-1] = 1 / h
        off = np.full(full - 1, -1 / h)
    A = sp.diags([off, main, off], [-1, 0, 1], format="csr")
    return A[nodes][:, nodes]


def _p1_advection(trial_nodes, test_nodes, n, h):
    # int phi_j' phi_i over the full mesh: +-1/2 on neighbours, boundary diagonal
    full = n + 1
    main = np.zeros(full)
    main[0], main[-1] = -0.5, 0.5
    up = np.full(full - 1, 0.5)      # (i, i+1): int phi_{i+1}' phi_i = +1/2
    lo = np.full(full - 1, -0.5)
    C = sp.diags([lo, main, up], [-1, 0, 1], format="csr")
    return C[test_nodes][:, trial_nodes]


def build_basis(flavor, d=2, d_tilde=2, L=1.0, max_level=6, n0=4, variant="stable"):
    return IntervalBasis(flavor, d, d_tilde, L, max_level, n0, variant)


def dual_project(basis, k, f, fine_level=None, warn_tol=1e-6):
    """Coefficients <f, dual_lambda> for all |lambda| <= k.

    The duals are realised by interpolating f on a fine mesh and applying
    the analysis transform; coefficients above level k are discarded.
    Returns (coefficients, residual_estimate) where the residual compares
    against the same computation on a mesh one level coarser.
    """
    J = basis.max_level if fine_level is None else fine_level
    if k > J:
        raise ParameterError(f"projection level {k} exceeds fine level {J}")
    n = basis.offsets[k + 1]
    if J == k:
        coeffs = basis.analysis(f(basis.node_coordinates(J)), J)[:n]
        return coeffs, float("nan")
    c1 = basis.analysis(f(basis.node_coordinates(J)), J)[:n]
    c0 = basis.analysis(f(basis.node_coordinates(J - 1)), J - 1)[:n]
    res = float(np.linalg.norm(c1 - c0))
    if res > warn_tol * max(1.0, float(np.linalg.norm(c1))):
        import warnings
        warnings.warn(f"dual projection residual estimate {res:.2e}", RuntimeWarning, stacklevel=2)
    return c1, res


def rescale(basis, s):
    """Diagonal weights 2^{s |lambda|} in flat order."""
    if not 0.0 <= s <= 1.0:
        raise ParameterError("s must lie in [0, 1]")
    return 2.0 ** (s * basis.levels.astype(float))
