"""Space-time index sets and finitely supported coefficient vectors.

Indices are stored as integer rows ``(t_flat, x_flat_1, ..., x_flat_n)``
of flat positions in the temporal and spatial bases.  Flat positions are
ordered by level and then translation, so lexicographic order on rows is
lexicographic order on ``(time.level, time.translation, space...)``.

A sparse set is a union of full level blocks.  For ``n = 1`` the blocks
of every set built here are prefixes in space: time level ``p`` carries
all spatial levels ``q <= caps[p]``.  That shape is what the fast block
kernels in :mod:`stwave.assembly` rely on.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .wavelets import WaveletIndex


@dataclass(frozen=True, order=True)
class SpaceTimeIndex:
    time: WaveletIndex
    space: tuple

    def __post_init__(self):
        if not self.space:
            raise ParameterError("need at least one spatial component")

    def __str__(self):
        xs = ";".join(f"{s.level},{s.translation}" for s in self.space)
        return f"t:{self.time.level},{self.time.translation} x:{xs}"

    @classmethod
    def parse(cls, line):
        try:
            tpart, xpart = line.split()
            tl, tk = tpart[2:].split(",")
            space = tuple(WaveletIndex(int(a), int(b))
                          for a, b in (s.split(",") for s in xpart[2:].split(";")))
        except ValueError as exc:
            raise ParameterError(f"cannot parse index line {line!r}") from exc
        return cls(WaveletIndex(int(tl), int(tk)), space)


def _level_range(basis, level):
    return np.arange(basis.offsets[level], basis.offsets[level + 1])


class IndexSet:
    """Finite set of space-time indices over fixed bases.

    ``blocks`` lists the full level blocks ``(p, (q_1, ..., q_n))`` the set
    is made of, or is ``None`` for sets with arbitrary members.
    """

    def __init__(self, time_basis, space_bases, keys, descriptor="adaptive", blocks=None):
        self.time_basis = time_basis
        self.space_bases = tuple(space_bases)
        keys = np.asarray(keys, dtype=np.int64).reshape(-1, 1 + len(self.space_bases))
        keys = np.unique(keys, axis=0)
        self.keys = keys
        self.descriptor = descriptor
        self.blocks = None if blocks is None else tuple(sorted(blocks))
        self._lookup = None

    @property
    def n(self):
        return len(self.space_bases)

    def __len__(self):
        return self.keys.shape[0]

    @property
    def cardinality(self):
        return len(self)

    # -- structure -------------------------------------------------------
    @property
    def caps(self):
        """``{p: Q(p)}`` for prefix-shaped sets in one space dimension."""
        if self.blocks is None or self.n != 1:
            return None
        caps = {}
        for p, (q,) in self.blocks:
            caps[p] = max(caps.get(p, -1), q)
        for p, Q in caps.items():
            if sum(1 for bp, _ in self.blocks if bp == p) != Q + 1:
                return None
        return dict(sorted(caps.items()))

    def is_downward_closed(self):
        if self.blocks is None:
            return False
        bl = set(self.blocks)
        for p, qs in bl:
            if p > 0 and (p - 1, qs) not in bl:
                return False
            for i, q in enumerate(qs):
                if q > 0 and (p, qs[:i] + (q - 1,) + qs[i + 1:]) not in bl:
                    return False
        return True

    # -- membership -------------------------------------------------------
    def _flat_row(self, idx):
        return (self.time_basis.flat(idx.time),) + tuple(
            b.flat(s) for b, s in zip(self.space_bases, idx.space))

    def _radix(self):
        sizes = [self.time_basis.offsets[-1]] + [b.offsets[-1] for b in self.space_bases]
        return np.cumprod([1] + sizes[::-1][:-1])[::-1].astype(np.int64)

    def encode(self, keys):
        """Mixed radix integer codes; monotone in the lexicographic key order."""
        keys = np.asarray(keys, dtype=np.int64).reshape(-1, 1 + self.n)
        return keys @ self._radix()

    def position(self, key_row):
        """Position of a key row, or -1."""
        return int(self.positions(np.asarray(key_row).reshape(1, -1))[0])

    def positions(self, keys):
        if self._lookup is None:
            self._lookup = self.encode(self.keys)
        keys = np.asarray(keys, dtype=np.int64).reshape(-1, 1 + self.n)
        sizes = np.array([self.time_basis.offsets[-1]] + [b.offsets[-1] for b in self.space_bases])
        ok = np.all((keys >= 0) & (keys < sizes), axis=1)
        codes = self.encode(np.where(ok[:, None], keys, 0))
        if len(self) == 0:
            return -np.ones(codes.size, np.int64)
        pos = np.minimum(np.searchsorted(self._lookup, codes), len(self) - 1)
        return np.where(ok & (self._lookup[pos] == codes), pos, -1).astype(np.int64)

    def __contains__(self, idx):
        if isinstance(idx, SpaceTimeIndex):
            try:
                row = self._flat_row(idx)
            except ParameterError:
                return False
        else:
            row = tuple(idx)
        if len(row) != 1 + self.n or len(self) == 0:
            return False
        return self.position(row) >= 0

    def index(self, i):
        row = self.keys[i]
        return SpaceTimeIndex(self.time_basis.index(row[0]),
                              tuple(b.index(r) for b, r in zip(self.space_bases, row[1:])))

    def __iter__(self):
        for i in range(len(self)):
            yield self.index(i)

    def level_arrays(self):
        """Per-key levels: time level column and spatial level columns."""
        tl = self.time_basis.levels[self.keys[:, 0]]
        xl = np.stack([b.levels[self.keys[:, 1 + i]] for i, b in enumerate(self.space_bases)], 1)
        return tl, xl

    # -- text format -------------------------------------------------------
    def to_text(self):
        return "".join(f"{self.index(i)}\n" for i in range(len(self)))

    @classmethod
    def from_text(cls, text, time_basis, space_bases, descriptor="adaptive"):
        obj = cls(time_basis, space_bases, np.zeros((0, 1 + len(space_bases))), descriptor)
        rows = [obj._flat_row(SpaceTimeIndex.parse(l)) for l in text.splitlines() if l.strip()]
        return cls(time_basis, space_bases, rows, descriptor)

    def with_time_basis(self, time_basis, extra_levels=0):
        """Same blocks over another temporal basis, each spatial block
        also attached to ``extra_levels`` finer time levels."""
        if self.blocks is None:
            raise ParameterError("only block-built sets can be transferred")
        bl = set()
        for p, qs in self.blocks:
            for e in range(extra_levels + 1):
                if p + e <= time_basis.max_level:
                    bl.add((p + e, qs))
        return from_blocks(time_basis, self.space_bases, bl, self.descriptor + "+Y")


def from_blocks(time_basis, space_bases, blocks, descriptor):
    blocks = sorted(set(blocks))
    parts = []
    for p, qs in blocks:
        if p > time_basis.max_level or any(q > b.max_level for q, b in zip(qs, space_bases)):
            raise ParameterError(f"block {(p, qs)} exceeds the built basis levels")
        axes = [_level_range(time_basis, p)] + [_level_range(b, q) for b, q in zip(space_bases, qs)]
        grid = np.meshgrid(*axes, indexing="ij")
        parts.append(np.stack([g.ravel() for g in grid], 1))
    keys = np.concatenate(parts) if parts else np.zeros((0, 1 + len(space_bases)), np.int64)
    return IndexSet(time_basis, space_bases, keys, descriptor, blocks)


def rule_b_time_weight(d_t=2, d_x=2, m=1):
    """Cost of one time level measured in spatial levels.

    One time level buys ``d_t - 1/2`` orders of accuracy, one spatial level
    ``d_x - m``; weighting time levels by the ratio balances both errors.
    """
    return (d_t - 0.5) / (d_x - m)


def sparse_blocks(k, rule="B", d_t=2, d_x=2, m=1, n=1, epsilon=0.05, mode="sparse"):
    if k < 0:
        raise ParameterError("k must be nonnegative")
    if d_x - m <= 0:
        raise ParameterError(f"need d_x - m > 0, got d_x={d_x}, m={m}")
    if rule == "B":
        wt = rule_b_time_weight(d_t, d_x, m)
        pmax = int(math.floor(k / wt + 1e-12))
        out = []
        for p in range(pmax + 1):
            budget = k - wt * p
            for qs in itertools.product(range(k + 1), repeat=n):
                if sum(qs) <= budget + 1e-12:
                    out.append((p, qs))
        return out
    if rule == "A":
        lo = d_t / (d_x - m) + epsilon
        hi = 1.0 / n - epsilon
        if lo > hi:
            raise ParameterError(
                f"empty admissible window for l/k: need d_t/(d_x-m)+eps <= 1/n-eps, "
                f"got {lo:g} > {hi:g}")
        ell = int(math.floor(0.5 * (lo + hi) * k))
        out = []
        for p in range(k + 1):
            for qs in itertools.product(range(ell + 1), repeat=n):
                if mode == "literal":
                    out.append((p, qs))
                elif ell == 0:
                    if p / max(k, 1) <= 1:
                        out.append((p, qs))
                elif p / max(k, 1) + max(qs) / ell <= 1 + 1e-12:
                    out.append((p, qs))
        return out
    if rule == "full":
        return [(p, qs) for p in range(k + 1) for qs in itertools.product(range(k + 1), repeat=n)]
    raise ParameterError(f"unknown rule {rule!r}")


def build_sparse_set(k, rule="B", d_t=2, d_x=2, m=1, n=1, epsilon=0.05, *,
                     time_basis, space_bases, mode="sparse"):
    """Sparse tensor index set of level ``k``.

    Rule ``B`` keeps the blocks with ``w p + q_1 + ... + q_n <= k`` where
    ``w = (d_t - 1/2)/(d_x - m)``, so ``k`` is the finest spatial level.
    Rule ``A`` uses the coupling window ``l/k`` of the isotropic variant
    and raises when that window is empty.  ``rule="full"`` is the full
    tensor product up to level ``k`` in every direction.
    """
    if isinstance(space_bases, (list, tuple)):
        space_bases = tuple(space_bases)
    else:
        space_bases = (space_bases,) * n
    if len(space_bases) != n:
        raise ParameterError("one spatial basis per dimension required")
    blocks = sparse_blocks(k, rule, d_t, d_x, m, n, epsilon, mode)
    desc = {"A": "sparse-A", "B": "sparse-B", "full": "full-tensor"}[rule]
    return from_blocks(time_basis, space_bases, blocks, f"{desc}(k={k})")


def block_satisfies(p, qs, k, d_t=2, d_x=2, m=1):
    """Defining inequality of the rule-B set."""
    return rule_b_time_weight(d_t, d_x, m) * p + sum(qs) <= k + 1e-12


class SparseCoeffVector:
    """Finitely supported coefficients, keyed like :class:`IndexSet` rows.

    Zeros are never stored.  ``order`` caches positions by decreasing
    magnitude with ties broken lexicographically by key.
    """

    def __init__(self, keys, values, width=None):
        values = np.asarray(values, dtype=float).ravel()
        if width is None:
            width = np.asarray(keys).shape[1] if np.asarray(keys).size else 2
        keys = np.asarray(keys, dtype=np.int64).reshape(-1, width)
        if keys.shape[0] != values.size:
            raise ParameterError("keys and values disagree in length")
        nz = values != 0
        keys, values = keys[nz], values[nz]
        if keys.shape[0]:
            uk, inv = np.unique(keys, axis=0, return_inverse=True)
            vals = np.zeros(uk.shape[0])
            np.add.at(vals, inv.ravel(), values)
            nz = vals != 0
            keys, values = uk[nz], vals[nz]
        self.keys, self.values = keys, values
        self._order = None

    @classmethod
    def zeros(cls, width=2):
        return cls(np.zeros((0, width), np.int64), np.zeros(0), width)

    @classmethod
    def from_dense(cls, index_set, dense):
        """Nonzero entries of a dense vector over ``index_set`` (whose keys
        are already sorted and unique, so no deduplication is needed)."""
        dense = np.asarray(dense, dtype=float).ravel()
        if dense.size != len(index_set):
            raise ParameterError("dense vector length differs from the index set")
        nz = dense != 0
        out = cls.__new__(cls)
        out.keys, out.values, out._order = index_set.keys[nz], dense[nz], None
        return out

    def to_dense(self, index_set):
        out = np.zeros(len(index_set))
        if len(self):
            pos = index_set.positions(self.keys)
            if np.any(pos < 0):
                raise ParameterError("vector has entries outside the index set")
            out[pos] = self.values
        return out

    @property
    def width(self):
        return self.keys.shape[1]

    def __len__(self):
        return self.values.size

    @property
    def support_size(self):
        return len(self)

    def items(self):
        return zip(map(tuple, self.keys.tolist()), self.values.tolist())

    @property
    def order(self):
        if self._order is None:
            cols = [self.keys[:, i] for i in range(self.width - 1, -1, -1)]
            self._order = np.lexsort(cols + [-np.abs(self.values)])
        return self._order

    def norm(self):
        return float(np.linalg.norm(self.values))

    def __add__(self, other):
        return SparseCoeffVector(np.concatenate([self.keys, other.keys]),
                                 np.concatenate([self.values, other.values]), self.width)

    def __sub__(self, other):
        return self + other * -1.0

    def __mul__(self, a):
        return SparseCoeffVector(self.keys, self.values * float(a), self.width)

    __rmul__ = __mul__

    def take(self, positions):
        positions = np.sort(np.asarray(positions, dtype=np.int64))
        return SparseCoeffVector(self.keys[positions], self.values[positions], self.width)

    def tail_norms(self):
        """``e[N] = ||v - v_N||`` for N = 0..len(v)."""
        a = np.abs(self.values[self.order])[::-1] ** 2
        return np.sqrt(np.concatenate([np.cumsum(a)[::-1], [0.0]]))


def best_n_term(v, N):
    if N < 0:
        raise ParameterError("N must be nonnegative")
    if N >= len(v):
        return v
    return v.take(v.order[:N])


def coarsen_to(v, delta):
    """Smallest best-N-term truncation with ``||v - v_N|| <= delta``."""
    e = v.tail_norms()
    N = int(np.argmax(e <= delta))
    return best_n_term(v, N)


def as_norm_estimate(v, s):
    """Finite-grid value of ``sup_N (N + 1)^s ||v - v_N||``."""
    if s <= 0:
        raise ParameterError("s must be positive")
    if len(v) == 0:
        return 0.0
    e = v.tail_norms()[:-1]
    return float(np.max(np.arange(1, e.size + 1) ** s * e))
