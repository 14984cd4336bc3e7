import itertools

import numpy as np
import pytest

from stwave.errors import ParameterError
from stwave.tensor_index import (IndexSet, SpaceTimeIndex, SparseCoeffVector, as_norm_estimate,
                                 best_n_term, block_satisfies, build_sparse_set, coarsen_to,
                                 sparse_blocks)
from stwave.wavelets import WaveletIndex, build_basis


@pytest.fixture(scope="module")
def bb():
    return (build_basis("temporal_trial", L=8.0, max_level=10),
            build_basis("spatial_dirichlet", max_level=10))


def test_k0_is_coarsest_block(bb):
    bt, bx = bb
    X = build_sparse_set(0, "B", time_basis=bt, space_bases=bx)
    assert X.blocks == ((0, (0,)),)
    assert len(X) == bt.count(0) * bx.count(0)


def test_rule_b_cardinality_matches_enumeration(bb):
    bt, bx = bb
    X = build_sparse_set(3, "B", time_basis=bt, space_bases=bx)
    brute = sum(bt.count(p) * bx.count(q) for p in range(4) for q in range(4)
                if 1.5 * p + q <= 3)
    assert len(X) == brute


def test_cardinality_growth(bb):
    bt, bx = bb
    sizes = [len(build_sparse_set(k, "B", time_basis=bt, space_bases=bx)) for k in range(6, 11)]
    ratios = np.array(sizes[1:]) / np.array(sizes[:-1])
    assert np.all(np.abs(ratios - 2) <= 0.3)


def test_rule_a_empty_window():
    with pytest.raises(ParameterError, match="empty admissible window"):
        sparse_blocks(4, "A")


def test_rule_a_nonempty_window():
    blocks = sparse_blocks(6, "A", d_t=1, d_x=4, m=1, epsilon=0.01)
    literal = sparse_blocks(6, "A", d_t=1, d_x=4, m=1, epsilon=0.01, mode="literal")
    assert set(blocks) <= set(literal) and len(blocks) < len(literal)


def test_membership_matches_inequality(bb, rng):
    bt, bx = bb
    k = 7
    X = build_sparse_set(k, "B", time_basis=bt, space_bases=bx)
    assert X.is_downward_closed()
    keys = np.stack([rng.integers(0, bt.offsets[6], 10_000),
                     rng.integers(0, bx.offsets[9], 10_000)], 1)
    pos = X.positions(keys)
    expect = [block_satisfies(bt.levels[a], (bx.levels[b],), k) for a, b in keys]
    np.testing.assert_array_equal(pos >= 0, expect)


def test_text_round_trip(bb):
    bt, bx = bb
    X = build_sparse_set(2, "B", time_basis=bt, space_bases=bx)
    text = X.to_text()
    assert text.splitlines()[0].startswith("t:0,0 x:0,")
    Y = IndexSet.from_text(text, bt, (bx,))
    np.testing.assert_array_equal(X.keys, Y.keys)
    idx = SpaceTimeIndex(WaveletIndex(0, 1), (WaveletIndex(1, 2),))
    assert SpaceTimeIndex.parse(str(idx)) == idx
    assert idx in X


def _vec(vals):
    keys = np.stack([np.arange(len(vals)), np.zeros(len(vals), int)], 1)
    return SparseCoeffVector(keys, vals)


def test_best_n_term_basics():
    v = _vec([3.0, -2.0, 2.0, 1.0])
    assert len(best_n_term(v, 0)) == 0
    assert best_n_term(v, 10) is v
    two = best_n_term(v, 2)
    assert best_n_term(two, 2).norm() == two.norm()
    # ties broken lexicographically: keeps keys 0 and 1
    assert sorted(two.keys[:, 0].tolist()) == [0, 1]
    best = min(np.sqrt(sum(x * x for i, x in enumerate(v.values) if i not in s))
               for s in itertools.combinations(range(4), 2))
    assert (v - two).norm() == pytest.approx(best)


def test_tail_monotone(rng):
    v = _vec(rng.standard_normal(50))
    e = [(v - best_n_term(v, N)).norm() for N in range(51)]
    assert np.all(np.diff(e) <= 1e-15)
    np.testing.assert_allclose(v.tail_norms(), e, atol=1e-12)
    c = coarsen_to(v, 0.5)
    assert (v - c).norm() <= 0.5 and (len(c) == 0 or (v - best_n_term(v, len(c) - 1)).norm() > 0.5)


def test_no_explicit_zeros():
    v = _vec([1.0, 0.0, 2.0])
    assert len(v) == 2


def test_as_norm():
    assert as_norm_estimate(SparseCoeffVector.zeros(), 1.0) == 0.0
    assert as_norm_estimate(_vec([0.7]), 0.5) == pytest.approx(0.7)
    geo = _vec(2.0 ** -np.arange(30))
    vals = [as_norm_estimate(geo, s) for s in (0.25, 0.5, 1.0, 2.0)]
    assert np.all(np.diff(vals) >= 0) and vals[-1] > vals[0]
    with pytest.raises(ParameterError):
        as_norm_estimate(geo, 0.0)
