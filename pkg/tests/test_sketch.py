import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import rank_error
from paxboost.errors import EmptySketchError, SketchInputError
from paxboost.sketch import (
    MERGE_SLACK,
    BinEdges,
    QuantileSketch,
    extract_bins,
    merge_sketches,
    sketch_insert,
    sketch_query,
)


def _allowed(eps, n):
    # With eps*n below one half even an exact summary can miss a fractional
    # target rank by up to 0.5.
    return max(eps * n, 0.5) + 1e-9


def _sketch(values, eps):
    return QuantileSketch(eps).extend(np.asarray(values, dtype=float))


def _band_ok(sk: QuantileSketch) -> bool:
    cap = math.floor(2 * sk.epsilon * sk.count)
    first_last = {0, len(sk.g) - 1}
    return all(g + d <= max(cap, 1) or i in first_last for i, (g, d) in enumerate(zip(sk.g, sk.delta)))


def test_query_one_to_hundred():
    sk = QuantileSketch(0.1)
    for v in range(1, 101):
        sketch_insert(sk, v)
    assert 40 <= sketch_query(sk, 0.5) <= 60


@pytest.mark.parametrize("phi", [0.0, 0.3, 1.0])
def test_singleton(phi):
    assert sketch_query(_sketch([5.0], 0.01), phi) == 5.0


def test_two_values_extremes():
    sk = _sketch([1.0, 2.0], 0.01)
    assert sketch_query(sk, 0.0) == 1.0
    assert sketch_query(sk, 1.0) == 2.0


def test_ten_thousand_uniform_quartile():
    rng = np.random.default_rng(0)
    data = rng.uniform(size=10_000)
    v = sketch_query(_sketch(data, 0.01), 0.25)
    assert rank_error(np.sort(data), v, 0.25) <= 100


def test_thousand_sorted_integers():
    v = sketch_query(_sketch(np.arange(1, 1001), 0.05), 0.9)
    assert 850 <= v <= 950


def test_rejects_non_finite_and_bad_phi():
    with pytest.raises(SketchInputError):
        QuantileSketch(0.1).insert(float("nan"))
    with pytest.raises(SketchInputError):
        QuantileSketch(0.1).extend([1.0, float("inf")])
    with pytest.raises(SketchInputError):
        QuantileSketch(0.0)
    with pytest.raises(SketchInputError):
        sketch_query(_sketch([1.0], 0.1), 1.5)


def test_empty_sketch_errors():
    with pytest.raises(EmptySketchError):
        sketch_query(QuantileSketch(0.1), 0.5)
    with pytest.raises(EmptySketchError):
        extract_bins(QuantileSketch(0.1), 4)
    with pytest.raises(EmptySketchError):
        merge_sketches([QuantileSketch(0.1), QuantileSketch(0.2)])


def test_count_and_space():
    rng = np.random.default_rng(1)
    sk = _sketch(rng.normal(size=20_000), 0.01)
    assert sk.count == 20_000
    # O((1/eps) log(eps n)) tuples, far fewer than n
    assert len(sk) < 20 * (1 / 0.01) * math.log(0.01 * 20_000)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=600), st.sampled_from([0.2, 0.05, 0.01]))
def test_rank_error_and_invariant_hold(values, eps):
    sk = _sketch(values, eps)
    assert _band_ok(sk)
    assert sk.values == sorted(sk.values)
    data = np.sort(values)
    for phi in (0.0, 0.1, 0.37, 0.5, 0.9, 1.0):
        assert rank_error(data, sketch_query(sk, phi), phi) <= _allowed(eps, len(values))


@settings(max_examples=25, deadline=None)
@given(st.lists(st.lists(st.floats(-1e3, 1e3), min_size=0, max_size=300), min_size=2, max_size=4),
       st.sampled_from([0.1, 0.02]))
def test_merged_rank_error(parts, eps):
    if not any(parts):
        return
    merged = merge_sketches([_sketch(p, eps) for p in parts])
    data = np.sort(np.concatenate([np.asarray(p, float) for p in parts]))
    assert merged.count == data.size
    assert merged.min == data[0] and merged.max == data[-1]
    for phi in np.linspace(0, 1, 11):
        assert rank_error(data, merged.query(phi), phi) <= _allowed(eps + MERGE_SLACK, data.size)


def test_merge_with_empty_is_identity():
    rng = np.random.default_rng(2)
    sk = _sketch(rng.normal(size=500), 0.05)
    merged = merge_sketches([sk, QuantileSketch(0.05)])
    phis = np.linspace(0, 1, 21)
    np.testing.assert_array_equal(merged.query_many(phis), sk.query_many(phis))


def test_merge_disjoint_ranges():
    merged = merge_sketches([_sketch(np.arange(1, 51), 0.05), _sketch(np.arange(51, 101), 0.05)])
    v = merged.query(0.5)
    assert rank_error(np.arange(1.0, 101.0), v, 0.5) <= 0.05 * 100


def test_merge_of_copies_answers_like_one_copy():
    rng = np.random.default_rng(3)
    data = rng.exponential(size=400)
    sk = _sketch(data, 0.05)
    merged = merge_sketches([_sketch(data, 0.05) for _ in range(3)])
    for phi in (0.1, 0.5, 0.9):
        tripled = np.sort(np.tile(data, 3))
        assert rank_error(tripled, merged.query(phi), phi) <= 0.05 * tripled.size
        assert rank_error(np.sort(data), sk.query(phi), phi) <= 0.05 * data.size


def test_merge_uses_coarsest_epsilon():
    merged = merge_sketches([_sketch([1.0, 2.0], 0.01), _sketch([3.0], 0.1)])
    assert merged.epsilon == 0.1
    assert merge_sketches([_sketch([1.0], 0.01)], epsilon=0.2).epsilon == 0.2


def test_identical_inserts_give_identical_sketches():
    rng = np.random.default_rng(4)
    data = rng.normal(size=3000)
    a, b = _sketch(data, 0.01), _sketch(data, 0.01)
    assert a.entries == b.entries
    c = QuantileSketch(0.01)
    for v in data:
        c.insert(v)
    assert c.entries == a.entries


def test_payload_round_trip():
    sk = _sketch(np.random.default_rng(5).normal(size=700), 0.02)
    back = QuantileSketch.from_payload(sk.to_payload())
    assert back.entries == sk.entries and back.count == sk.count and back.epsilon == sk.epsilon


# -- bins --------------------------------------------------------------------


def test_constant_data_single_interval():
    edges = extract_bins(_sketch([7.0] * 50, 0.1), 10)
    assert edges.n_bins == 1
    assert list(edges.boundaries) == [7.0]
    assert edges.lo == 7.0 and edges.upper[0] == 7.0


def test_quartile_bins_near_exact_quartiles():
    data = np.arange(1.0, 101.0)
    rng = np.random.default_rng(6)
    edges = extract_bins(_sketch(rng.permutation(data), 0.01), 4)
    # 100 distinct values exceed 4 bins, so edges are quantiles at 1/4, 2/4, 3/4, 1
    assert edges.n_bins == 4
    for edge, target in zip(edges.upper[:3], (25, 50, 75)):
        assert abs(edge - target) <= 0.01 * 100 + 1
    assert edges.upper[-1] == 100.0 and edges.lo == 1.0


def test_one_bin_spans_min_to_max():
    edges = extract_bins(_sketch(np.arange(10.0), 0.1), 1)
    assert edges.n_bins == 1
    assert (edges.lo, edges.upper[-1]) == (0.0, 9.0)


def test_low_cardinality_keeps_every_value():
    rng = np.random.default_rng(7)
    data = rng.integers(0, 40, size=20_000).astype(float)
    sk = _sketch(data, 1 / 50)
    edges = sk.extract_bins(50)
    np.testing.assert_array_equal(edges.upper, np.unique(data))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1e4, 1e4), min_size=1, max_size=400), st.integers(1, 40))
def test_bins_strictly_increasing_and_cover_data(values, n_bins):
    edges = extract_bins(_sketch(values, 0.02), n_bins)
    assert edges.n_bins <= n_bins
    assert np.all(np.diff(edges.upper) > 0)
    assert np.all(np.diff(edges.boundaries) > 0)
    assert edges.lo <= min(values) and edges.upper[-1] >= max(values)
    idx = edges.locate(np.asarray(values))
    assert np.all((idx >= 0) & (idx < edges.n_bins))


def test_bin_locate_convention():
    edges = BinEdges(0.0, np.array([1.0, 2.0, 3.0]))
    # bin 0 is [0, 1]; bin k is (upper[k-1], upper[k]]
    np.testing.assert_array_equal(edges.locate(np.array([0.0, 1.0, 1.5, 2.0, 3.0])), [0, 0, 1, 1, 2])
    np.testing.assert_array_equal(edges.midpoints(), [0.5, 1.5, 2.5])
