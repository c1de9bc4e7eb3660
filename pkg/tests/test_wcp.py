import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cadfl.errors import ConfigError, CorruptionError
from cadfl.wcp import (
    CompressedLayer,
    compress_layer,
    nearest_centroid,
    payload_bits,
    reduction_percent,
    wcp_compress,
    wcp_decompress,
)
from oracles import blocks, brute_force_kmeans, separable_instance

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def test_all_zero_layer_is_fully_pruned():
    res = wcp_compress(np.zeros(20), k=4)
    assert np.all(res.indices == 0)
    assert not res.mask.any()
    np.testing.assert_array_equal(res.centroids, [0.0, 1.0, 2.0, 3.0])


def test_small_example_matches_enumeration():
    w = np.array([-1.0, -1.0, 0.001, 1.0, 1.0])
    res = wcp_compress(w, k=3)
    labels, _ = brute_force_kmeans(w, 3, pinned_zero=True)
    assert blocks(res.indices, True) == blocks(labels, True)
    assert sorted(res.centroids) == pytest.approx([-1.0, 0.0, 1.0])
    assert res.centroids[0] == 0.0
    np.testing.assert_array_equal(res.indices, [1, 1, 0, 2, 2])
    np.testing.assert_array_equal(res.mask, [True, True, False, True, True])


def test_symmetric_weights_give_symmetric_centroids():
    rng = np.random.default_rng(0)
    half = np.abs(rng.normal(1.0, 0.5, 50)) + 0.1
    w = np.concatenate([half, -half])
    res = wcp_compress(w, k=3, tol=1e-12)
    c1, c2 = res.centroids[1:]
    assert c1 == pytest.approx(-c2, abs=1e-6)


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("k", [2, 3])
def test_pinned_lloyd_matches_enumeration_on_separable_data(seed, k):
    w = separable_instance(np.random.default_rng(seed), k, pinned_zero=True)
    res = wcp_compress(w, k)
    labels, _ = brute_force_kmeans(w, k, pinned_zero=True)
    assert blocks(res.indices, True) == blocks(labels, True)


@settings(max_examples=100, deadline=None)
@given(w=arrays(np.float64, st.integers(4, 60), elements=finite), k=st.integers(2, 8))
def test_invariants(w, k):
    if w.size < k:
        return
    res = wcp_compress(w, k)
    assert res.centroids[0] == 0.0
    assert np.all(np.isfinite(res.centroids))
    # nearest-centroid consistency
    dist = np.abs(w[:, None] - res.centroids[None, :])
    assert np.all(dist[np.arange(w.size), res.indices] <= dist.min(axis=1))
    np.testing.assert_array_equal(res.mask, res.indices != 0)
    # squared error never goes up across iterations
    assert all(b <= a + 1e-9 * max(1.0, a) for a, b in zip(res.sse_history, res.sse_history[1:]))


def test_errors():
    with pytest.raises(ConfigError):
        wcp_compress(np.array([]), 2)
    with pytest.raises(ConfigError):
        wcp_compress(np.ones(3), 4)
    with pytest.raises(ConfigError):
        wcp_compress(np.ones(3), 1)


def test_decompress_maps_to_nearest_converged_centroid():
    rng = np.random.default_rng(1)
    w = rng.normal(0, 0.3, (20, 30))
    layer, mask, _ = compress_layer(w, 16)
    rec = wcp_decompress(layer)
    oracle = layer.centroids[nearest_centroid(w.ravel(), layer.centroids)].reshape(w.shape)
    np.testing.assert_array_equal(rec, oracle)
    assert np.all(rec[~mask] == 0.0)


def test_decompress_trivial_cases():
    zero = CompressedLayer((2, 3), np.array([0.0, 0.5]), np.zeros(6, dtype=int))
    np.testing.assert_array_equal(wcp_decompress(zero), np.zeros((2, 3)))
    w = np.array([0.0, -2.0, 1.5, 3.0])
    res = wcp_compress(w, k=4, tol=1e-12)
    np.testing.assert_array_equal(res.centroids[res.indices], w)


def test_decompress_rejects_bad_indices():
    with pytest.raises(CorruptionError):
        wcp_decompress(CompressedLayer((1, 2), np.array([0.0, 1.0]), np.array([0, 2])))


def test_payload_bits():
    assert payload_bits(1000, 16, 32) == 4512
    assert payload_bits(77, 2, 32) == 2 * 32 + 77
    assert payload_bits(10**6, 16, 32) == 4_000_512
    assert reduction_percent(10**6, 16, 32) == pytest.approx(87.4984, abs=1e-9)
    assert payload_bits(10, 5, 8) == 5 * 8 + 10 * 3


@settings(max_examples=200, deadline=None)
@given(w=arrays(np.float64, st.integers(1, 40), elements=st.sampled_from([-2.0, -1.0, -0.5, 0.0, 0.25, 0.5, 1.0, 3.0]) | finite),
       c=arrays(np.float64, st.integers(1, 10), elements=st.sampled_from([-1.0, 0.0, 0.5, 1.0, 2.0]) | finite))
def test_nearest_centroid_matches_exhaustive_argmin(w, c):
    exhaustive = np.argmin(np.abs(w[:, None] - c[None, :]), axis=1)
    np.testing.assert_array_equal(nearest_centroid(w, c), exhaustive)
