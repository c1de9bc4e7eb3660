import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cadfl.cfd import FrequencySet, cfd_layer, cfd_model, cfd_terms, char_fn, teacher_weights
from cadfl.errors import ProtocolError
from cadfl.wcp import CompressedLayer
from cadfl.wire import CompressedModel

tables = arrays(np.float64, st.integers(1, 12), elements=st.floats(-3, 3, allow_nan=False))


def closed_form(delta, sigma):
    # E|1 - exp(i t delta)|^2 = 2 - 2 E cos(t delta), t ~ N(0, sigma^2)
    return 2.0 * (1.0 - math.exp(-(sigma**2) * delta**2 / 2.0))


def test_char_fn_examples():
    t = np.linspace(-4, 4, 17)
    np.testing.assert_allclose(char_fn([0.0], t), np.ones_like(t))
    np.testing.assert_allclose(char_fn([-1.0, 1.0], t), np.cos(t) + 0j, atol=1e-15)
    np.testing.assert_allclose(np.abs(char_fn([0.7], t)), 1.0, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(mu=tables, t=st.floats(-20, 20))
def test_char_fn_modulus_bounded(mu, t):
    assert abs(char_fn(mu, t)) <= 1.0 + 1e-12


def test_frequencies_regenerate_bit_exactly():
    a = FrequencySet.draw(64, 1.5, (3, 7))
    b = FrequencySet.draw(64, 1.5, (3, 7))
    assert a.samples.tobytes() == b.samples.tobytes()
    assert FrequencySet.draw(64, 1.5, (3, 8)).samples.tobytes() != a.samples.tobytes()


@pytest.mark.parametrize("n", [256, 4096])
@pytest.mark.parametrize("delta", [0.5, 1.0, 2.0])
def test_singleton_estimate_matches_closed_form(n, delta):
    freqs = FrequencySet.draw(n, 1.0, (11, n))
    terms = cfd_terms([0.0], [delta], freqs)
    se = terms.std(ddof=1) / math.sqrt(n)
    assert abs(terms.mean() - closed_form(delta, 1.0)) < 3 * se


def test_unit_gap_value():
    assert closed_form(1.0, 1.0) == pytest.approx(0.7869, abs=1e-4)


@settings(max_examples=100, deadline=None)
@given(a=tables, b=tables, seed=st.integers(0, 1000))
def test_pseudometric_properties(a, b, seed):
    freqs = FrequencySet.draw(128, 1.0, seed)
    d = cfd_layer(a, b, freqs)
    assert 0.0 <= d <= 4.0
    assert d == cfd_layer(b, a, freqs)
    assert cfd_layer(a, a, freqs) == 0.0
    perm = np.random.default_rng(seed).permutation(a.size)
    assert cfd_layer(a[perm], b, freqs) == pytest.approx(d, abs=1e-12)


def _model(*tables_):
    layers = [CompressedLayer((1, len(t)), np.asarray(t, float), np.zeros(len(t), int)) for t in tables_]
    return CompressedModel(0, 0, layers, [np.zeros(len(t)) for t in tables_])


def test_model_level_average():
    freqs = FrequencySet.draw(512, 1.0, 0)
    a = _model([0.0, 1.0], [0.0, -1.0, 2.0])
    b = _model([0.0, 1.0], [0.0, 0.5, 0.7])
    assert cfd_model(a, a, freqs) == 0.0
    x = cfd_layer([0.0, -1.0, 2.0], [0.0, 0.5, 0.7], freqs)
    assert cfd_model(a, b, freqs) == pytest.approx(x / 2)
    swapped_a = _model([0.0, -1.0, 2.0], [0.0, 1.0])
    swapped_b = _model([0.0, 0.5, 0.7], [0.0, 1.0])
    assert cfd_model(swapped_a, swapped_b, freqs) == pytest.approx(cfd_model(a, b, freqs))
    assert cfd_model(a, b, freqs) == cfd_model(b, a, freqs)
    with pytest.raises(ProtocolError):
        cfd_model(a, _model([0.0, 1.0]), freqs)


def test_teacher_weights_examples():
    np.testing.assert_allclose(teacher_weights([0.2, 0.2]), [0.5, 0.5])
    s = 0.2 / (0.2 + 1e-8)
    expected = np.array([1.0, math.exp(-s)]) / (1.0 + math.exp(-s))
    np.testing.assert_allclose(teacher_weights([0.1, 0.3]), expected, rtol=1e-14)
    np.testing.assert_allclose(teacher_weights([0.1, 0.3]), [0.7311, 0.2689], atol=5e-5)
    np.testing.assert_array_equal(teacher_weights([0.4]), [1.0])


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(1, 10), elements=st.floats(0, 4, allow_nan=False)))
def test_teacher_weights_invariants(cfds):
    alpha = teacher_weights(cfds)
    assert abs(alpha.sum() - 1.0) < 1e-12
    assert np.all((alpha > 0) & (alpha <= 1))
    for i in range(cfds.size):
        for j in range(cfds.size):
            if cfds[i] < cfds[j] - 1e-6:
                assert alpha[i] > alpha[j]
