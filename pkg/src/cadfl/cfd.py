"""Characteristic-function distance between centroid tables, and the
teacher weights derived from it."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ProtocolError
from .wcp import CompressedLayer

DEFAULT_SIGMA = 1.0
DEFAULT_NUM_FREQS = 1024
EPS = 1e-8


@dataclass(frozen=True)
class FrequencySet:
    samples: np.ndarray
    sigma: float
    seed: tuple

    @classmethod
    def draw(cls, n: int = DEFAULT_NUM_FREQS, sigma: float = DEFAULT_SIGMA, seed=0) -> "FrequencySet":
        if n < 1:
            raise ValueError("need at least one frequency")
        seed = tuple(seed) if isinstance(seed, (tuple, list)) else (int(seed),)
        rng = np.random.default_rng(np.random.SeedSequence(list(seed)))
        return cls(rng.normal(0.0, sigma, size=n), float(sigma), seed)

    def __len__(self) -> int:
        return len(self.samples)


def char_fn(centroids, t):
    """Empirical characteristic function of a set of scalar centroids."""
    mu = np.asarray(centroids, dtype=np.float64).ravel()
    t_arr = np.asarray(t, dtype=np.float64)
    phase = np.multiply.outer(t_arr, mu)
    return np.exp(1j * phase).mean(axis=-1)


def cfd_terms(a, b, freqs: FrequencySet) -> np.ndarray:
    """Per-frequency squared modulus |phi_a(t) - phi_b(t)|^2."""
    t = freqs.samples
    diff = char_fn(a, t) - char_fn(b, t)
    return diff.real**2 + diff.imag**2


def cfd_layer(a, b, freqs: FrequencySet) -> float:
    return float(cfd_terms(a, b, freqs).mean())


def _tables(model):
    tables = []
    for layer in model.layers:
        if not isinstance(layer, CompressedLayer):
            raise ProtocolError("CFD needs clustered layers; got a raw (dense) layer")
        tables.append(layer.centroids)
    return tables


def cfd_model(a, b, freqs: FrequencySet) -> float:
    """Unweighted mean of per-layer CFDs over the clustered weight layers."""
    ta, tb = _tables(a), _tables(b)
    if len(ta) != len(tb):
        raise ProtocolError(f"layer count mismatch: {len(ta)} vs {len(tb)}")
    if not ta:
        return 0.0
    return float(np.mean([cfd_layer(x, y, freqs) for x, y in zip(ta, tb)]))


def teacher_weights(cfds: Sequence[float], eps: float = EPS) -> np.ndarray:
    """Min-max normalise the distances, then softmax their negatives."""
    d = np.asarray(cfds, dtype=np.float64)
    if d.size == 0:
        raise ValueError("need at least one teacher")
    if np.any(d < 0):
        raise ValueError("CFD values must be non-negative")
    scores = (d - d.min()) / (d.max() - d.min() + eps)
    logits = -scores - (-scores).max()
    alpha = np.exp(logits)
    return alpha / alpha.sum()
