"""Weight clustering with a zero-pinned centroid (pruned k-means).

Each layer's flattened weights are clustered into K scalar centroids.
Centroid 0 is fixed at exactly 0.0; weights assigned to it are pruned.
Only the centroid table and the per-weight index sequence leave the client.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, CorruptionError

DEFAULT_K = 16
DEFAULT_MAX_ITERS = 50
DEFAULT_TOL = 1e-6


@dataclass
class CompressedLayer:
    shape: tuple
    centroids: np.ndarray  # K floats, centroids[0] == 0
    indices: np.ndarray  # N ints in [0, K)

    @property
    def k(self) -> int:
        return len(self.centroids)

    @property
    def n(self) -> int:
        return int(self.shape[0] * self.shape[1])


@dataclass
class RawLayer:
    """Uncompressed weights; used only by the dense-exchange baseline."""

    shape: tuple
    values: np.ndarray


@dataclass
class WCPResult:
    centroids: np.ndarray
    indices: np.ndarray
    mask: np.ndarray
    iterations: int
    sse_history: list = field(default_factory=list)


def nearest_centroid(weights: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Index of the closest centroid per weight; the lowest index wins ties.

    Bisects the sorted table, then settles each weight among its three
    neighbouring candidates with exact distance comparisons. Rounded
    distances are monotone away from the weight, so a tie can only extend
    past the window through its edge; those rows fall back to a full scan.
    """
    weights = np.asarray(weights, dtype=np.float64)
    centroids = np.asarray(centroids, dtype=np.float64)
    order = np.argsort(centroids, kind="stable")
    vals = centroids[order]
    keep = np.concatenate([[True], vals[1:] != vals[:-1]])  # first of equal values has the lowest index
    order, vals = order[keep], vals[keep]
    if vals.size == 1:
        return np.full(weights.shape, order[0], dtype=np.int64)
    pos = np.searchsorted((vals[:-1] + vals[1:]) / 2, weights)
    raw = pos[:, None] + np.arange(-1, 2)
    cand = np.clip(raw, 0, vals.size - 1)
    dist = np.abs(weights[:, None] - vals[cand])
    best = dist.min(axis=1, keepdims=True)
    ids = np.where(dist == best, order[cand], np.iinfo(np.int64).max).min(axis=1)
    hit = dist == best
    edge = (hit[:, 0] & (raw[:, 0] > 0)) | (hit[:, 2] & (raw[:, 2] < vals.size - 1))
    if edge.any():
        ids[edge] = np.argmin(np.abs(weights[edge, None] - centroids[None, :]), axis=1)
    return ids


def _quantile_init(weights: np.ndarray, k: int) -> np.ndarray:
    nonzero = weights[weights != 0.0]
    table = np.zeros(k)
    if nonzero.size == 0:
        table[1:] = np.arange(1, k, dtype=float)
    else:
        table[1:] = np.quantile(nonzero, np.linspace(0.0, 1.0, k + 1)[1:-1])
    return table


def _farthest_point_init(weights: np.ndarray, k: int) -> np.ndarray:
    table = np.zeros(k)
    gap = np.abs(weights)
    for j in range(1, k):
        pick = int(np.argmax(gap))
        table[j] = weights[pick]
        gap = np.minimum(gap, np.abs(weights - table[j]))
    return table


class _SortedWeights:
    """Sorted copy of a layer with prefix sums, so each cluster is a slice."""

    def __init__(self, w):
        self.w = np.sort(w)
        self.s1 = np.concatenate([[0.0], np.cumsum(self.w)])
        self.s2 = np.concatenate([[0.0], np.cumsum(self.w * self.w)])

    def segments(self, centroids):
        """Per-centroid ``(start, stop)`` of the nearest-centroid assignment in sorted order."""
        k = centroids.size
        order = np.argsort(centroids, kind="stable")
        vals = centroids[order]
        keep = np.concatenate([[True], vals[1:] != vals[:-1]])
        order, vals = order[keep], vals[keep]
        mids = (vals[:-1] + vals[1:]) / 2
        # a weight on the midpoint belongs to the lower centroid index
        cuts = np.where(order[:-1] < order[1:], np.searchsorted(self.w, mids, side="right"),
                        np.searchsorted(self.w, mids, side="left"))
        start = np.zeros(k, dtype=np.int64)
        stop = np.zeros(k, dtype=np.int64)
        start[order] = np.concatenate([[0], cuts])
        stop[order] = np.concatenate([cuts, [self.w.size]])
        return start, stop

    def stats(self, start, stop):
        return stop - start, self.s1[stop] - self.s1[start], self.s2[stop] - self.s2[start]

    def sse(self, centroids, start, stop) -> float:
        n, s1, s2 = self.stats(start, stop)
        return float(np.sum(np.maximum(s2 - 2 * centroids * s1 + centroids ** 2 * n, 0.0)))


def _lloyd(w: np.ndarray, centroids: np.ndarray, max_iters: int, tol: float):
    sw = _SortedWeights(w)
    start, stop = sw.segments(centroids)
    history = [sw.sse(centroids, start, stop)]
    iterations = 0
    for iterations in range(1, max_iters + 1):
        new = centroids.copy()
        counts, sums, _ = sw.stats(start, stop)
        filled = counts[1:] > 0
        new[1:][filled] = sums[1:][filled] / counts[1:][filled]
        empty = np.flatnonzero(~filled) + 1
        if empty.size:
            owner = np.empty(sw.w.size, dtype=np.int64)  # assignment in sorted order
            for j in range(new.size):
                owner[start[j]:stop[j]] = j
            for j in empty:
                resid = np.abs(sw.w - new[owner])
                worst = int(np.argmax(resid))
                if resid[worst] == 0.0:
                    break
                new[j] = sw.w[worst]
                owner[worst] = j
        new[0] = 0.0
        shift = float(np.max(np.abs(new - centroids)))
        centroids = new
        start, stop = sw.segments(centroids)
        history.append(sw.sse(centroids, start, stop))
        if shift < tol:
            break
    return centroids, nearest_centroid(w, centroids), iterations, history


def wcp_compress(
    weights: np.ndarray,
    k: int = DEFAULT_K,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
) -> WCPResult:
    """Pruned Lloyd iteration over a flat weight vector.

    Lloyd runs from two deterministic starts: evenly spaced quantiles of the
    nonzero weights, and farthest-point traversal seeded at the pinned zero.
    The run with the lower final squared error wins (quantile start on ties).
    A nonzero centroid that loses all of its weights is re-seeded at the
    weight that is currently worst represented. Each run stops when no
    centroid moves by ``tol`` or more, or after ``max_iters`` updates; the
    returned indices are the nearest-centroid assignment of the final table.
    ``iterations`` counts the updates of both runs.
    """
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.size == 0:
        raise ConfigError("cannot cluster an empty weight vector")
    if k < 2:
        raise ConfigError(f"K must be >= 2, got {k}")
    if w.size < k:
        raise ConfigError(f"need at least K={k} weights, got {w.size}")
    if max_iters < 1 or tol <= 0:
        raise ConfigError("max_iters must be >= 1 and tol > 0")

    runs = [_lloyd(w, _quantile_init(w, k), max_iters, tol)]
    if np.any(w != 0.0):
        runs.append(_lloyd(w, _farthest_point_init(w, k), max_iters, tol))
    best = min(runs, key=lambda run: run[3][-1])
    centroids, idx, _, history = best
    return WCPResult(centroids, idx, idx != 0, sum(run[2] for run in runs), history)


def compress_layer(weight_matrix: np.ndarray, k: int = DEFAULT_K, max_iters: int = DEFAULT_MAX_ITERS,
                   tol: float = DEFAULT_TOL, *, wire_precision: bool = True):
    """Compress one weight matrix. Returns ``(CompressedLayer, mask, iterations)``.

    With ``wire_precision`` the table is rounded to float32 and the indices
    are re-derived against the rounded table, so the layer survives the wire
    codec unchanged.
    """
    res = wcp_compress(weight_matrix, k, max_iters, tol)
    centroids = res.centroids
    idx = res.indices
    if wire_precision:
        centroids = centroids.astype(np.float32).astype(np.float64)
        idx = nearest_centroid(np.asarray(weight_matrix, dtype=np.float64).ravel(), centroids)
    layer = CompressedLayer(tuple(weight_matrix.shape), centroids, idx.astype(np.int64))
    return layer, (idx != 0).reshape(weight_matrix.shape), res.iterations


def wcp_decompress(layer) -> np.ndarray:
    if isinstance(layer, RawLayer):
        return layer.values.reshape(layer.shape).astype(np.float64)
    idx = np.asarray(layer.indices)
    if idx.size != layer.n:
        raise CorruptionError(f"{idx.size} indices for a {layer.shape} layer")
    if idx.size and (idx.min() < 0 or idx.max() >= layer.k):
        raise CorruptionError(f"index out of range for a table of {layer.k} centroids")
    return np.asarray(layer.centroids, dtype=np.float64)[idx].reshape(layer.shape)


def index_bits(k: int) -> int:
    return max(1, (k - 1).bit_length())


def payload_bits(n: int, k: int, b: int = 32) -> int:
    """Bits for a K-entry table of B-bit values plus N packed indices."""
    if n < 1 or k < 2 or b < 1:
        raise ConfigError("payload_bits needs N >= 1, K >= 2, B >= 1")
    return k * b + n * index_bits(k)


def reduction_percent(n: int, k: int, b: int = 32) -> float:
    return 100.0 * (1.0 - payload_bits(n, k, b) / (n * b))
