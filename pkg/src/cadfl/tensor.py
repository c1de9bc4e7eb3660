"""Small dense MLP classifier with exact manual gradients.

Hidden layers use tanh, the output layer produces logits that feed a mean
softmax cross-entropy. Every function that touches weights takes a prune mask;
masked weights are multiplied by zero in the forward pass and receive zero
gradient. Biases are never masked.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import NumericError, ProtocolError, ShapeError

Mask = List[np.ndarray]


@dataclass
class ModelParams:
    """Ordered dense layers. ``weights[l]`` has shape (fan_in, fan_out)."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ShapeError("weights and biases must have the same layer count")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[1]:
                raise ShapeError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeError(f"layer {i} input dim does not match layer {i - 1} output dim")

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def shapes(self) -> List[Tuple[int, int]]:
        return [w.shape for w in self.weights]

    @property
    def num_classes(self) -> int:
        return self.weights[-1].shape[1]

    def copy(self) -> "ModelParams":
        return ModelParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def check_congruent(self, other: "ModelParams") -> None:
        if self.shapes != other.shapes:
            raise ShapeError(f"shape mismatch: {self.shapes} vs {other.shapes}")

    @classmethod
    def zeros_like(cls, other: "ModelParams") -> "ModelParams":
        return cls([np.zeros_like(w) for w in other.weights], [np.zeros_like(b) for b in other.biases])


# Gradients live in the same container as parameters.
Gradient = ModelParams


def init_mlp(sizes: Sequence[int], rng: np.random.Generator) -> ModelParams:
    """Glorot-uniform weights and zero biases for the given layer widths."""
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ModelParams(weights, biases)


def full_mask(model: ModelParams) -> Mask:
    return [np.ones(w.shape, dtype=bool) for w in model.weights]


def apply_mask(model: ModelParams, mask: Mask) -> ModelParams:
    _check_mask(model, mask)
    return ModelParams([w * m for w, m in zip(model.weights, mask)], [b.copy() for b in model.biases])


def _check_mask(model: ModelParams, mask: Mask) -> None:
    if len(mask) != model.num_layers or any(m.shape != w.shape for m, w in zip(mask, model.weights)):
        raise ShapeError("prune mask does not match model shapes")


@dataclass
class ForwardCache:
    model: ModelParams
    mask: Mask
    features: np.ndarray
    labels: np.ndarray
    weights: List[np.ndarray]  # masked weights actually used
    activations: List[np.ndarray]  # input plus each hidden output
    probs: np.ndarray


def _logits(model: ModelParams, mask: Mask, x: np.ndarray):
    if x.ndim != 2 or x.shape[1] != model.weights[0].shape[0]:
        raise ShapeError(f"features of shape {x.shape} do not fit input dim {model.weights[0].shape[0]}")
    _check_mask(model, mask)
    weights = [w * m for w, m in zip(model.weights, mask)]
    acts = [x]
    h = x
    for w, b in zip(weights[:-1], model.biases[:-1]):
        h = np.tanh(h @ w + b)
        acts.append(h)
    z = h @ weights[-1] + model.biases[-1]
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite logits")
    return z, weights, acts


def forward_loss(model: ModelParams, mask: Mask, batch: Tuple[np.ndarray, np.ndarray]):
    """Mean cross-entropy of the masked model on ``batch``.

    Returns ``(loss, cache)``; the cache is consumed by :func:`backward`.
    """
    x, y = batch
    if len(x) == 0:
        raise ShapeError("empty batch")
    if len(y) != len(x):
        raise ShapeError("features and labels differ in length")
    z, weights, acts = _logits(model, mask, x)
    z = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    log_p = z - log_norm[:, None]
    loss = float(-log_p[np.arange(len(y)), y].mean())
    cache = ForwardCache(model, mask, x, y, weights, acts, np.exp(log_p))
    return loss, cache


def backward(model: ModelParams, mask: Mask, cache: ForwardCache, batch) -> Gradient:
    x, y = batch
    if cache.model is not model or cache.mask is not mask or cache.features is not x or cache.labels is not y:
        raise ProtocolError("stale forward cache: backward must follow forward_loss on the same inputs")
    n = len(y)
    delta = cache.probs.copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n
    gw: List[np.ndarray] = [None] * model.num_layers  # type: ignore[list-item]
    gb: List[np.ndarray] = [None] * model.num_layers  # type: ignore[list-item]
    for layer in range(model.num_layers - 1, -1, -1):
        a_in = cache.activations[layer]
        gw[layer] = (a_in.T @ delta) * mask[layer]
        gb[layer] = delta.sum(axis=0)
        if layer:
            delta = (delta @ cache.weights[layer].T) * (1.0 - a_in**2)
    return ModelParams(gw, gb)


def apply_update(
    model: ModelParams,
    grad: Gradient,
    mask: Mask,
    lr: float,
    gamma: float,
    ref: ModelParams,
) -> ModelParams:
    """One step of ``theta - lr * (grad + gamma * (theta - ref))``; masked weights end at 0."""
    model.check_congruent(grad)
    model.check_congruent(ref)
    _check_mask(model, mask)
    if lr <= 0 or gamma < 0:
        raise ValueError("need lr > 0 and gamma >= 0")
    weights = [
        np.where(m, w - lr * (g + gamma * (w - r)), 0.0)
        for w, g, r, m in zip(model.weights, grad.weights, ref.weights, mask)
    ]
    biases = [b - lr * (g + gamma * (b - r)) for b, g, r in zip(model.biases, grad.biases, ref.biases)]
    return ModelParams(weights, biases)


def predict(model: ModelParams, mask: Mask, features: np.ndarray) -> np.ndarray:
    z, _, _ = _logits(model, mask, features)
    # np.argmax returns the first maximum, i.e. the lowest class index on ties
    return np.argmax(z, axis=1)


def evaluate(model: ModelParams, mask: Mask, dataset: Tuple[np.ndarray, np.ndarray]) -> float:
    x, y = dataset
    if len(y) == 0:
        raise ShapeError("cannot evaluate on an empty dataset")
    return float(np.mean(predict(model, mask, x) == y))


def loss_only(model: ModelParams, mask: Optional[Mask], batch) -> float:
    return forward_loss(model, mask if mask is not None else full_mask(model), batch)[0]
