"""FLOP counting rules for one client round.

* forward pass: 2 FLOPs per active (unmasked) weight per sample; backward
  costs twice the forward, so training costs 6 per active weight per sample
* DKM: 2 * N * K per E/M pair, times the unroll length
* cluster matching: K_teacher * K_student * (N + 3) per teacher
* WCP: 2 * N * K per Lloyd iteration

Biases, activations, softmax and CFD evaluation are not counted.
"""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np


def forward_flops(mask: Sequence[np.ndarray]) -> int:
    return 2 * int(sum(int(np.count_nonzero(m)) for m in mask))


def train_flops(mask, n_samples: int) -> int:
    return 3 * forward_flops(mask) * int(n_samples)


def dkm_flops(n: int, k: int, t_dkm: int) -> int:
    return 2 * n * k * t_dkm


def match_flops(k_teacher: int, k_student: int, n: int) -> int:
    return k_teacher * k_student * (n + 3)


def wcp_flops(n: int, k: int, iterations: int) -> int:
    return 2 * n * k * iterations


def align_flops(layer_sizes: Iterable[int], k: int, t_dkm: int, n_teachers: int) -> int:
    """Alignment cost of one batch summed over clustered layers."""
    return sum(dkm_flops(n, k, t_dkm) + n_teachers * match_flops(k, k, n) for n in layer_sizes)


def account_flops(mask, n_samples: int, *, align_batches: int = 0, k: int = 16, t_dkm: int = 5,
                  n_teachers: int = 0, wcp_iterations: Sequence[int] = ()) -> int:
    """Total FLOPs for training ``n_samples`` plus optional alignment and WCP work."""
    sizes = [m.size for m in mask]
    total = train_flops(mask, n_samples)
    if align_batches and n_teachers:
        total += align_batches * align_flops(sizes, k, t_dkm, n_teachers)
    for n, iters in zip(sizes, wcp_iterations):
        total += wcp_flops(n, k, iters)
    return total
