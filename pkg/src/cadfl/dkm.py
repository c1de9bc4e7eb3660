"""Differentiable k-means alignment of student weights to teacher centroids.

The student clusters its flattened layer weights with a fixed number of soft
E/M steps. Its clusters are matched against each teacher's clusters through a
blend of assignment overlap (soft Jaccard) and centroid proximity. The
matches, weighted by teacher importance, give target centroids, and the loss
is the mean squared error of reconstructing the weights from the student's
soft assignment and those targets.

:func:`align_loss_and_grad` returns the exact gradient of that loss with
respect to the weights, differentiating through the unrolled E/M chain and
the matching step. The student's initial centroids are treated as constants.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ShapeError
from .wcp import CompressedLayer

EPS = 1e-8


@dataclass(frozen=True)
class AlignParams:
    t_dkm: int = 5
    alpha_mix: float = 0.5
    beta_dist: float = 1.0
    eps: float = EPS
    sharpness: float = 1.0


@dataclass
class StudentClustering:
    centroids: np.ndarray
    assignment: np.ndarray
    iterations_run: int
    # per iteration: (centroids fed to the E-step, assignment, M-step denominator)
    trace: List[tuple] = field(default_factory=list, repr=False)


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def e_step(weights, centroids, sharpness: float = 1.0) -> np.ndarray:
    """Soft assignment: row-wise softmax of negative squared distances."""
    w = np.asarray(weights, dtype=np.float64).ravel()
    c = np.asarray(centroids, dtype=np.float64).ravel()
    if c.size < 1:
        raise ShapeError("need at least one centroid")
    return _softmax_rows(-sharpness * (w[:, None] - c[None, :]) ** 2)


def m_step(weights, assignment, eps: float = EPS) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64).ravel()
    a = np.asarray(assignment, dtype=np.float64)
    if a.shape[0] != w.size:
        raise ShapeError(f"assignment has {a.shape[0]} rows for {w.size} weights")
    return (a.T @ w) / (a.sum(axis=0) + eps)


def dkm_cluster(weights, c_init, t_dkm: int, eps: float = EPS, sharpness: float = 1.0) -> StudentClustering:
    """Run exactly ``t_dkm`` E/M alternations (no early stopping).

    The returned assignment is the one produced by the last E-step, and the
    centroids are its M-step update.
    """
    if t_dkm < 1:
        raise ValueError("t_dkm must be >= 1")
    w = np.asarray(weights, dtype=np.float64).ravel()
    c = np.asarray(c_init, dtype=np.float64).ravel().copy()
    trace = []
    a = None
    for _ in range(t_dkm):
        a = e_step(w, c, sharpness)
        den = a.sum(axis=0) + eps
        trace.append((c, a, den))
        c = (a.T @ w) / den
    return StudentClustering(c, a, t_dkm, trace)


def teacher_assignment(layer: CompressedLayer) -> np.ndarray:
    """One-hot assignment rebuilt from a teacher's index sequence."""
    idx = np.asarray(layer.indices).ravel()
    a = np.zeros((idx.size, layer.k))
    a[np.arange(idx.size), idx] = 1.0
    return a


@dataclass
class _MatchParts:
    num: np.ndarray
    den: np.ndarray
    below: Optional[np.ndarray]  # A_S < A_T elementwise, N x Kt x Ks; None for 0/1 teachers
    a_t: np.ndarray
    a_s: np.ndarray
    jac: np.ndarray
    sim: np.ndarray
    m: np.ndarray
    rowsum: np.ndarray
    w: np.ndarray


def _match_forward(a_t, c_t, a_s, c_s, alpha_mix, beta_dist, eps) -> _MatchParts:
    a_t = np.asarray(a_t, dtype=np.float64)
    a_s = np.asarray(a_s, dtype=np.float64)
    if a_t.shape[0] != a_s.shape[0]:
        raise ShapeError(f"teacher assigns {a_t.shape[0]} weights, student {a_s.shape[0]}")
    if not 0.0 <= alpha_mix <= 1.0 or beta_dist <= 0:
        raise ValueError("need alpha_mix in [0, 1] and beta_dist > 0")
    if np.all((a_t == 0.0) | (a_t == 1.0)):
        # min(a_s, a_t) = a_t * a_s for 0/1 teachers, and min + max = a_s + a_t
        below = None
        num = a_t.T @ a_s
        den = a_t.sum(axis=0)[:, None] + a_s.sum(axis=0)[None, :] - num + eps
    else:
        at = a_t[:, :, None]
        as_ = a_s[:, None, :]
        below = as_ < at
        num = np.where(below, as_, at).sum(axis=0)
        den = np.where(below, at, as_).sum(axis=0) + eps
    jac = num / den
    diff = np.asarray(c_t, dtype=np.float64)[:, None] - np.asarray(c_s, dtype=np.float64)[None, :]
    sim = np.exp(-beta_dist * diff**2)
    m = (jac + eps) ** alpha_mix * (sim + eps) ** (1.0 - alpha_mix)
    rowsum = m.sum(axis=1, keepdims=True)
    return _MatchParts(num, den, below, a_t, a_s, jac, sim, m, rowsum, m / rowsum)


def match_weights(a_t, c_t, a_s, c_s, alpha_mix: float = 0.5, beta_dist: float = 1.0,
                  eps: float = EPS) -> np.ndarray:
    """Row-normalised hybrid similarity between teacher (rows) and student (cols) clusters."""
    return _match_forward(a_t, c_t, a_s, c_s, alpha_mix, beta_dist, eps).w


def target_centroids(teachers: Sequence[Tuple[np.ndarray, np.ndarray]], alpha) -> np.ndarray:
    """Importance-weighted sum over teachers of ``w.T @ c_teacher``."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if len(teachers) != alpha.size or not teachers:
        raise ShapeError("need one importance weight per teacher")
    k_t = {np.asarray(c).size for _, c in teachers}
    if len(k_t) != 1:
        raise ShapeError(f"teachers disagree on K: {sorted(k_t)}")
    out = 0.0
    for a, (w, c) in zip(alpha, teachers):
        out = out + a * (np.asarray(w).T @ np.asarray(c, dtype=np.float64))
    return np.asarray(out)


def align_loss_and_grad(weights, c_init, teachers: Sequence[Tuple[np.ndarray, np.ndarray]], alpha,
                        params: AlignParams = AlignParams()):
    """Alignment loss of one layer and its gradient w.r.t. the flat weights.

    ``teachers`` holds ``(teacher_centroids, teacher_assignment)`` pairs.
    """
    w = np.asarray(weights, dtype=np.float64).ravel()
    n = w.size
    alpha = np.asarray(alpha, dtype=np.float64)
    eps, a_mix, beta = params.eps, params.alpha_mix, params.beta_dist

    student = dkm_cluster(w, c_init, params.t_dkm, eps, params.sharpness)
    a_s, c_s = student.assignment, student.centroids

    parts = [_match_forward(a_t, c_t, a_s, c_s, a_mix, beta, eps) for c_t, a_t in teachers]
    target = target_centroids([(p.w, c_t) for p, (c_t, _) in zip(parts, teachers)], alpha)

    recon = a_s @ target
    resid = w - recon
    loss = float(resid @ resid / n)

    # reverse pass
    g_recon = -2.0 * resid / n
    g_w = 2.0 * resid / n
    g_as = np.outer(g_recon, target)
    g_target = a_s.T @ g_recon
    g_cs = np.zeros_like(c_s)
    for a_t_weight, p, (c_t, _) in zip(alpha, parts, teachers):
        c_t = np.asarray(c_t, dtype=np.float64)
        g_match = a_t_weight * np.outer(c_t, g_target)
        # row normalisation
        g_m = (g_match - (g_match * p.w).sum(axis=1, keepdims=True)) / p.rowsum
        g_jac = g_m * a_mix * p.m / (p.jac + eps)
        g_sim = g_m * (1.0 - a_mix) * p.m / (p.sim + eps)
        diff = c_t[:, None] - c_s[None, :]
        g_cs += (g_sim * p.sim * 2.0 * beta * diff).sum(axis=0)
        # Jaccard: A_S enters the numerator where it is below A_T, the
        # denominator elsewhere
        via_num = g_jac / p.den
        via_den = g_jac * p.num / p.den**2
        through = via_num + via_den
        if p.below is None:
            g_as += (p.a_t @ through) * (p.a_s < 1.0)
        else:
            g_as += np.einsum("nij,ij->nj", p.below, through)
        g_as -= via_den.sum(axis=0)[None, :]

    g_w += _dkm_backward(w, student, g_as, g_cs, params.sharpness)
    return loss, g_w


def _dkm_backward(w, student: StudentClustering, g_a_last, g_c_last, sharpness):
    g_w = np.zeros_like(w)
    g_c = g_c_last.copy()
    g_a = g_a_last.copy()
    for step in range(len(student.trace) - 1, -1, -1):
        c_prev, a, den = student.trace[step]
        c_out = (a.T @ w) / den
        # M-step: c_out[k] = sum_n a[n,k] w[n] / den[k]
        g_a = g_a + (g_c / den)[None, :] * (w[:, None] - c_out[None, :])
        g_w += a @ (g_c / den)
        # E-step: a = softmax(-s (w - c_prev)^2)
        g_z = a * (g_a - (g_a * a).sum(axis=1, keepdims=True))
        d = w[:, None] - c_prev[None, :]
        g_w += (g_z * (-2.0 * sharpness) * d).sum(axis=1)
        g_c = (g_z * (2.0 * sharpness) * d).sum(axis=0)
        g_a = np.zeros_like(a)
    return g_w


def layer_teachers(layers: Sequence[CompressedLayer]):
    """``(centroids, one-hot assignment)`` pairs for a set of teacher layers."""
    return [(np.asarray(l.centroids, dtype=np.float64), teacher_assignment(l)) for l in layers]
