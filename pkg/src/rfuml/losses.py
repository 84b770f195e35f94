"""Category credibility learning losses.

Per-sample losses are summed over classes and averaged over the batch.
Credibilities are clamped to ``[LOG_EPS, 1 - LOG_EPS]`` before the logs.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import InvalidInputError

LOG_EPS = 1e-7


def _as_pair(r, y) -> tuple[np.ndarray, np.ndarray]:
    r = np.atleast_2d(np.asarray(r, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if r.shape != y.shape:
        raise InvalidInputError(f"credibility shape {r.shape} != label shape {y.shape}")
    if r.shape[0] == 0:
        raise InvalidInputError("empty batch")
    return r, y


def per_sample_ccl(r, y) -> np.ndarray:
    """Class-summed binary cross-entropy between credibility and one-hot labels, shape ``(n,)``."""
    r, y = _as_pair(r, y)
    rc = np.clip(r, LOG_EPS, 1.0 - LOG_EPS)
    return -(y * np.log(rc) + (1.0 - y) * np.log(1.0 - rc)).sum(axis=-1)


def per_sample_ccl_grad(r, y) -> np.ndarray:
    """Derivative of :func:`per_sample_ccl` with respect to ``r`` (zero where the clamp is active)."""
    r, y = _as_pair(r, y)
    rc = np.clip(r, LOG_EPS, 1.0 - LOG_EPS)
    inside = (r > LOG_EPS) & (r < 1.0 - LOG_EPS)
    return np.where(inside, -y / rc + (1.0 - y) / (1.0 - rc), 0.0)


def ccl_loss(r_batch, y_batch) -> float:
    return float(per_sample_ccl(r_batch, y_batch).mean())


def warmup_gamma(epoch: int, warmup_epochs: int) -> float:
    """Fused-branch coefficient ``min(t / N_w, 1)``."""
    if warmup_epochs < 1:
        raise InvalidInputError("warmup_epochs must be >= 1")
    if epoch < 1:
        raise InvalidInputError("epochs are counted from 1")
    return min(epoch / warmup_epochs, 1.0)


def total_loss(fused_r, per_view_r: Sequence, y, gamma: float) -> float:
    """``gamma * L(fused) + sum_v L(view v)``."""
    fused = ccl_loss(fused_r, y)
    views = [ccl_loss(r, y) for r in per_view_r]
    return float(gamma * fused + sum(views))


def robust_total_loss(fused_r, per_view_r: Sequence, y, gamma: float, d) -> float:
    """Like :func:`total_loss` with per-view terms weighted sample-wise by ``d`` of shape ``(n, V)``.

    The fused term is left unweighted.
    """
    d = np.atleast_2d(np.asarray(d, dtype=np.float64))
    y2 = np.atleast_2d(y)
    if d.shape != (y2.shape[0], len(per_view_r)):
        raise InvalidInputError(f"importance weights need shape {(y2.shape[0], len(per_view_r))}, got {d.shape}")
    if np.any(d < 0) or np.any(d > 1) or not np.all(np.isfinite(d)):
        raise InvalidInputError("importance weights must lie in [0, 1]")
    fused = ccl_loss(fused_r, y)
    views = [float((d[:, v] * per_sample_ccl(r, y)).mean()) for v, r in enumerate(per_view_r)]
    return float(gamma * fused + sum(views))
