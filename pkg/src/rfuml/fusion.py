"""Decision-level fusion of per-view memberships.

Training uses conflict-only weights, since uncertainty estimated against
possibly wrong supervision is unreliable; testing weights views by both
low uncertainty and low conflict.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import fuzzy
from .errors import InvalidInputError

WEIGHT_FUNCS = ("exp", "identity")
# score totals at or below this count as zero for the identity weight function
SCORE_TOTAL_EPS = 1e-12


@dataclass(frozen=True)
class ViewOpinion:
    membership: np.ndarray
    uncertainty: float
    conflict: float
    view_index: int


@dataclass(frozen=True)
class FusedOpinion:
    membership: np.ndarray
    uncertainty: float


def normalize_scores(scores: np.ndarray, g: str = "exp") -> np.ndarray:
    """Turn per-view scores (axis 0) into weights ``g(s_v) / sum_j g(s_j)``."""
    scores = np.asarray(scores, dtype=np.float64)
    if g == "exp":
        z = np.exp(scores - scores.max(axis=0, keepdims=True))
        return z / z.sum(axis=0, keepdims=True)
    if g == "identity":
        total = scores.sum(axis=0, keepdims=True)
        uniform = np.full_like(scores, 1.0 / scores.shape[0])
        live = total > SCORE_TOTAL_EPS
        return np.where(live, scores / np.where(live, total, 1.0), uniform)
    raise InvalidInputError(f"unknown weight function {g!r}; expected one of {WEIGHT_FUNCS}")


def rmf_weight_matrix(u: np.ndarray, o: np.ndarray, g: str = "exp") -> np.ndarray:
    """Test-time weights from ``(1 - u)(1 - o)``; arrays of shape ``(V, ...)``."""
    return normalize_scores((1.0 - np.asarray(u)) * (1.0 - np.asarray(o)), g)


def training_weight_matrix(o: np.ndarray, g: str = "exp") -> np.ndarray:
    """Train-time weights from ``1 - o``; uncertainty is ignored."""
    return normalize_scores(1.0 - np.asarray(o), g)


def _check_opinions(opinions: Sequence[ViewOpinion]) -> None:
    if len(opinions) < 2:
        raise InvalidInputError("fusion needs at least 2 views")
    idx = [op.view_index for op in opinions]
    if len(set(idx)) != len(idx):
        raise InvalidInputError("view indices must be unique")


def rmf_weights(opinions: Sequence[ViewOpinion], g: str = "exp") -> np.ndarray:
    _check_opinions(opinions)
    u = np.array([op.uncertainty for op in opinions])
    o = np.array([op.conflict for op in opinions])
    return rmf_weight_matrix(u, o, g)


def training_weights(opinions: Sequence[ViewOpinion], g: str = "exp") -> np.ndarray:
    _check_opinions(opinions)
    return training_weight_matrix(np.array([op.conflict for op in opinions]), g)


def fuse(opinions: Sequence[ViewOpinion], weights) -> FusedOpinion:
    """Weighted sum of memberships; the fused uncertainty comes from its credibility."""
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(opinions),):
        raise InvalidInputError(f"{w.size} weights for {len(opinions)} opinions")
    ms = np.stack([np.asarray(op.membership, dtype=np.float64) for op in opinions])
    fused = np.clip(np.tensordot(w, ms, axes=1), 0.0, 1.0)
    return FusedOpinion(fused, fuzzy.uncertainty(fuzzy.credibility(fused)))


def opinions_from_memberships(memberships: Sequence) -> list[ViewOpinion]:
    """Build per-view opinions for a single instance from its V membership vectors."""
    ms = np.stack([fuzzy._unit_interval(m, "membership") for m in memberships])
    o = fuzzy.view_conflicts(ms[:, None, :])[:, 0]
    u = fuzzy.uncertainty(fuzzy.credibility(ms))
    return [ViewOpinion(ms[v], float(u[v]), float(o[v]), v) for v in range(len(ms))]


def fuse_batch(memberships: np.ndarray, mode: str = "rmf", g: str = "exp"):
    """Fuse a ``(V, n, K)`` stack. Returns ``(fused (n, K), weights (V, n), fused uncertainty (n,))``.

    ``mode`` is ``"rmf"`` (test rule), ``"training"`` (conflict-only rule) or
    ``"average"``.  Zero membership vectors count as fully conflicting.
    """
    ms = np.asarray(memberships, dtype=np.float64)
    v = ms.shape[0]
    if mode == "average" or v == 1:
        w = np.full(ms.shape[:2], 1.0 / v)
    else:
        o = fuzzy.view_conflicts(ms, strict=False)
        if mode == "rmf":
            u = fuzzy.uncertainty(fuzzy.credibility(ms))
            w = rmf_weight_matrix(u, o, g)
        elif mode == "training":
            w = training_weight_matrix(o, g)
        else:
            raise InvalidInputError(f"unknown fusion mode {mode!r}")
    fused = np.clip(np.einsum("vn,vnk->nk", w, ms), 0.0, 1.0)
    return fused, w, fuzzy.uncertainty(fuzzy.credibility(fused))
