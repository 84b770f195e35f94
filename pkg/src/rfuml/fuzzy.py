"""Fuzzy-set quantities computed from classifier outputs.

All functions operate on the last axis, so a single vector of shape ``(K,)``
and a batch of shape ``(n, K)`` are both accepted.  Memberships are graded
degrees in ``[0, 1]`` and are *not* required to sum to one.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.special import entr

from .errors import DegenerateInputError, InvalidInputError

RANGE_TOL = 1e-9
LN2 = np.log(2.0)


def _finite(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return arr


def _unit_interval(x, name: str) -> np.ndarray:
    """Validate entries in [0, 1], clamping float drift up to RANGE_TOL."""
    arr = _finite(x, name)
    if np.any(arr < -RANGE_TOL) or np.any(arr > 1.0 + RANGE_TOL):
        raise InvalidInputError(f"{name} has entries outside [0, 1]")
    return np.clip(arr, 0.0, 1.0)


def _check_classes(arr: np.ndarray, name: str) -> None:
    if arr.ndim == 0 or arr.shape[-1] < 2:
        raise InvalidInputError(f"{name} needs at least 2 classes, got shape {arr.shape}")


def membership_from_logits(logits, p: float = 2.0) -> np.ndarray:
    """Map logits to memberships via ``ReLU(a / ||a||_p)``.

    A logit vector with zero norm maps to the uniform vector ``1/K``.
    """
    a = _finite(logits, "logits")
    _check_classes(a, "logits")
    if not p >= 1:
        raise InvalidInputError(f"norm order must be >= 1, got {p}")
    k = a.shape[-1]
    norm = np.linalg.norm(a, ord=p, axis=-1, keepdims=True)
    zero = norm == 0.0
    m = np.maximum(a / np.where(zero, 1.0, norm), 0.0)
    return np.where(zero, 1.0 / k, m)


def max_excluding(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """For every class k, ``max{m_l : l != k}`` and the index attaining it.

    On ties the lowest index wins.  Inputs are assumed valid.
    """
    top = np.argmax(m, axis=-1)
    masked = m.copy()
    np.put_along_axis(masked, top[..., None], -np.inf, axis=-1)
    second = np.argmax(masked, axis=-1)
    k = m.shape[-1]
    cls = np.arange(k)
    is_top = cls == top[..., None]
    idx = np.where(is_top, second[..., None], top[..., None])
    values = np.take_along_axis(m, idx, axis=-1)
    return values, idx


def necessity(m) -> np.ndarray:
    """Certainty that the sample does not belong to the other classes: ``1 - max_{l!=k} m_l``."""
    m = _unit_interval(m, "membership")
    _check_classes(m, "membership")
    others, _ = max_excluding(m)
    return 1.0 - others


def credibility(m) -> np.ndarray:
    """Category credibility, the mean of possibility (membership) and necessity."""
    m = _unit_interval(m, "membership")
    _check_classes(m, "membership")
    others, _ = max_excluding(m)
    return 0.5 * (m + 1.0 - others)


def uncertainty(c) -> np.ndarray | float:
    """Normalized binary-entropy uncertainty in [0, 1].

    ``u = sum_k H(c_k) / (K ln 2)`` with ``0 ln 0 = 0``.
    """
    c = _unit_interval(c, "credibility")
    if c.ndim == 0 or c.shape[-1] < 1:
        raise InvalidInputError("credibility must be a non-empty vector")
    h = entr(c) + entr(1.0 - c)
    u = np.clip(h.sum(axis=-1) / (c.shape[-1] * LN2), 0.0, 1.0)
    return float(u) if u.ndim == 0 else u


def cosine_matrix(memberships: np.ndarray, strict: bool = True) -> np.ndarray:
    """Pairwise cosine similarity between views, shape ``(V, V, n)`` for input ``(V, n, K)``.

    With ``strict=False`` a zero vector is treated as orthogonal to everything.
    """
    norms = np.linalg.norm(memberships, axis=-1)  # (V, n)
    zero = norms == 0.0
    if strict and np.any(zero):
        raise DegenerateInputError("cosine undefined for a zero membership vector")
    dots = np.einsum("vnk,wnk->vwn", memberships, memberships)
    denom = norms[:, None, :] * norms[None, :, :]
    return np.where(denom > 0.0, dots / np.where(denom > 0.0, denom, 1.0), 0.0)


def view_conflicts(memberships, strict: bool = True) -> np.ndarray:
    """Conflict of every view against the rest, shape ``(V, n)`` for input ``(V, n, K)``."""
    ms = _unit_interval(memberships, "memberships")
    if ms.ndim != 3:
        raise InvalidInputError("memberships must have shape (V, n, K)")
    v = ms.shape[0]
    if v < 2:
        raise InvalidInputError("conflict needs at least 2 views")
    return np.clip(conflicts_from_cosines(cosine_matrix(ms, strict=strict)), 0.0, 1.0)


def conflicts_from_cosines(cos: np.ndarray) -> np.ndarray:
    """``o_v = mean_{j != v} (1 - cos_vj)`` from a ``(V, V, n)`` cosine matrix.

    The diagonal is masked rather than subtracted so that symmetric inputs
    give bit-identical conflicts.
    """
    v = cos.shape[0]
    off = ~np.eye(v, dtype=bool)[:, :, None]
    return np.where(off, 1.0 - cos, 0.0).sum(axis=1) / (v - 1)


def conflict(own, others: Sequence) -> float:
    """Mean cosine dissimilarity between one view's membership and each of the others'."""
    own = _unit_interval(own, "own membership")
    if own.ndim != 1:
        raise InvalidInputError("own membership must be a vector")
    if len(others) < 1:
        raise InvalidInputError("conflict needs at least one other view")
    rest = [_unit_interval(o, "other membership") for o in others]
    if any(o.shape != own.shape for o in rest):
        raise InvalidInputError("membership vectors differ in length")
    stack = np.stack([own] + rest)
    return float(view_conflicts(stack[:, None, :], strict=True)[0, 0])


def labels_from_onehot(y) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim == 0 or not np.all((y == 0) | (y == 1)) or not np.all(y.sum(axis=-1) == 1):
        raise InvalidInputError("labels must be one-hot with exactly one active entry")
    return np.argmax(y, axis=-1)


def training_credibility_from_labels(m: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Training-phase credibility with class indices instead of one-hot labels.

    The true class keeps the test-time form; every other class k uses
    ``(m_k + 1 - m_true) / 2``.
    """
    others, _ = max_excluding(m)
    true_m = np.take_along_axis(m, labels[..., None], axis=-1)
    r = 0.5 * (m + 1.0 - true_m)
    hot = np.arange(m.shape[-1]) == labels[..., None]
    return np.where(hot, 0.5 * (m + 1.0 - others), r)


def training_credibility(m, y) -> np.ndarray:
    """Label-aware credibility used by the training loss."""
    m = _unit_interval(m, "membership")
    _check_classes(m, "membership")
    y = np.asarray(y)
    if y.shape != m.shape:
        raise InvalidInputError(f"label shape {y.shape} != membership shape {m.shape}")
    labels = labels_from_onehot(y)
    return training_credibility_from_labels(m, np.asarray(labels))
