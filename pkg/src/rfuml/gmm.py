"""Two-component 1-D Gaussian mixture over average losses, and the clean/conflicting split."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit, logsumexp

from .errors import DegenerateInputError, InvalidInputError, NumericFailure
from .io import atomic_writer, fmt

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GmmFit:
    """Component 0 is the clean (lower-mean) component."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    n_iter: int
    log_likelihood: float
    history: tuple[float, ...] = ()

    def canonical(self) -> "GmmFit":
        order = np.argsort(self.means, kind="stable")
        return GmmFit(self.weights[order], self.means[order], self.variances[order],
                      self.n_iter, self.log_likelihood, self.history)


def average_view_losses(trace) -> np.ndarray:
    """Mean over the epoch axis of an ``(N, V, T)`` loss trace."""
    trace = np.asarray(trace, dtype=np.float64)
    if trace.ndim != 3 or trace.size == 0:
        raise InvalidInputError(f"loss trace must be a non-empty (N, V, T) array, got shape {trace.shape}")
    if not np.all(np.isfinite(trace)) or np.any(trace < 0):
        raise InvalidInputError("loss trace entries must be finite and non-negative")
    return trace.mean(axis=2)


def _log_joint(x, weights, means, variances):
    # (N, 2): log pi_k + log N(x; mu_k, var_k)
    diff = x[:, None] - means[None, :]
    return np.log(weights)[None, :] - 0.5 * (_LOG_2PI + np.log(variances)[None, :] + diff**2 / variances[None, :])


def fit_gmm(losses, max_iters: int = 200, tol: float = 1e-6) -> GmmFit:
    """EM for a two-component univariate GMM.

    Initialization is deterministic: means at the 25th/75th percentiles, both
    variances at the data variance, equal mixing weights.  Variances are
    floored at ``1e-6 * var(x)``.  Log-likelihoods are reported in data units.
    """
    x = np.asarray(losses, dtype=np.float64).ravel()
    if x.size < 4:
        raise InvalidInputError(f"need at least 4 values to fit a mixture, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("losses must be finite")
    if np.all(x == x[0]):
        raise DegenerateInputError("all losses are identical; no conflict signal to separate")
    # EM runs on standardized values so that very tight clusters keep full precision;
    # the variance floor of 1e-6 in standard units is 1e-6 * var(x) in data units.
    center, scale = float(x.mean()), float(x.std())
    z = (x - center) / scale
    floor = 1e-6

    means = np.percentile(z, [25.0, 75.0])
    if means[0] == means[1]:
        means = np.array([z.min(), z.max()])
    variances = np.full(2, max(float(z.var()), floor))
    weights = np.array([0.5, 0.5])

    joint = _log_joint(z, weights, means, variances)
    ll = float(logsumexp(joint, axis=1).sum())
    history = [ll]
    n_iter = 0
    for n_iter in range(1, max_iters + 1):
        resp = np.exp(joint - logsumexp(joint, axis=1, keepdims=True))
        nk = resp.sum(axis=0)
        nk = np.maximum(nk, 1e-300)
        weights = np.clip(nk / z.size, 1e-12, 1.0)
        weights = weights / weights.sum()
        means = (resp * z[:, None]).sum(axis=0) / nk
        variances = np.maximum((resp * (z[:, None] - means[None, :]) ** 2).sum(axis=0) / nk, floor)
        joint = _log_joint(z, weights, means, variances)
        new_ll = float(logsumexp(joint, axis=1).sum())
        if not np.isfinite(new_ll):
            raise NumericFailure("mixture log-likelihood became non-finite")
        if new_ll < ll - 1e-8 * (1.0 + abs(ll)):
            raise NumericFailure(f"EM log-likelihood decreased at iteration {n_iter}: {ll} -> {new_ll}")
        history.append(new_ll)
        converged = abs(new_ll - ll) < tol
        ll = new_ll
        if converged:
            break
    offset = x.size * np.log(scale)
    means = means * scale + center
    variances = variances * scale**2
    history = tuple(h - offset for h in history)
    return GmmFit(weights, means, variances, n_iter, ll - offset, history).canonical()


def posterior_clean(fit: GmmFit, loss):
    """Posterior probability of the clean component for each loss value."""
    x = np.asarray(loss, dtype=np.float64)
    joint = _log_joint(x.ravel(), fit.weights, fit.means, fit.variances)
    post = expit(joint[:, 0] - joint[:, 1]).reshape(x.shape)
    return float(post) if post.ndim == 0 else post


@dataclass(frozen=True)
class DivisionResult:
    """Per (instance, view) arrays of shape ``(N, V)``."""

    avg_losses: np.ndarray
    posterior: np.ndarray
    is_clean: np.ndarray
    importance: np.ndarray

    @property
    def n_views(self) -> int:
        return self.is_clean.shape[1]

    def clean_indices(self, view: int) -> np.ndarray:
        return np.flatnonzero(self.is_clean[:, view])

    def conflicting_indices(self, view: int) -> np.ndarray:
        return np.flatnonzero(~self.is_clean[:, view])


def divide(fit: GmmFit | Sequence[GmmFit], losses, beta: float = 0.5) -> DivisionResult:
    """Clean iff clean-posterior > beta; weight 1 when clean, the posterior otherwise.

    ``fit`` is either one pooled fit or one fit per view.
    """
    losses = np.asarray(losses, dtype=np.float64)
    if losses.ndim != 2:
        raise InvalidInputError("losses must have shape (N, V)")
    if not 0.0 <= beta <= 1.0:
        raise InvalidInputError("beta must lie in [0, 1]")
    fits = [fit] * losses.shape[1] if isinstance(fit, GmmFit) else list(fit)
    if len(fits) != losses.shape[1]:
        raise InvalidInputError(f"{len(fits)} fits for {losses.shape[1]} views")
    post = np.stack([np.asarray(posterior_clean(f, losses[:, v])) for v, f in enumerate(fits)], axis=1)
    post = np.clip(post, 0.0, 1.0)
    clean = post > beta
    d = np.where(clean, 1.0, post)
    return DivisionResult(losses, post, clean, d)


def fit_and_divide(losses, beta: float = 0.5, pooled: bool = False,
                   max_iters: int = 200, tol: float = 1e-6) -> tuple[DivisionResult, list[GmmFit]]:
    """Fit per view (or pooled) and divide. Degenerate views raise with the view index."""
    losses = np.asarray(losses, dtype=np.float64)
    if pooled:
        fits = [fit_gmm(losses.ravel(), max_iters, tol)] * losses.shape[1]
    else:
        fits = []
        for v in range(losses.shape[1]):
            try:
                fits.append(fit_gmm(losses[:, v], max_iters, tol))
            except DegenerateInputError as exc:
                raise DegenerateInputError(f"view {v}: {exc}") from exc
    return divide(fits, losses, beta), fits


DIVISION_COLUMNS = ("instance_id", "view_id", "avg_loss", "posterior_clean", "is_clean", "importance_weight")


def write_division_csv(path, result: DivisionResult) -> None:
    n, v = result.is_clean.shape
    with atomic_writer(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DIVISION_COLUMNS)
        for i in range(n):
            for j in range(v):
                w.writerow([i, j, fmt(result.avg_losses[i, j]), fmt(result.posterior[i, j]),
                            int(result.is_clean[i, j]), fmt(result.importance[i, j])])


def read_division_csv(path) -> DivisionResult:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise InvalidInputError(f"{path}: no division rows")
    n = max(int(r["instance_id"]) for r in rows) + 1
    v = max(int(r["view_id"]) for r in rows) + 1
    arrays = {k: np.zeros((n, v)) for k in ("avg_loss", "posterior_clean", "is_clean", "importance_weight")}
    for r in rows:
        i, j = int(r["instance_id"]), int(r["view_id"])
        for k in arrays:
            arrays[k][i, j] = float(r[k])
    return DivisionResult(arrays["avg_loss"], arrays["posterior_clean"], arrays["is_clean"].astype(bool),
                          arrays["importance_weight"])
