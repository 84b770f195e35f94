"""Per-view MLPs ending in the membership layer, with exact gradients.

Gradients are derived by hand for the graph this package needs:
MLP -> L_p normalization -> ReLU -> (conflict-weighted fusion) ->
training credibility -> clamped cross-entropy.  Conventions at
non-differentiable points: ReLU'(0) = 0, and a max over other classes
routes its gradient to the lowest tied index.

Checkpoints are ``.npz`` archives with keys ``format`` (int), ``spec``
(JSON string), ``seed`` (int64), ``n_layers`` and ``W{i}``/``b{i}`` for
layer ``i`` in input-to-output order; ``W{i}`` has shape ``(fan_in, fan_out)``.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import fuzzy
from .errors import InvalidInputError, NumericFailure
from .fusion import SCORE_TOTAL_EPS, normalize_scores
from .losses import per_sample_ccl, per_sample_ccl_grad

ACTIVATIONS = ("relu", "tanh")
CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_dims: tuple[int, ...]
    class_count: int
    activation: str = "relu"
    norm_order: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise InvalidInputError("layer dimensions must be positive")
        if self.class_count < 2:
            raise InvalidInputError("class_count must be >= 2")
        if self.activation not in ACTIVATIONS:
            raise InvalidInputError(f"activation must be one of {ACTIVATIONS}")
        if not self.norm_order >= 1:
            raise InvalidInputError("norm_order must be >= 1")

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim, *self.hidden_dims, self.class_count]


@dataclass
class MlpModel:
    spec: MlpSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    seed: int = 0

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MlpModel":
        return MlpModel(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases], self.seed)


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def zeros_like(cls, model: MlpModel) -> "Gradients":
        return cls([np.zeros_like(w) for w in model.weights], [np.zeros_like(b) for b in model.biases])

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


def init_model(spec: MlpSpec, seed: int) -> MlpModel:
    """Glorot-uniform weights, zero biases, fully determined by ``(spec, seed)``."""
    rng = np.random.default_rng(seed)
    dims = spec.layer_dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(spec, weights, biases, int(seed))


def _act(z, kind):
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _act_grad(z, h, kind):
    return (z > 0.0).astype(np.float64) if kind == "relu" else 1.0 - h * h


def _check(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NumericFailure(f"non-finite values in {what}")


def _mlp_forward(model: MlpModel, x: np.ndarray):
    spec = model.spec
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise InvalidInputError(f"expected inputs of width {spec.input_dim}, got shape {x.shape}")
    h = x
    cache = []
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        with np.errstate(over="ignore", invalid="ignore"):
            z = h @ w + b
        _check(z, f"layer {i} pre-activation")
        if i == last:
            cache.append((h, None, None))
            return z, cache
        hn = _act(z, spec.activation)
        cache.append((h, z, hn))
        h = hn
    raise AssertionError("unreachable")


def _mlp_backward(model: MlpModel, cache, dlogits: np.ndarray) -> Gradients:
    spec = model.spec
    gw = [None] * len(model.weights)
    gb = [None] * len(model.weights)
    delta = dlogits
    for i in range(len(model.weights) - 1, -1, -1):
        h_in, _, _ = cache[i]
        gw[i] = h_in.T @ delta
        gb[i] = delta.sum(axis=0)
        _check(gw[i], f"layer {i} weight gradient")
        if i > 0:
            _, z_prev, h_prev = cache[i - 1]
            delta = (delta @ model.weights[i].T) * _act_grad(z_prev, h_prev, spec.activation)
    return Gradients(gw, gb)


def _lp_norm(a: np.ndarray, p: float) -> np.ndarray:
    return np.linalg.norm(a, ord=p, axis=-1, keepdims=True)


def membership_backward(a: np.ndarray, dm: np.ndarray, p: float) -> np.ndarray:
    """Vector-Jacobian product of ``ReLU(a / ||a||_p)`` (zero-norm rows get zero gradient)."""
    s = _lp_norm(a, p)
    zero = s == 0.0
    s_safe = np.where(zero, 1.0, s)
    q = a / s_safe
    dq = np.where(q > 0.0, dm, 0.0)
    ds_da = np.sign(a) * np.abs(a) ** (p - 1.0) / s_safe ** (p - 1.0)
    da = dq / s_safe - (dq * a).sum(axis=-1, keepdims=True) / s_safe**2 * ds_da
    return np.where(zero, 0.0, da)


def training_credibility_backward(m: np.ndarray, labels: np.ndarray, dr: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of :func:`fuzzy.training_credibility_from_labels` w.r.t. ``m``."""
    n, k = m.shape
    rows = np.arange(n)
    hot = np.arange(k) == labels[:, None]
    dm = 0.5 * dr
    off_sum = np.where(hot, 0.0, dr).sum(axis=-1)
    dm[rows, labels] -= 0.5 * off_sum
    _, idx = fuzzy.max_excluding(m)
    arg_other = idx[rows, labels]
    dm[rows, arg_other] -= 0.5 * dr[rows, labels]
    return dm


@dataclass(frozen=True)
class FusionContext:
    """How the fused branch is formed during training.

    ``fusion`` is ``"training"`` (conflict-only weights), ``"average"`` or
    ``"none"`` (no fused branch).  ``gamma`` scales the fused loss.
    """

    gamma: float = 1.0
    fusion: str = "training"
    g: str = "exp"
    detach_fusion_weights: bool = False


LOSS_KINDS = ("ccl", "total", "robust")


@dataclass
class EnsembleForward:
    logits: list[np.ndarray]
    memberships: np.ndarray  # (V, n, K)
    weights: np.ndarray  # (V, n)
    fused: np.ndarray  # (n, K)
    view_losses: np.ndarray  # (n, V) per-sample class-summed CE
    fused_losses: np.ndarray  # (n,)
    caches: list = field(repr=False, default_factory=list)
    fusion_aux: tuple | None = field(repr=False, default=None)


def _fusion_weights(ms: np.ndarray, ctx: FusionContext):
    v = ms.shape[0]
    if v == 1 or ctx.fusion in ("average", "none"):
        return np.full(ms.shape[:2], 1.0 / v), None
    if ctx.fusion != "training":
        raise InvalidInputError(f"unknown training fusion {ctx.fusion!r}")
    cos = fuzzy.cosine_matrix(ms, strict=False)
    scores = 1.0 - fuzzy.conflicts_from_cosines(cos)
    return normalize_scores(scores, ctx.g), (cos, scores)


def ensemble_forward(models: Sequence[MlpModel], xs: Sequence[np.ndarray], labels: np.ndarray,
                     ctx: FusionContext = FusionContext()) -> EnsembleForward:
    labels = np.asarray(labels, dtype=np.int64)
    if len(models) != len(xs):
        raise InvalidInputError(f"{len(models)} models for {len(xs)} views")
    logits, ms, caches = [], [], []
    for v, (model, x) in enumerate(zip(models, xs)):
        a, cache = _mlp_forward(model, np.asarray(x, dtype=np.float64))
        if a.shape[0] != labels.shape[0]:
            raise InvalidInputError(f"view {v} has {a.shape[0]} rows for {labels.shape[0]} labels")
        logits.append(a)
        ms.append(fuzzy.membership_from_logits(a, model.spec.norm_order))
        caches.append(cache)
    ms = np.stack(ms)
    k = ms.shape[-1]
    y = np.eye(k)[labels]
    w, aux = _fusion_weights(ms, ctx)
    fused = np.einsum("vn,vnk->nk", w, ms)
    view_losses = np.stack(
        [per_sample_ccl(fuzzy.training_credibility_from_labels(m, labels), y) for m in ms], axis=1)
    fused_losses = per_sample_ccl(fuzzy.training_credibility_from_labels(fused, labels), y)
    return EnsembleForward(logits, ms, w, fused, view_losses, fused_losses, caches, aux)


def ensemble_loss(fw: EnsembleForward, ctx: FusionContext, loss_kind: str, importance=None) -> float:
    if loss_kind == "robust":
        per_view = (importance * fw.view_losses).mean(axis=0).sum()
    else:
        per_view = fw.view_losses.mean(axis=0).sum()
    if loss_kind == "ccl" or ctx.fusion == "none":
        return float(per_view)
    return float(ctx.gamma * fw.fused_losses.mean() + per_view)


def backward(models: Sequence[MlpModel], xs: Sequence[np.ndarray], labels,
             loss_kind: str = "total", ctx: FusionContext = FusionContext(),
             importance=None) -> tuple[float, list[Gradients]]:
    """Loss and parameter gradients for every view model.

    ``loss_kind``: ``"ccl"`` sums the per-view credibility losses only,
    ``"total"`` adds the gamma-weighted fused branch, ``"robust"`` also
    weights each per-view sample term by ``importance`` of shape ``(n, V)``.
    """
    if loss_kind not in LOSS_KINDS:
        raise InvalidInputError(f"loss_kind must be one of {LOSS_KINDS}")
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.shape[0]
    if n == 0:
        raise InvalidInputError("empty batch")
    v_count = len(models)
    if loss_kind == "robust":
        if importance is None:
            raise InvalidInputError("robust loss needs importance weights")
        importance = np.asarray(importance, dtype=np.float64)
        if importance.shape != (n, v_count):
            raise InvalidInputError(f"importance weights need shape {(n, v_count)}, got {importance.shape}")
        if np.any(importance < 0) or np.any(importance > 1):
            raise InvalidInputError("importance weights must lie in [0, 1]")
    else:
        importance = np.ones((n, v_count))

    fw = ensemble_forward(models, xs, labels, ctx)
    loss = ensemble_loss(fw, ctx, loss_kind, importance)
    if not np.isfinite(loss):
        raise NumericFailure("non-finite loss")
    ms, w = fw.memberships, fw.weights
    k = ms.shape[-1]
    y = np.eye(k)[labels]

    dms = np.zeros_like(ms)
    for v in range(v_count):
        rv = fuzzy.training_credibility_from_labels(ms[v], labels)
        dr = per_sample_ccl_grad(rv, y) * (importance[:, v] / n)[:, None]
        dms[v] = training_credibility_backward(ms[v], labels, dr)

    use_fused = loss_kind != "ccl" and ctx.fusion != "none" and ctx.gamma != 0.0
    if use_fused:
        ra = fuzzy.training_credibility_from_labels(fw.fused, labels)
        dra = per_sample_ccl_grad(ra, y) * (ctx.gamma / n)
        dma = training_credibility_backward(fw.fused, labels, dra)
        dms += w[:, :, None] * dma[None]
        if fw.fusion_aux is not None and not ctx.detach_fusion_weights:
            dms += _fusion_weight_backward(ms, w, dma, fw.fusion_aux, ctx.g)

    grads = []
    for v, model in enumerate(models):
        da = membership_backward(fw.logits[v], dms[v], model.spec.norm_order)
        _check(da, f"view {v} logit gradient")
        grads.append(_mlp_backward(model, fw.caches[v], da))
    return loss, grads


def _fusion_weight_backward(ms, w, dma, aux, g):
    """Gradient reaching the memberships through the conflict-based fusion weights."""
    cos, scores = aux
    v_count = ms.shape[0]
    dw = np.einsum("nk,vnk->vn", dma, ms)
    if g == "exp":
        ds = w * (dw - (w * dw).sum(axis=0, keepdims=True))
    else:
        total = scores.sum(axis=0, keepdims=True)
        live = total > SCORE_TOTAL_EPS
        ds = np.where(live, (dw - (w * dw).sum(axis=0, keepdims=True)) / np.where(live, total, 1.0), 0.0)
    # scores = 1 - o; o_v = mean_{j != v}(1 - cos_vj)
    do = -ds
    dcos = -(do[:, None, :] + do[None, :, :]) / (v_count - 1)  # symmetric pair total
    norms = np.linalg.norm(ms, axis=-1)  # (V, n)
    out = np.zeros_like(ms)
    for a in range(v_count):
        if np.all(norms[a] == 0):
            continue
        for b in range(v_count):
            if a == b:
                continue
            ok = (norms[a] > 0) & (norms[b] > 0)
            na = np.where(ok, norms[a], 1.0)[:, None]
            nb = np.where(ok, norms[b], 1.0)[:, None]
            dcos_da = ms[b] / (na * nb) - cos[a, b][:, None] * ms[a] / na**2
            out[a] += np.where(ok[:, None], dcos[a, b][:, None] * dcos_da, 0.0)
    return out


def forward(model: MlpModel, x) -> tuple[np.ndarray, np.ndarray]:
    """Logits and memberships for one sample ``(d,)`` or a batch ``(n, d)``."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    a, _ = _mlp_forward(model, x[None] if single else x)
    m = fuzzy.membership_from_logits(a, model.spec.norm_order)
    return (a[0], m[0]) if single else (a, m)


@dataclass
class OptimizerState:
    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first: list | None = None
    second: list | None = None

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise InvalidInputError(f"unknown optimizer {self.kind!r}")
        if not self.learning_rate > 0:
            raise InvalidInputError("learning rate must be positive")


def optimizer_step(model: MlpModel, grads: Gradients, state: OptimizerState,
                   learning_rate: float | None = None) -> tuple[MlpModel, OptimizerState]:
    """One SGD or Adam update. Returns new objects; inputs are not mutated."""
    lr = state.learning_rate if learning_rate is None else learning_rate
    params = model.params()
    g = grads.params()
    if len(g) != len(params) or any(a.shape != b.shape for a, b in zip(params, g)):
        raise InvalidInputError("gradient shapes do not match the model")
    if state.kind == "sgd":
        new = [p - lr * gi for p, gi in zip(params, g)]
        new_state = replace(state, step=state.step + 1)
    else:
        first = state.first or [np.zeros_like(p) for p in params]
        second = state.second or [np.zeros_like(p) for p in params]
        t = state.step + 1
        first = [state.beta1 * m + (1 - state.beta1) * gi for m, gi in zip(first, g)]
        second = [state.beta2 * s + (1 - state.beta2) * gi * gi for s, gi in zip(second, g)]
        c1 = 1 - state.beta1**t
        c2 = 1 - state.beta2**t
        new = [p - lr * (m / c1) / (np.sqrt(s / c2) + state.eps) for p, m, s in zip(params, first, second)]
        new_state = replace(state, step=t, first=first, second=second)
    out = MlpModel(model.spec, new[0::2], new[1::2], model.seed)
    return out, new_state


def save_model(path, model: MlpModel) -> None:
    path = Path(path)
    arrays = {f"W{i}": w for i, w in enumerate(model.weights)}
    arrays.update({f"b{i}": b for i, b in enumerate(model.biases)})
    spec = asdict(model.spec)
    spec["hidden_dims"] = list(spec["hidden_dims"])
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".npz.tmp")
    with os.fdopen(fd, "wb") as fh:
        np.savez(fh, format=np.int64(CHECKPOINT_FORMAT), spec=np.array(json.dumps(spec, sort_keys=True)),
                 seed=np.int64(model.seed), n_layers=np.int64(len(model.weights)), **arrays)
    os.replace(tmp, path)


def load_model(path) -> MlpModel:
    with np.load(path, allow_pickle=False) as data:
        if int(data["format"]) != CHECKPOINT_FORMAT:
            raise InvalidInputError(f"unsupported checkpoint format {int(data['format'])}")
        spec = json.loads(str(data["spec"]))
        spec["hidden_dims"] = tuple(spec["hidden_dims"])
        n = int(data["n_layers"])
        return MlpModel(MlpSpec(**spec), [data[f"W{i}"].copy() for i in range(n)],
                        [data[f"b{i}"].copy() for i in range(n)], int(data["seed"]))
