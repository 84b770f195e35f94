"""Four-stage robust training against view conflict.

1. pre-train on the raw data with the multi-task loss and warm-up;
2. cyclical training with a linearly decaying, restarting learning rate
   while recording every instance's per-view loss after each epoch;
3. per-view GMM division of the average losses into clean/conflicting;
4. re-initialize and retrain with importance-weighted per-view losses.

Run directory layout::

    manifest.json             run record, rewritten after every stage
    config.yaml               effective configuration
    stage{1,2,4}_log.csv      epoch,train_loss,test_acc,lr
    loss_trace.npy            (N, V, T) stage-2 losses
    division.csv              stage-3 division
    checkpoints/stage{1,2,4}_view{v}.npz
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import yaml

from . import config as config_mod
from .data import MultiViewDataset
from .errors import InvalidInputError, NumericFailure, RfumlError
from .fusion import fuse_batch
from .gmm import DivisionResult, average_view_losses, fit_and_divide, write_division_csv
from .io import atomic_writer, fmt, write_json
from .losses import warmup_gamma
from .network import (FusionContext, MlpModel, MlpSpec, OptimizerState, backward, ensemble_forward,
                      init_model, optimizer_step, save_model)

MANIFEST_FORMAT = 1


@dataclass(frozen=True)
class ScheduleConfig:
    eta_max: float = 0.001
    eta_min: float = 0.0001
    cycle_length: int = 10
    cycle_count: int = 10

    def __post_init__(self):
        if not self.eta_max > self.eta_min > 0:
            raise InvalidInputError("need eta_max > eta_min > 0")
        if self.cycle_length < 2:
            raise InvalidInputError("cycle_length must be >= 2")
        if self.cycle_count < 1:
            raise InvalidInputError("cycle_count must be >= 1")

    @property
    def total_epochs(self) -> int:
        return self.cycle_length * self.cycle_count


def lr_at_epoch(t: int, cfg: ScheduleConfig) -> float:
    """Linear decay from eta_max to eta_min over each cycle, restarting every ``cycle_length`` epochs."""
    if t < 1:
        raise InvalidInputError("epochs are counted from 1")
    s = ((t - 1) % cfg.cycle_length) / (cfg.cycle_length - 1)
    return s * cfg.eta_min + (1.0 - s) * cfg.eta_max


@dataclass(frozen=True)
class StageConfig:
    seed: int = 0
    hidden_dims: tuple[int, ...] = (64,)
    activation: str = "relu"
    norm_order: float = 2.0
    optimizer: str = "adam"
    g: str = "exp"
    detach_fusion_weights: bool = False
    stage1_epochs: int = 30
    stage1_batch_size: int = 128
    stage1_warmup: int = 10
    stage1_lr: float = 0.003
    stage2_batch_size: int = 32
    stage2_optimizer: str | None = None
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    beta: float = 0.5
    pooled_gmm: bool = False
    gmm_max_iters: int = 200
    gmm_tol: float = 1e-6
    stage4_epochs: int = 30
    stage4_batch_size: int = 32
    stage4_lr: float = 0.003
    stage4_warmup: int = 10
    stage4_seed_offset: int = 1000003
    control_epochs: int | None = None
    control_batch_size: int | None = None
    control_lr: float | None = None
    control_fusion: str = "average"

    def __post_init__(self):
        for name in ("stage1_batch_size", "stage2_batch_size", "stage4_batch_size", "stage1_warmup", "stage4_warmup"):
            if getattr(self, name) < 1:
                raise InvalidInputError(f"{name} must be positive")
        for name in ("stage1_epochs", "stage4_epochs"):
            if getattr(self, name) < 0:
                raise InvalidInputError(f"{name} must be >= 0")
        if self.stage1_batch_size < self.stage2_batch_size:
            raise InvalidInputError("stage-1 batch size must be at least the stage-2 batch size")

    @classmethod
    def from_config(cls, cfg: dict) -> "StageConfig":
        s1, s2, s3, s4, ctl = cfg["stage1"], cfg["stage2"], cfg["stage3"], cfg["stage4"], cfg["control"]
        return cls(
            seed=int(cfg["seed"]),
            hidden_dims=tuple(cfg["model"]["hidden_dims"]),
            activation=cfg["model"]["activation"],
            norm_order=float(cfg["model"]["norm_order"]),
            optimizer=cfg["optimizer"]["kind"],
            g=cfg["fusion"]["g"],
            detach_fusion_weights=bool(cfg["fusion"]["detach_fusion_weights"]),
            stage1_epochs=int(s1["epochs"]), stage1_batch_size=int(s1["batch_size"]),
            stage1_warmup=int(s1["warmup_epochs"]), stage1_lr=float(s1["lr"]),
            stage2_batch_size=int(s2["batch_size"]), stage2_optimizer=s2["optimizer"],
            schedule=ScheduleConfig(float(s2["eta_max"]), float(s2["eta_min"]),
                                    int(s2["cycle_length"]), int(s2["cycle_count"])),
            beta=float(s3["beta"]), pooled_gmm=bool(s3["pooled_gmm"]),
            gmm_max_iters=int(s3["max_iters"]), gmm_tol=float(s3["tol"]),
            stage4_epochs=int(s4["epochs"]), stage4_batch_size=int(s4["batch_size"]),
            stage4_lr=float(s4["lr"]), stage4_warmup=int(s4["warmup_epochs"]),
            stage4_seed_offset=int(s4["seed_offset"]),
            control_epochs=None if ctl["epochs"] is None else int(ctl["epochs"]),
            control_batch_size=None if ctl["batch_size"] is None else int(ctl["batch_size"]),
            control_lr=None if ctl["lr"] is None else float(ctl["lr"]),
            control_fusion=ctl["fusion"],
        )


@dataclass
class TrainedEnsemble:
    models: list[MlpModel]
    training_mode: bool = True

    @property
    def class_count(self) -> int:
        return self.models[0].spec.class_count


def _view_seeds(base: int, n_views: int) -> list[int]:
    return [int(np.random.SeedSequence([base, v]).generate_state(1)[0]) for v in range(n_views)]


def make_ensemble(data: MultiViewDataset, cfg: StageConfig, seed: int) -> TrainedEnsemble:
    models = []
    for d, s in zip(data.view_dims, _view_seeds(seed, data.n_views)):
        spec = MlpSpec(d, cfg.hidden_dims, data.class_count, cfg.activation, cfg.norm_order)
        models.append(init_model(spec, s))
    return TrainedEnsemble(models)


def evaluate(ensemble: TrainedEnsemble, data: MultiViewDataset, fusion: str = "rmf", g: str = "exp") -> dict:
    """Test-time fused prediction. ``fusion``: ``"rmf"`` or ``"average"``."""
    fw = ensemble_forward(ensemble.models, data.views, data.labels, FusionContext(fusion="none"))
    fused, w, u = fuse_batch(fw.memberships, mode=fusion, g=g)
    pred = np.argmax(fused, axis=-1)
    return {"fused": fused, "uncertainty": np.atleast_1d(u), "weights": w, "predictions": pred,
            "memberships": fw.memberships, "accuracy": float(np.mean(pred == data.labels))}


def per_view_losses(models: Sequence[MlpModel], data: MultiViewDataset) -> np.ndarray:
    """Per-sample class-summed cross-entropy of every view against training credibility, ``(N, V)``."""
    return ensemble_forward(models, data.views, data.labels, FusionContext(fusion="none")).view_losses


def _train_epochs(ensemble: TrainedEnsemble, data: MultiViewDataset, *, stage: str, epochs: int,
                  batch_size: int, lr_fn: Callable[[int], float], gamma_fn: Callable[[int], float],
                  cfg: StageConfig, rng: np.random.Generator, loss_kind: str = "total", fusion: str = "training",
                  importance: np.ndarray | None = None, test: MultiViewDataset | None = None,
                  eval_fusion: str = "rmf", after_epoch: Callable | None = None,
                  optimizer: str | None = None):
    models = list(ensemble.models)
    states = [OptimizerState(optimizer or cfg.optimizer, lr_fn(1) if epochs else 1.0) for _ in models]
    n = data.n_instances
    log = []
    for t in range(1, epochs + 1):
        lr = lr_fn(t)
        ctx = FusionContext(gamma=gamma_fn(t), fusion=fusion, g=cfg.g,
                            detach_fusion_weights=cfg.detach_fusion_weights)
        perm = rng.permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            try:
                loss, grads = backward(models, [x[idx] for x in data.views], data.labels[idx], loss_kind, ctx,
                                       None if importance is None else importance[idx])
            except NumericFailure as exc:
                raise NumericFailure(f"{stage} epoch {t}: {exc}") from exc
            for v in range(len(models)):
                models[v], states[v] = optimizer_step(models[v], grads[v], states[v], lr)
            total += loss * idx.size
            seen += idx.size
        current = TrainedEnsemble(models)
        test_acc = evaluate(current, test, eval_fusion, cfg.g)["accuracy"] if test is not None else float("nan")
        log.append({"epoch": t, "train_loss": total / seen, "test_acc": test_acc, "lr": lr})
        if after_epoch is not None:
            after_epoch(t, current)
    return TrainedEnsemble(models), log


def stage1_pretrain(ensemble: TrainedEnsemble, data: MultiViewDataset, cfg: StageConfig,
                    test: MultiViewDataset | None = None):
    rng = np.random.default_rng([cfg.seed, 1])
    return _train_epochs(ensemble, data, stage="stage1", epochs=cfg.stage1_epochs,
                         batch_size=cfg.stage1_batch_size, lr_fn=lambda t: cfg.stage1_lr,
                         gamma_fn=lambda t: warmup_gamma(t, cfg.stage1_warmup), cfg=cfg, rng=rng, test=test)


def stage2_cyclical(ensemble: TrainedEnsemble, data: MultiViewDataset, cfg: StageConfig,
                    test: MultiViewDataset | None = None, keep_snapshots: bool = False):
    """Returns ``(ensemble, trace (N, V, T), log)``, plus per-epoch model snapshots if requested.

    Optimizer moments are reset at the stage boundary.  The fused-branch
    coefficient stays at its post-warm-up value of 1.
    """
    rng = np.random.default_rng([cfg.seed, 2])
    trace = np.zeros((data.n_instances, data.n_views, cfg.schedule.total_epochs))
    snapshots = []

    def record(t, current):
        trace[:, :, t - 1] = per_view_losses(current.models, data)
        if keep_snapshots:
            snapshots.append([m.copy() for m in current.models])

    ens, log = _train_epochs(ensemble, data, stage="stage2", epochs=cfg.schedule.total_epochs,
                             batch_size=cfg.stage2_batch_size, lr_fn=lambda t: lr_at_epoch(t, cfg.schedule),
                             gamma_fn=lambda t: 1.0, cfg=cfg, rng=rng, test=test, after_epoch=record,
                             optimizer=cfg.stage2_optimizer)
    if keep_snapshots:
        return ens, trace, log, snapshots
    return ens, trace, log


def stage3_divide(trace: np.ndarray, cfg: StageConfig) -> DivisionResult:
    result, _ = fit_and_divide(average_view_losses(trace), cfg.beta, cfg.pooled_gmm, cfg.gmm_max_iters, cfg.gmm_tol)
    return result


def stage4_seed(cfg: StageConfig) -> int:
    return cfg.seed + cfg.stage4_seed_offset


def stage4_robust(data: MultiViewDataset, division: DivisionResult, cfg: StageConfig,
                  test: MultiViewDataset | None = None):
    if division.importance.shape != (data.n_instances, data.n_views):
        raise InvalidInputError("division does not cover the training set")
    ensemble = make_ensemble(data, cfg, stage4_seed(cfg))
    rng = np.random.default_rng([cfg.seed, 4])
    return _train_epochs(ensemble, data, stage="stage4", epochs=cfg.stage4_epochs,
                         batch_size=cfg.stage4_batch_size, lr_fn=lambda t: cfg.stage4_lr,
                         gamma_fn=lambda t: warmup_gamma(t, cfg.stage4_warmup), cfg=cfg, rng=rng,
                         loss_kind="robust", importance=division.importance, test=test)


def control_budget(cfg: StageConfig) -> int:
    if cfg.control_epochs is not None:
        return cfg.control_epochs
    return cfg.stage1_epochs + cfg.schedule.total_epochs + cfg.stage4_epochs


# --- run records --------------------------------------------------------------

def _write_log(path: Path, log: list[dict]) -> None:
    with atomic_writer(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "test_acc", "lr"])
        for row in log:
            w.writerow([row["epoch"], fmt(row["train_loss"]), fmt(row["test_acc"]), fmt(row["lr"])])


class _RunRecorder:
    """Maintains the run directory and its append-only manifest."""

    def __init__(self, out_dir, kind: str, train: MultiViewDataset, test: MultiViewDataset | None,
                 cfg: StageConfig, raw_config: dict | None):
        self.dir = Path(out_dir) if out_dir is not None else None
        self.manifest = {
            "format": MANIFEST_FORMAT,
            "kind": kind,
            "status": "running",
            "dataset": {
                "train_fingerprint": train.fingerprint(),
                "test_fingerprint": test.fingerprint() if test is not None else None,
                "n_train": train.n_instances,
                "n_test": test.n_instances if test is not None else 0,
                "n_views": train.n_views,
                "class_count": train.class_count,
            },
            "config": config_mod.to_plain(raw_config) if raw_config is not None else None,
            "seeds": {"run": cfg.seed, "stage1_init": cfg.seed, "stage4_init": stage4_seed(cfg)},
            "stages": [],
        }
        if self.dir is not None:
            (self.dir / "checkpoints").mkdir(parents=True, exist_ok=True)
            if raw_config is not None:
                with atomic_writer(self.dir / "config.yaml") as fh:
                    yaml.safe_dump(self.manifest["config"], fh, sort_keys=True)
            self.flush()

    def flush(self) -> None:
        if self.dir is not None:
            write_json(self.dir / "manifest.json", self.manifest)

    def stage(self, name: str, seconds: float, log: list[dict] | None = None,
              ensemble: TrainedEnsemble | None = None, extra: dict | None = None) -> None:
        entry = {"name": name, "wall_clock_s": round(seconds, 3), "checkpoints": []}
        if log is not None:
            entry["epochs"] = len(log)
            entry["final_train_loss"] = log[-1]["train_loss"] if log else None
            entry["final_test_acc"] = log[-1]["test_acc"] if log else None
        if self.dir is not None:
            if log is not None:
                _write_log(self.dir / f"{name}_log.csv", log)
                entry["log"] = f"{name}_log.csv"
            if ensemble is not None:
                for v, m in enumerate(ensemble.models):
                    rel = f"checkpoints/{name}_view{v}.npz"
                    save_model(self.dir / rel, m)
                    entry["checkpoints"].append(rel)
        entry.update(extra or {})
        self.manifest["stages"].append(entry)
        self.flush()


@dataclass
class RunResult:
    manifest: dict
    ensemble: TrainedEnsemble
    logs: dict
    division: DivisionResult | None = None
    trace: np.ndarray | None = None
    evaluation: dict | None = None


def _json_float(x):
    return None if x is None or not np.isfinite(x) else float(x)


def run_pipeline(train: MultiViewDataset, test: MultiViewDataset | None, cfg: StageConfig,
                 out_dir=None, raw_config: dict | None = None) -> RunResult:
    """Stages 1 to 4 in order; evaluation uses test-time fusion. ``out_dir=None`` writes nothing."""
    rec = _RunRecorder(out_dir, "rlvc", train, test, cfg, raw_config)
    logs: dict = {}
    try:
        t0 = time.perf_counter()
        ens = make_ensemble(train, cfg, cfg.seed)
        ens, logs["stage1"] = stage1_pretrain(ens, train, cfg, test)
        rec.stage("stage1", time.perf_counter() - t0, logs["stage1"], ens)

        t0 = time.perf_counter()
        ens, trace, logs["stage2"] = stage2_cyclical(ens, train, cfg, test)
        extra = {}
        if rec.dir is not None:
            np.save(rec.dir / "loss_trace.npy", trace)
            extra["loss_trace"] = "loss_trace.npy"
        rec.stage("stage2", time.perf_counter() - t0, logs["stage2"], ens, extra)

        t0 = time.perf_counter()
        division = stage3_divide(trace, cfg)
        extra = {"n_conflicting": int((~division.is_clean).sum())}
        if rec.dir is not None:
            write_division_csv(rec.dir / "division.csv", division)
            extra["division"] = "division.csv"
        rec.stage("stage3", time.perf_counter() - t0, extra=extra)

        t0 = time.perf_counter()
        ens, logs["stage4"] = stage4_robust(train, division, cfg, test)
        ens.training_mode = False
        rec.stage("stage4", time.perf_counter() - t0, logs["stage4"], ens)
    except RfumlError as exc:
        rec.manifest["status"] = "incomplete"
        rec.manifest["error"] = str(exc)
        rec.flush()
        raise
    evaluation = evaluate(ens, test, "rmf", cfg.g) if test is not None else None
    rec.manifest["final"] = {
        "stage": "stage4",
        "fusion": "rmf",
        "test_accuracy": _json_float(evaluation["accuracy"]) if evaluation else None,
        "checkpoints": rec.manifest["stages"][-1]["checkpoints"],
    }
    rec.manifest["status"] = "complete"
    rec.flush()
    return RunResult(rec.manifest, ens, logs, division, trace, evaluation)


def run_control(train: MultiViewDataset, test: MultiViewDataset | None, cfg: StageConfig,
                out_dir=None, raw_config: dict | None = None) -> RunResult:
    """Single-stage comparator: multi-task loss only, same epoch budget, ``control_fusion`` throughout."""
    rec = _RunRecorder(out_dir, "control", train, test, cfg, raw_config)
    fusion = cfg.control_fusion
    train_fusion = "training" if fusion == "rmf" else fusion
    try:
        t0 = time.perf_counter()
        ens = make_ensemble(train, cfg, cfg.seed)
        rng = np.random.default_rng([cfg.seed, 9])
        lr = cfg.control_lr if cfg.control_lr is not None else cfg.stage4_lr
        ens, log = _train_epochs(ens, train, stage="control", epochs=control_budget(cfg),
                                 batch_size=cfg.control_batch_size or cfg.stage4_batch_size,
                                 lr_fn=lambda t: lr, gamma_fn=lambda t: warmup_gamma(t, cfg.stage1_warmup),
                                 cfg=cfg, rng=rng, fusion=train_fusion, test=test, eval_fusion=fusion)
        ens.training_mode = False
        rec.stage("control", time.perf_counter() - t0, log, ens)
    except RfumlError as exc:
        rec.manifest["status"] = "incomplete"
        rec.manifest["error"] = str(exc)
        rec.flush()
        raise
    evaluation = evaluate(ens, test, fusion, cfg.g) if test is not None else None
    rec.manifest["final"] = {
        "stage": "control",
        "fusion": fusion,
        "test_accuracy": _json_float(evaluation["accuracy"]) if evaluation else None,
        "checkpoints": rec.manifest["stages"][-1]["checkpoints"],
    }
    rec.manifest["status"] = "complete"
    rec.flush()
    return RunResult(rec.manifest, ens, {"control": log}, evaluation=evaluation)
