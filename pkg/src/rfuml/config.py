"""Nested key-value configuration with defaults.

Config files are YAML (JSON also parses).  A file only needs the keys it
changes; unknown keys are rejected.  ``data.dir`` has no default and must
be supplied for training and evaluation.
"""

from __future__ import annotations

import copy
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError

class _Required:
    """Marker for keys without a default; survives deep copies."""

    def __deepcopy__(self, memo):
        return self

    def __repr__(self) -> str:
        return "REQUIRED"


REQUIRED = _Required()

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "data": {"dir": REQUIRED},
    "model": {"hidden_dims": [64], "activation": "relu", "norm_order": 2.0},
    "optimizer": {"kind": "adam"},
    "fusion": {"g": "exp", "detach_fusion_weights": False},
    "stage1": {"epochs": 30, "batch_size": 128, "warmup_epochs": 10, "lr": 0.003},
    "stage2": {"batch_size": 32, "optimizer": None, "eta_max": 0.001, "eta_min": 0.0001, "cycle_length": 10, "cycle_count": 10},
    "stage3": {"beta": 0.5, "pooled_gmm": False, "max_iters": 200, "tol": 1e-6},
    "stage4": {"epochs": 30, "batch_size": 32, "lr": 0.003, "warmup_epochs": 10, "seed_offset": 1000003},
    "control": {"epochs": None, "batch_size": None, "lr": None, "fusion": "average"},
    "eval": {"bins": 20},
    "synthetic": {"n_views": 3, "class_count": 4, "n_instances": 1200, "view_dims": [16, 16, 16],
                  "separation": 1.85, "noise_std": 0.5},
    "corruption": {"misalign_rate": 0.4, "views_per_instance": None, "noise_rate": 0.1, "noise_std": 0.5,
                   "noise_mean": 0.0, "split_ratio": 0.8},
}


def _merge(base: dict, override: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        name = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key: {name}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {name} must be a mapping")
            out[key] = _merge(base[key], value, f"{name}.")
        else:
            out[key] = value
    return out


def parse_assignment(text: str) -> dict:
    """``"stage1.epochs=5"`` -> ``{"stage1": {"epochs": 5}}`` with YAML-typed values."""
    if "=" not in text:
        raise ConfigError(f"override must look like key=value: {text!r}")
    key, raw = text.split("=", 1)
    value = yaml.safe_load(raw)
    out: dict = {}
    node = out
    parts = key.strip().split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    return out


def load_config(path=None, overrides: list[dict] | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        try:
            doc = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"config {path} must be a mapping")
        cfg = _merge(cfg, doc)
    for ov in overrides or []:
        cfg = _merge(cfg, ov)
    return cfg


def require(cfg: dict, dotted: str):
    node: Any = cfg
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"missing config key: {dotted}")
        node = node[part]
    if node is REQUIRED or node is None:
        raise ConfigError(f"missing config key: {dotted}")
    return node


def flatten(cfg: dict, prefix: str = "") -> list[tuple[str, Any]]:
    items = []
    for key, value in cfg.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            items += flatten(value, f"{name}.")
        else:
            items.append((name, value))
    return items


def describe_defaults() -> str:
    lines = []
    for name, value in flatten(DEFAULTS):
        shown = "(required)" if value is REQUIRED else yaml.safe_dump(value, default_flow_style=True).strip()
        if shown.endswith("..."):
            shown = shown[:-3].strip()
        lines.append(f"  {name} = {shown}")
    return "\n".join(lines)


def to_plain(cfg: dict) -> dict:
    """Copy with the REQUIRED sentinel replaced by None, safe for serialization."""
    return {k: to_plain(v) if isinstance(v, dict) else (None if v is REQUIRED else v) for k, v in cfg.items()}
