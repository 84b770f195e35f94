"""Evaluation metrics and CSV exports."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import ConflictLabels
from .errors import InvalidInputError
from .gmm import DivisionResult
from .io import atomic_writer, fmt


def predict(fused_membership) -> np.ndarray:
    """Argmax class, lowest index on ties."""
    return np.argmax(np.asarray(fused_membership), axis=-1)


def accuracy(predictions, labels) -> float:
    p = np.asarray(predictions)
    y = np.asarray(labels)
    if p.shape != y.shape:
        raise InvalidInputError("predictions and labels differ in length")
    if p.size == 0:
        raise InvalidInputError("accuracy of an empty set is undefined")
    return float(np.mean(p == y))


def fpr95(scores, is_conflicting, tpr: float = 0.95) -> float:
    """False-positive rate of clean instances at the highest threshold reaching ``tpr`` on conflicting ones.

    Conflicting instances are positives and are detected by high scores;
    a score equal to the threshold counts as detected.
    """
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(is_conflicting, dtype=bool)
    if s.shape != pos.shape:
        raise InvalidInputError("scores and ground truth differ in length")
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise InvalidInputError("FPR95 needs both conflicting and clean instances")
    need = max(math.ceil(tpr * n_pos - 1e-9), 1)
    tau = np.sort(s[pos])[::-1][need - 1]
    return float(np.mean(s[~pos] >= tau))


@dataclass
class ViewRates:
    fpr: float
    fnr: float
    average: float
    counts: dict = field(default_factory=dict)


def division_rates(result: DivisionResult, truth: ConflictLabels) -> dict:
    """Division FPR/FNR per view and pooled (mean over views where each rate is defined).

    Positive means conflicting.  FNR: conflicting judged clean; FPR: clean
    judged conflicting.
    """
    actual = truth.conflicted
    judged = ~result.is_clean
    if actual.shape != judged.shape:
        raise InvalidInputError(f"division grid {judged.shape} != truth grid {actual.shape}")
    per_view = []
    for v in range(actual.shape[1]):
        a, j = actual[:, v], judged[:, v]
        tp, fn = int((a & j).sum()), int((a & ~j).sum())
        fp, tn = int((~a & j).sum()), int((~a & ~j).sum())
        fnr = fn / (tp + fn) if tp + fn else float("nan")
        fpr = fp / (fp + tn) if fp + tn else float("nan")
        if tp + fn == 0:
            warnings.warn(f"view {v} has no conflicting entries; FNR undefined and excluded from the pooled mean")
        if fp + tn == 0:
            warnings.warn(f"view {v} has no clean entries; FPR undefined and excluded from the pooled mean")
        per_view.append(ViewRates(fpr, fnr, float(np.nanmean([fpr, fnr])) if tp + fn or fp + tn else float("nan"),
                                  {"tp": tp, "fn": fn, "fp": fp, "tn": tn}))
    fprs = np.array([r.fpr for r in per_view])
    fnrs = np.array([r.fnr for r in per_view])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        pooled_fpr = float(np.nanmean(fprs)) if np.any(~np.isnan(fprs)) else float("nan")
        pooled_fnr = float(np.nanmean(fnrs)) if np.any(~np.isnan(fnrs)) else float("nan")
    return {
        "per_view": per_view,
        "pooled": ViewRates(pooled_fpr, pooled_fnr, float(np.nanmean([pooled_fpr, pooled_fnr]))),
    }


def rates_to_dict(rates: dict) -> dict:
    return {"per_view": [asdict(r) for r in rates["per_view"]], "pooled": asdict(rates["pooled"])}


def uncertainty_density(uncertainties, is_conflicting, bins: int = 20) -> dict:
    """Equal-width histograms on [0, 1] for the clean and conflicting groups."""
    if bins < 2:
        raise InvalidInputError("need at least 2 bins")
    u = np.clip(np.asarray(uncertainties, dtype=np.float64), 0.0, 1.0)
    c = np.asarray(is_conflicting, dtype=bool)
    edges = np.linspace(0.0, 1.0, bins + 1)
    clean, _ = np.histogram(u[~c], bins=edges)
    conf, _ = np.histogram(u[c], bins=edges)
    return {"edges": edges, "clean": clean, "conflicting": conf,
            "n_clean": int((~c).sum()), "n_conflicting": int(c.sum())}


def write_density_csv(path, table: dict) -> None:
    """Columns ``bin_left,bin_right,clean_count,conflicting_count``; an empty group leaves its column blank."""
    edges = table["edges"]
    with atomic_writer(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_left", "bin_right", "clean_count", "conflicting_count"])
        for b in range(len(edges) - 1):
            w.writerow([fmt(edges[b]), fmt(edges[b + 1]),
                        int(table["clean"][b]) if table["n_clean"] else "",
                        int(table["conflicting"][b]) if table["n_conflicting"] else ""])


@dataclass
class EvalReport:
    accuracy: float
    fpr95: float | None
    mean_uncertainty_clean: float | None
    mean_uncertainty_conflicting: float | None
    n_instances: int
    n_conflicting: int
    density: dict
    division: dict | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["density"] = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.density.items()}
        return d


def evaluation_report(fused_membership, fused_uncertainty, labels, is_conflicting, bins: int = 20,
                      division: dict | None = None) -> EvalReport:
    u = np.asarray(fused_uncertainty, dtype=np.float64)
    c = np.asarray(is_conflicting, dtype=bool)
    acc = accuracy(predict(fused_membership), labels)
    both = c.any() and (~c).any()
    return EvalReport(
        accuracy=acc,
        fpr95=fpr95(u, c) if both else None,
        mean_uncertainty_clean=float(u[~c].mean()) if (~c).any() else None,
        mean_uncertainty_conflicting=float(u[c].mean()) if c.any() else None,
        n_instances=int(u.size),
        n_conflicting=int(c.sum()),
        density=uncertainty_density(u, c, bins),
        division=division,
    )
