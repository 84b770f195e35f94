"""Multi-view datasets, CSV ingestion, synthetic blobs and conflict injection.

CSV layout (one directory per dataset)::

    view_0.csv ... view_{V-1}.csv   header row, numeric feature columns
    labels.csv                      header ``label``, one integer per row
    class_count.txt                 optional; K when some class has no rows
    conflicts.csv                   optional ground truth:
                                    instance_id,view_id,status,effective_label

Rows are aligned across files by order.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, InvalidInputError
from .io import atomic_writer, fmt_exact

CLEAN, MISALIGNED, NOISY = 0, 1, 2
STATUS_NAMES = {CLEAN: "clean", MISALIGNED: "conflicted-misaligned", NOISY: "conflicted-noisy"}
_STATUS_CODES = {v: k for k, v in STATUS_NAMES.items()}


@dataclass
class ConflictLabels:
    status: np.ndarray  # (N, V) int codes
    effective_labels: np.ndarray  # (N, V) class the view's features actually represent

    @classmethod
    def clean(cls, labels: np.ndarray, n_views: int) -> "ConflictLabels":
        n = labels.shape[0]
        return cls(np.zeros((n, n_views), dtype=np.int8), np.repeat(labels[:, None], n_views, axis=1).astype(np.int64))

    def copy(self) -> "ConflictLabels":
        return ConflictLabels(self.status.copy(), self.effective_labels.copy())

    @property
    def conflicted(self) -> np.ndarray:
        """Boolean ``(N, V)`` mask of corrupted views."""
        return self.status != CLEAN

    def instance_conflicted(self) -> np.ndarray:
        return self.conflicted.any(axis=1)

    def subset(self, idx) -> "ConflictLabels":
        return ConflictLabels(self.status[idx], self.effective_labels[idx])


def alignment_indicator(conflicts: ConflictLabels, i: int, a: int, b: int) -> int:
    """1 when views ``a`` and ``b`` of instance ``i`` are semantically consistent."""
    st = conflicts.status[i]
    if st[a] == NOISY or st[b] == NOISY:
        return 0
    return int(conflicts.effective_labels[i, a] == conflicts.effective_labels[i, b])


def has_view_conflict(conflicts: ConflictLabels) -> np.ndarray:
    """Per instance: whether the alignment sum over ordered view pairs falls short of V(V-1)."""
    n, v = conflicts.status.shape
    out = np.zeros(n, dtype=bool)
    for i in range(n):
        total = sum(alignment_indicator(conflicts, i, a, b) for a in range(v) for b in range(v) if a != b)
        out[i] = total < v * (v - 1)
    return out


@dataclass
class MultiViewDataset:
    views: list[np.ndarray]
    labels: np.ndarray
    class_count: int
    conflicts: ConflictLabels | None = field(default=None)

    def __post_init__(self):
        self.views = [np.asarray(x, dtype=np.float64) for x in self.views]
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.labels.shape[0]
        if not self.views:
            raise DataError("dataset has no views")
        for v, x in enumerate(self.views):
            if x.ndim != 2 or x.shape[0] != n:
                raise DataError(f"view {v} has shape {x.shape}, expected ({n}, d)")
            if not np.all(np.isfinite(x)):
                raise DataError(f"view {v} has non-finite features")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise DataError(f"labels must lie in [0, {self.class_count})")

    @property
    def n_instances(self) -> int:
        return self.labels.shape[0]

    @property
    def n_views(self) -> int:
        return len(self.views)

    @property
    def view_dims(self) -> list[int]:
        return [x.shape[1] for x in self.views]

    def subset(self, idx) -> "MultiViewDataset":
        idx = np.asarray(idx)
        return MultiViewDataset([x[idx] for x in self.views], self.labels[idx], self.class_count,
                                None if self.conflicts is None else self.conflicts.subset(idx))

    def conflict_labels(self) -> ConflictLabels:
        return self.conflicts if self.conflicts is not None else ConflictLabels.clean(self.labels, self.n_views)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.int64(self.class_count).tobytes())
        h.update(np.ascontiguousarray(self.labels).tobytes())
        for x in self.views:
            h.update(np.int64(x.shape[1]).tobytes())
            h.update(np.ascontiguousarray(x).tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class CorruptionSpec:
    misalign_rate: float = 0.4
    views_per_instance: int | None = None  # None -> V - 2, at least 1
    noise_rate: float = 0.1
    noise_std: float = 0.5
    noise_mean: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("misalign_rate", "noise_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidInputError(f"{name} must lie in [0, 1]")
        if self.noise_std < 0:
            raise InvalidInputError("noise_std must be >= 0")


# --- CSV ---------------------------------------------------------------------

def _read_numeric_csv(path: Path) -> tuple[list[str], np.ndarray]:
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: cannot open ({exc.strerror})") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}:1: missing header row")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: non-numeric cell ({exc})") from exc
    if not rows:
        raise DataError(f"{path}: no data rows (empty dataset)")
    arr = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        bad = int(np.argwhere(~np.isfinite(arr))[0, 0]) + 2
        raise DataError(f"{path}:{bad}: non-finite value")
    return header, arr


def _as_labels(values: np.ndarray, path: Path) -> np.ndarray:
    if np.any(values != np.round(values)) or np.any(values < 0):
        bad = int(np.flatnonzero((values != np.round(values)) | (values < 0))[0]) + 2
        raise DataError(f"{path}:{bad}: labels must be non-negative integers")
    return values.astype(np.int64)


def load_csv(view_paths: Sequence, label_path=None, label_column: str | None = None) -> MultiViewDataset:
    """Load one CSV per view plus labels from ``label_path`` or a column of the first view."""
    if (label_path is None) == (label_column is None):
        raise InvalidInputError("give exactly one of label_path or label_column")
    views = []
    labels = None
    for v, p in enumerate(view_paths):
        p = Path(p)
        header, arr = _read_numeric_csv(p)
        if v == 0 and label_column is not None:
            if label_column not in header:
                raise DataError(f"{p}:1: missing label column {label_column!r}")
            j = header.index(label_column)
            labels = _as_labels(arr[:, j], p)
            arr = np.delete(arr, j, axis=1)
        views.append(arr)
    if label_path is not None:
        lp = Path(label_path)
        _, arr = _read_numeric_csv(lp)
        labels = _as_labels(arr[:, 0], lp)
    n = labels.shape[0]
    for p, x in zip(view_paths, views):
        if x.shape[0] != n:
            raise DataError(f"{p}: {x.shape[0]} rows but {n} labels (row-count mismatch)")
    return MultiViewDataset(views, labels, int(labels.max()) + 1)


def read_conflicts_csv(path, n: int, n_views: int) -> ConflictLabels:
    status = np.zeros((n, n_views), dtype=np.int8)
    eff = np.full((n, n_views), -1, dtype=np.int64)
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            try:
                i, v = int(row["instance_id"]), int(row["view_id"])
                status[i, v] = _STATUS_CODES[row["status"]]
                eff[i, v] = int(row["effective_label"])
            except (KeyError, ValueError, IndexError) as exc:
                raise DataError(f"{path}:{lineno}: bad conflict row ({exc})") from exc
    if np.any(eff < 0):
        raise DataError(f"{path}: conflict table does not cover every (instance, view)")
    return ConflictLabels(status, eff)


def load_dataset_dir(directory) -> MultiViewDataset:
    d = Path(directory)
    view_paths = sorted(d.glob("view_*.csv"), key=lambda p: int(p.stem.split("_")[1]))
    if not view_paths:
        raise DataError(f"{d}: no view_*.csv files")
    ds = load_csv(view_paths, label_path=d / "labels.csv")
    if (d / "class_count.txt").exists():
        ds.class_count = max(ds.class_count, int((d / "class_count.txt").read_text().strip()))
    if (d / "conflicts.csv").exists():
        ds.conflicts = read_conflicts_csv(d / "conflicts.csv", ds.n_instances, ds.n_views)
    return ds


def save_dataset_dir(ds: MultiViewDataset, directory) -> list[Path]:
    """Write the CSV layout; each file is written atomically. Returns the written paths."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    written = []
    for v, x in enumerate(ds.views):
        p = d / f"view_{v}.csv"
        with atomic_writer(p) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"f{j}" for j in range(x.shape[1])])
            w.writerows([[fmt_exact(c) for c in row] for row in x])
        written.append(p)
    p = d / "labels.csv"
    with atomic_writer(p) as fh:
        fh.write("label\n")
        fh.writelines(f"{int(y)}\n" for y in ds.labels)
    written.append(p)
    p = d / "class_count.txt"
    with atomic_writer(p) as fh:
        fh.write(f"{ds.class_count}\n")
    written.append(p)
    if ds.conflicts is not None:
        p = d / "conflicts.csv"
        with atomic_writer(p) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["instance_id", "view_id", "status", "effective_label"])
            for i in range(ds.n_instances):
                for v in range(ds.n_views):
                    w.writerow([i, v, STATUS_NAMES[int(ds.conflicts.status[i, v])],
                                int(ds.conflicts.effective_labels[i, v])])
        written.append(p)
    return written


# --- generation and corruption -----------------------------------------------

def split(ds: MultiViewDataset, ratio: float = 0.8, seed: int = 0) -> tuple[MultiViewDataset, MultiViewDataset]:
    """Seeded shuffle, then the first ``round(ratio * N)`` instances go to train. No stratification."""
    if not 0.0 < ratio < 1.0:
        raise InvalidInputError("ratio must lie in (0, 1)")
    n = ds.n_instances
    if n < 2:
        raise InvalidInputError("need at least 2 instances to split")
    n_train = min(max(int(round(ratio * n)), 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    return ds.subset(np.sort(perm[:n_train])), ds.subset(np.sort(perm[n_train:]))


def generate_synthetic(n_views: int, class_count: int, n_instances: int, view_dims: Sequence[int] | int,
                       separation: float, seed: int, noise_std: float = 1.0) -> MultiViewDataset:
    """Isotropic Gaussian blobs; each (class, view) mean sits on a sphere of radius ``separation``."""
    dims = [int(view_dims)] * n_views if np.isscalar(view_dims) else [int(d) for d in view_dims]
    if len(dims) != n_views or min(dims) < 1 or n_views < 1 or class_count < 2 or n_instances < 1:
        raise InvalidInputError("views, classes, instances and dims must be positive (K >= 2)")
    if separation < 0:
        raise InvalidInputError("separation must be >= 0")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n_instances) % class_count)
    views = []
    for d in dims:
        centers = rng.normal(size=(class_count, d))
        centers *= separation / np.linalg.norm(centers, axis=1, keepdims=True)
        views.append(centers[labels] + noise_std * rng.normal(size=(n_instances, d)))
    return MultiViewDataset(views, labels, class_count, ConflictLabels.clean(labels, n_views))


def inject_misalignment(ds: MultiViewDataset, spec: CorruptionSpec) -> tuple[MultiViewDataset, ConflictLabels]:
    """Swap selected view rows for the same view's row from an instance of another class."""
    v_count = ds.n_views
    if v_count < 2:
        raise InvalidInputError("misalignment needs at least 2 views")
    per = spec.views_per_instance if spec.views_per_instance is not None else max(v_count - 2, 1)
    if not 1 <= per <= v_count:
        raise InvalidInputError(f"views_per_instance must lie in [1, {v_count}]")
    rng = np.random.default_rng(spec.seed)
    conflicts = ds.conflict_labels().copy()
    views = [x.copy() for x in ds.views]
    n = ds.n_instances
    chosen = rng.choice(n, size=int(round(spec.misalign_rate * n)), replace=False)
    for i in np.sort(chosen):
        donors = np.flatnonzero(ds.labels != ds.labels[i])
        if donors.size == 0:
            raise DataError(f"instance {i}: no instance of a different class to borrow a view from")
        for v in np.sort(rng.choice(v_count, size=per, replace=False)):
            j = rng.choice(donors)
            views[v][i] = ds.views[v][j]
            conflicts.status[i, v] = MISALIGNED
            conflicts.effective_labels[i, v] = ds.labels[j]
    return MultiViewDataset(views, ds.labels.copy(), ds.class_count, conflicts), conflicts


def inject_noise(ds: MultiViewDataset, spec: CorruptionSpec) -> tuple[MultiViewDataset, ConflictLabels]:
    """Add i.i.d. Gaussian noise to a random number (uniform in [1, V]) of views of selected instances."""
    rng = np.random.default_rng(spec.seed)
    conflicts = ds.conflict_labels().copy()
    views = [x.copy() for x in ds.views]
    n, v_count = ds.n_instances, ds.n_views
    chosen = rng.choice(n, size=int(round(spec.noise_rate * n)), replace=False)
    for i in np.sort(chosen):
        count = int(rng.integers(1, v_count + 1))
        for v in np.sort(rng.choice(v_count, size=count, replace=False)):
            views[v][i] = views[v][i] + rng.normal(spec.noise_mean, spec.noise_std, size=views[v].shape[1])
            if spec.noise_std > 0 and conflicts.status[i, v] == CLEAN:
                conflicts.status[i, v] = NOISY
    return MultiViewDataset(views, ds.labels.copy(), ds.class_count, conflicts), conflicts


def corruption_protocol(ds: MultiViewDataset, spec: CorruptionSpec, ratio: float = 0.8,
                        split_seed: int = 0) -> tuple[MultiViewDataset, MultiViewDataset]:
    """8:2 split, misalignment in both halves (independent seeds), noise on the test half only."""
    train, test = split(ds, ratio, split_seed)
    seeds = np.random.SeedSequence(spec.seed).generate_state(3)
    train, _ = inject_misalignment(train, replace(spec, seed=int(seeds[0])))
    test, _ = inject_misalignment(test, replace(spec, seed=int(seeds[1])))
    test, _ = inject_noise(test, replace(spec, seed=int(seeds[2])))
    return train, test


def linear_probe_accuracy(ds: MultiViewDataset, ratio: float = 0.8, seed: int = 0) -> np.ndarray:
    """Held-out accuracy of a least-squares one-vs-rest linear classifier, one entry per view.

    A cheap, training-free reference for how separable each view is.
    """
    train, test = split(ds, ratio, seed)
    targets = np.eye(ds.class_count)[train.labels]
    out = []
    for xtr, xte in zip(train.views, test.views):
        design = np.hstack([xtr, np.ones((xtr.shape[0], 1))])
        coef, *_ = np.linalg.lstsq(design, targets, rcond=None)
        scores = np.hstack([xte, np.ones((xte.shape[0], 1))]) @ coef
        out.append(float(np.mean(np.argmax(scores, axis=1) == test.labels)))
    return np.array(out)


CORRUPTION_SEED_OFFSET = 100
SPLIT_SEED_OFFSET = 200


def synthetic_benchmark(seed: int, n_views: int = 3, class_count: int = 4, n_instances: int = 1200,
                        view_dims: Sequence[int] | int = 16, separation: float = 1.85, noise_std: float = 0.5,
                        corruption: CorruptionSpec | None = None,
                        split_ratio: float = 0.8) -> tuple[MultiViewDataset, MultiViewDataset]:
    """Generate blobs and apply the corruption protocol, all derived from one seed."""
    ds = generate_synthetic(n_views, class_count, n_instances, view_dims, separation, seed, noise_std)
    spec = replace(corruption or CorruptionSpec(), seed=seed + CORRUPTION_SEED_OFFSET)
    return corruption_protocol(ds, spec, split_ratio, seed + SPLIT_SEED_OFFSET)
