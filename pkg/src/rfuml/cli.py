"""Command-line entry point.

Subcommands::

    gen-data       synthetic multi-view blobs -> dataset directory
    corrupt        dataset directory -> train/ and test/ with injected conflicts
    train          four-stage robust run (or the single-stage control with --no-rlvc)
    eval           re-evaluate a run directory's final checkpoints on a dataset
    divide-report  division FPR/FNR of a run against conflict ground truth
    density        uncertainty histogram of clean vs conflicting instances

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import shutil
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

from . import config as config_mod
from .data import (CORRUPTION_SEED_OFFSET, SPLIT_SEED_OFFSET, CorruptionSpec, MultiViewDataset, corruption_protocol,
                   generate_synthetic, load_dataset_dir, save_dataset_dir)
from .errors import ConfigError, DataError, NumericFailure, RfumlError
from .gmm import read_division_csv
from .io import write_json
from .metrics import division_rates, evaluation_report, rates_to_dict, uncertainty_density, write_density_csv
from .network import load_model
from .trainer import StageConfig, TrainedEnsemble, evaluate, run_control, run_pipeline

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("rfuml")


@contextlib.contextmanager
def _atomic_dir(target: Path):
    """Build a directory under a temporary sibling name and swap it into place on success."""
    target = Path(target)
    parent = target.parent
    if not parent.is_dir():
        raise DataError(f"{parent}: output parent directory does not exist")
    try:
        tmp = Path(tempfile.mkdtemp(dir=parent, prefix=f".{target.name}."))
    except OSError as exc:
        raise DataError(f"{parent}: cannot create output ({exc.strerror})") from exc
    try:
        yield tmp
        if target.exists():
            old = target.with_name(f".{target.name}.old")
            shutil.rmtree(old, ignore_errors=True)
            os.replace(target, old)
            os.replace(tmp, target)
            shutil.rmtree(old, ignore_errors=True)
        else:
            os.replace(tmp, target)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def _load_cfg(args) -> dict:
    overrides = [config_mod.parse_assignment(s) for s in args.set or []]
    if getattr(args, "seed", None) is not None:
        overrides.append({"seed": args.seed})
    if getattr(args, "data", None) is not None:
        overrides.append({"data": {"dir": str(args.data)}})
    return config_mod.load_config(args.config, overrides)


def _train_test_dirs(root: Path) -> tuple[Path, Path | None]:
    """A corrupted directory holds train/ and test/; a plain dataset directory is train-only."""
    if (root / "train").is_dir():
        return root / "train", (root / "test") if (root / "test").is_dir() else None
    return root, None


def _eval_dir(root: Path) -> Path:
    return root / "test" if (root / "test").is_dir() else root


def _corruption_spec(cfg: dict) -> CorruptionSpec:
    c = cfg["corruption"]
    return CorruptionSpec(misalign_rate=float(c["misalign_rate"]), views_per_instance=c["views_per_instance"],
                          noise_rate=float(c["noise_rate"]), noise_std=float(c["noise_std"]),
                          noise_mean=float(c["noise_mean"]))


def cmd_gen_data(args) -> int:
    cfg = _load_cfg(args)
    s = cfg["synthetic"]
    ds = generate_synthetic(int(s["n_views"]), int(s["class_count"]), int(s["n_instances"]), s["view_dims"],
                            float(s["separation"]), int(cfg["seed"]), float(s["noise_std"]))
    with _atomic_dir(args.out) as tmp:
        save_dataset_dir(ds, tmp)
    log.info("wrote %d instances x %d views to %s", ds.n_instances, ds.n_views, args.out)
    return EXIT_OK


def cmd_corrupt(args) -> int:
    cfg = _load_cfg(args)
    ds = load_dataset_dir(config_mod.require(cfg, "data.dir"))
    seed = int(cfg["seed"])
    spec = replace(_corruption_spec(cfg), seed=seed + CORRUPTION_SEED_OFFSET)
    train, test = corruption_protocol(ds, spec, float(cfg["corruption"]["split_ratio"]), seed + SPLIT_SEED_OFFSET)
    with _atomic_dir(args.out) as tmp:
        save_dataset_dir(train, tmp / "train")
        save_dataset_dir(test, tmp / "test")
    log.info("train %d / test %d instances written to %s", train.n_instances, test.n_instances, args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    root = Path(config_mod.require(cfg, "data.dir"))
    stage_cfg = StageConfig.from_config(cfg)
    train_dir, test_dir = _train_test_dirs(root)
    train = load_dataset_dir(train_dir)
    test = load_dataset_dir(test_dir) if test_dir is not None else None
    out = Path(args.out)
    if not out.parent.is_dir():
        raise DataError(f"{out.parent}: output parent directory does not exist")
    runner = run_control if args.no_rlvc else run_pipeline
    result = runner(train, test, stage_cfg, out_dir=out, raw_config=cfg)
    acc = result.manifest["final"]["test_accuracy"]
    log.info("%s run complete in %s (test accuracy %s)", result.manifest["kind"], out, acc)
    return EXIT_OK


def _load_run(run_dir: Path) -> tuple[dict, TrainedEnsemble]:
    mpath = run_dir / "manifest.json"
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"{mpath}: cannot read manifest ({exc.strerror})") from exc
    except ValueError as exc:
        raise DataError(f"{mpath}: not valid JSON") from exc
    if manifest.get("status") != "complete" or "final" not in manifest:
        raise DataError(f"{run_dir}: run is not complete")
    models = []
    for rel in manifest["final"]["checkpoints"]:
        path = run_dir / rel
        if not path.is_file():
            raise DataError(f"{path}: missing checkpoint")
        models.append(load_model(path))
    if not models:
        raise DataError(f"{run_dir}: manifest lists no checkpoints")
    return manifest, TrainedEnsemble(models, training_mode=False)


def _run_g(manifest: dict, cfg: dict) -> str:
    run_cfg = manifest.get("config") or {}
    return run_cfg.get("fusion", {}).get("g", cfg["fusion"]["g"])


def _eval_data(args, cfg: dict, ensemble: TrainedEnsemble) -> MultiViewDataset:
    data = load_dataset_dir(_eval_dir(Path(config_mod.require(cfg, "data.dir"))))
    if data.view_dims != [m.spec.input_dim for m in ensemble.models]:
        raise DataError(f"dataset view dims {data.view_dims} do not match the run's models")
    data.class_count = max(data.class_count, ensemble.class_count)
    return data


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    run_dir = Path(args.run)
    manifest, ensemble = _load_run(run_dir)
    data = _eval_data(args, cfg, ensemble)
    fusion = manifest["final"].get("fusion", "rmf")
    ev = evaluate(ensemble, data, fusion, _run_g(manifest, cfg))
    report = evaluation_report(ev["fused"], ev["uncertainty"], data.labels,
                               data.conflict_labels().instance_conflicted(), bins=int(cfg["eval"]["bins"]))
    out = Path(args.out) if args.out else run_dir / "eval"
    with _atomic_dir(out) as tmp:
        doc = report.to_dict()
        doc["fusion"] = fusion
        doc["dataset_fingerprint"] = data.fingerprint()
        write_json(tmp / "report.json", doc)
        write_density_csv(tmp / "density.csv", report.density)
    log.info("accuracy %.4f, report written to %s", report.accuracy, out)
    return EXIT_OK


def cmd_divide_report(args) -> int:
    cfg = _load_cfg(args)
    run_dir = Path(args.run)
    div_path = run_dir / "division.csv"
    if not div_path.is_file():
        raise DataError(f"{div_path}: no division table (was this a control run?)")
    division = read_division_csv(div_path)
    train_dir, _ = _train_test_dirs(Path(config_mod.require(cfg, "data.dir")))
    train = load_dataset_dir(train_dir)
    if train.conflicts is None:
        raise DataError(f"{train_dir}: no conflicts.csv ground truth")
    if train.conflicts.status.shape != division.is_clean.shape:
        raise DataError(f"division covers {division.is_clean.shape}, dataset has {train.conflicts.status.shape}")
    out = Path(args.out) if args.out else run_dir / "division_report.json"
    write_json(out, rates_to_dict(division_rates(division, train.conflicts)))
    log.info("division report written to %s", out)
    return EXIT_OK


def cmd_density(args) -> int:
    cfg = _load_cfg(args)
    manifest, ensemble = _load_run(Path(args.run))
    data = _eval_data(args, cfg, ensemble)
    ev = evaluate(ensemble, data, manifest["final"].get("fusion", "rmf"), _run_g(manifest, cfg))
    table = uncertainty_density(ev["uncertainty"], data.conflict_labels().instance_conflicted(),
                                int(cfg["eval"]["bins"]))
    out = Path(args.out) if args.out else Path(args.run) / "density.csv"
    write_density_csv(out, table)
    log.info("density table written to %s", out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    epilog = "configuration keys (override with --set key=value):\n" + config_mod.describe_defaults()
    parser = argparse.ArgumentParser(prog="rfuml", description="Robust multi-view fuzzy classification.",
                                     epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    common.add_argument("--seed", type=int, help="override the seed")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_text, data=True, run=False, out_required=True):
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text, epilog=epilog,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        if data:
            p.add_argument("--data", type=Path, help="dataset directory (sets data.dir)")
        if run:
            p.add_argument("--run", type=Path, required=True, help="run directory written by 'train'")
        p.add_argument("--out", type=Path, required=out_required, help="output path")
        p.set_defaults(func=func)
        return p

    add("gen-data", cmd_gen_data, "generate a synthetic multi-view dataset", data=False)
    add("corrupt", cmd_corrupt, "split a dataset and inject view conflicts")
    p = add("train", cmd_train, "run the robust pipeline and write a run directory")
    p.add_argument("--no-rlvc", action="store_true", help="train the single-stage control instead")
    add("eval", cmd_eval, "evaluate a finished run", run=True, out_required=False)
    add("divide-report", cmd_divide_report, "division error rates of a run", run=True, out_required=False)
    add("density", cmd_density, "uncertainty density table of a run", run=True, out_required=False)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        code, msg = EXIT_CONFIG, f"config error: {exc}"
    except NumericFailure as exc:
        code, msg = EXIT_NUMERIC, f"numeric failure: {exc}"
    except (DataError, OSError) as exc:
        code, msg = EXIT_DATA, f"data error: {exc}"
    except RfumlError as exc:
        code, msg = EXIT_DATA, f"invalid input: {exc}"
    print(f"rfuml: {msg}".replace("\n", " "), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
