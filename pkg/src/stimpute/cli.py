"""Command-line orchestration of the full experiment loop.

Subcommands: synth, train, impute, sweep, evaluate. One JSON config file
describes a run; its resolved hash names the output directory, so a rerun
with the same config is refused unless --force is given. Artifacts under
out/<confighash>/ are byte-reproducible from the config (wall-clock timings
live in a separate timings.json sidecar, which is not). STIMPUTE_THREADS
caps the worker count for window scans.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import experiment as E
from .data import save_csv, save_mask_csv
from .errors import ConfigurationError, StimputeError
from .imputation import evaluate
from .models import Model
from .training import write_loss_trace


def _load_config(args) -> dict:
    if not args.config:
        raise ConfigurationError("this command requires --config PATH")
    try:
        doc = json.loads(Path(args.config).read_text())
    except OSError as exc:
        raise ConfigurationError(f"cannot read config: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config is not valid JSON: {exc}")
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.precision is not None:
        doc["precision"] = args.precision
    return E.resolve_config(doc)


def _run_dir(args, cfg) -> Path:
    out = Path(args.out) / E.config_hash(cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(
        json.dumps(cfg, sort_keys=True, indent=2) + "\n")
    return out


def _guard(path: Path, force: bool):
    if path.exists() and not force:
        raise ConfigurationError(
            f"{path} already exists for this config hash; use --force to "
            f"overwrite")


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    if "synth" not in cfg["data"]:
        raise ConfigurationError("synth command needs a data.synth section")
    out = _run_dir(args, cfg)
    target = out / "dataset.csv"
    _guard(target, args.force)
    series = E.load_series(cfg)
    save_csv(target, series)
    print(target)
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _run_dir(args, cfg)
    _guard(out / "checkpoint.json", args.force)
    started = time.perf_counter()
    prepared = E.prepare_data(cfg)
    save_mask_csv(out / "mask_train.csv", prepared.train_mask, prepared.train_raw)
    save_mask_csv(out / "mask_test.csv", prepared.test_mask, prepared.test_raw)
    result = E.train_configured(cfg, prepared)
    result.model.save(out / "checkpoint.json")
    best = Model(result.model.spec, result.best_params,
                 seed=result.model.seed, dtype=result.model.dtype)
    best.save(out / "checkpoint_best.json")
    write_loss_trace(out / "loss.csv", result.trace)
    _write_timings(out, {"train_s": time.perf_counter() - started,
                         "best_epoch": result.best_epoch})
    print(out / "checkpoint.json")
    return 0


def cmd_impute(args) -> int:
    cfg = _load_config(args)
    out = _run_dir(args, cfg)
    methods = cfg["impute"]["methods"]
    _guard(out / "comparison.csv", args.force)
    model = Model.load(args.checkpoint) if args.checkpoint else None
    started = time.perf_counter()
    prepared = E.prepare_data(cfg)
    reports = E.run_imputations(cfg, prepared, model)
    chash = E.config_hash(cfg)
    timings = {"total_s": time.perf_counter() - started, "methods": {}}
    for method, report in reports.items():
        report.config_hash = chash
        report.seed = cfg["seed"]
        report.write_json(out / f"report_{method}.json")
        report.write_csv(out / f"perindex_{method}.csv", prepared.test_raw)
        timings["methods"][method] = report.timings
    E.write_comparison_csv(out / "comparison.csv", reports)
    if "latent_knn" in reports and model is not None:
        _write_latents(out, cfg, prepared, model)
    _write_timings(out, timings)
    for method, report in reports.items():
        print(f"{method}: MAE={report.mae:.4f} RMSE={report.rmse:.4f}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    out = _run_dir(args, cfg)
    plots = out / "plots"
    plots.mkdir(exist_ok=True)
    _guard(plots / "sweep.csv", args.force)
    rows = E.run_sweep(cfg, plots)
    for value, mae, rmse, status in rows:
        tag = status or f"MAE={mae:.4f} RMSE={rmse:.4f}"
        print(f"{cfg['sweep']['param']}={value}: {tag}")
    failed = [r for r in rows if r[3]]
    return 1 if failed else 0


def cmd_evaluate(args) -> int:
    truth, estimates = [], []
    with open(args.per_index, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            truth.append(float(row["truth"]))
            estimates.append(float(row["estimate"]))
    mae, rmse = evaluate(np.asarray(estimates), np.asarray(truth))
    print(json.dumps({"mae": mae, "rmse": rmse, "n_missing": len(truth)},
                     sort_keys=True))
    return 0


def _write_timings(out: Path, timings: dict):
    # wall-clock sidecar: deliberately outside the byte-determinism contract
    (out / "timings.json").write_text(json.dumps(timings, sort_keys=True,
                                                 indent=2) + "\n")


def _write_latents(out: Path, cfg, prepared, model):
    from .imputation import encode_latents

    latents = encode_latents(model, prepared.test_windows)
    plots = out / "plots"
    plots.mkdir(exist_ok=True)
    with open(plots / "latents_test.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        dim = latents.shape[1]
        writer.writerow(["origin", *[f"z{i}" for i in range(dim)]])
        for origin, vec in zip(prepared.test_windows.origins, latents):
            writer.writerow([int(origin), *[repr(float(v)) for v in vec]])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stimpute",
        description="Spatio-temporal missing-data imputation experiments")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run-config file")
    common.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    common.add_argument("--out", default="out", help="output root directory")
    common.add_argument("--force", action="store_true",
                        help="overwrite artifacts of an existing run")
    common.add_argument("--precision", choices=["32", "64"], default=None,
                        help="override numeric precision")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common],
                   help="generate a synthetic dataset CSV").set_defaults(
        func=cmd_synth)
    sub.add_parser("train", parents=[common],
                   help="train the configured model").set_defaults(
        func=cmd_train)
    impute = sub.add_parser("impute", parents=[common],
                            help="run imputation methods and emit reports")
    impute.add_argument("--checkpoint", help="trained model checkpoint")
    impute.set_defaults(func=cmd_impute)
    sub.add_parser("sweep", parents=[common],
                   help="sweep a parameter grid").set_defaults(func=cmd_sweep)
    ev = sub.add_parser("evaluate", parents=[common],
                        help="recompute MAE/RMSE from a per-index CSV")
    ev.add_argument("--per-index", required=True,
                    help="perindex_<method>.csv file")
    ev.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StimputeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
