"""End-to-end experiment plumbing shared by the CLI and test harnesses.

A run is described by one JSON-serializable config document. Unset fields
take the protocol defaults; unknown keys are rejected so typos fail loudly.
The sha256 hash of the resolved document identifies the run, and every seed
used anywhere derives from the single run seed.
"""

from __future__ import annotations

import csv
import hashlib
import json
from copy import deepcopy
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import baselines as B
from . import data as D
from . import imputation as I
from .errors import ConfigurationError, DimensionError, StimputeError
from .models import Model, ModelSpec, build_model
from .training import TrainConfig, TrainResult, train

MODEL_METHODS = ("multiple", "single", "latent_knn")
BASELINE_METHODS = ("wh_average", "neighbor_value", "knn_pca")
ALL_METHODS = MODEL_METHODS + BASELINE_METHODS

DEFAULT_CONFIG = {
    "seed": 0,
    "precision": "64",
    "data": {"synth": {"sensors": 10, "days": 60, "seed": 0,
                       "noise_level": 0.15, "event_rate": 1.0,
                       "step_seconds": 300}},
    "split_ratio": 2.0 / 3.0,
    "window": 6,
    "missing": {"fraction": 0.25, "duration_range_hours": [0.5, 4.0]},
    "model": {"variant": "FC_NN"},
    "train": {"batch_size": 256, "epochs": 100, "lr": 0.001,
              "validation_fraction": 0.1, "clip_norm": None},
    "impute": {"methods": ["multiple"], "latent_k": 13, "pca_k": 20,
               "pca_components": 10, "clip_negative": True,
               "dtw_slice_steps": 4032, "dtw_band": None},
    "sweep": {"param": None, "values": []},
}

_MODEL_KEYS = {"variant", "layer_sizes", "kernel_widths", "filters_per_kernel",
               "lstm_units", "dropout_rate", "leaky_alpha"}


def _merge_section(name, defaults, given):
    if not isinstance(given, dict):
        raise ConfigurationError(f"config section {name!r} must be an object")
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigurationError(
            f"unknown config key(s) in {name!r}: {sorted(unknown)}")
    out = deepcopy(defaults)
    out.update(deepcopy(given))
    return out


def resolve_config(doc: dict) -> dict:
    """Fill defaults and validate structure; returns the canonical document."""
    if not isinstance(doc, dict):
        raise ConfigurationError("config must be a JSON object")
    unknown = set(doc) - set(DEFAULT_CONFIG)
    if unknown:
        raise ConfigurationError(f"unknown config key(s): {sorted(unknown)}")
    cfg = deepcopy(DEFAULT_CONFIG)
    for key in ("seed", "precision", "split_ratio", "window"):
        if key in doc:
            cfg[key] = doc[key]
    if "data" in doc:
        data = doc["data"]
        if not isinstance(data, dict) or set(data) - {"csv", "synth"} or not data:
            raise ConfigurationError(
                "config 'data' must contain 'csv' and/or 'synth'")
        if "csv" in data and "synth" in data:
            raise ConfigurationError("config 'data' takes either 'csv' or "
                                     "'synth', not both")
        if "csv" in data:
            cfg["data"] = {"csv": data["csv"]}
        else:
            cfg["data"] = {"synth": _merge_section(
                "data.synth", DEFAULT_CONFIG["data"]["synth"], data["synth"])}
    for section in ("missing", "train", "impute", "sweep"):
        if section in doc:
            cfg[section] = _merge_section(section, DEFAULT_CONFIG[section],
                                          doc[section])
    if "model" in doc:
        if not isinstance(doc["model"], dict):
            raise ConfigurationError("config 'model' must be an object")
        unknown = set(doc["model"]) - _MODEL_KEYS
        if unknown:
            raise ConfigurationError(
                f"unknown config key(s) in 'model': {sorted(unknown)}")
        cfg["model"] = deepcopy(doc["model"])
        cfg["model"].setdefault("variant", "FC_NN")
    if cfg["precision"] not in ("32", "64"):
        raise ConfigurationError(
            f"precision must be '32' or '64', got {cfg['precision']!r}")
    bad = [m for m in cfg["impute"]["methods"] if m not in ALL_METHODS]
    if bad:
        raise ConfigurationError(
            f"unknown imputation method(s) {bad}; expected from {ALL_METHODS}")
    if cfg["sweep"]["param"] not in (None, "latent_k", "latent_size", "variant"):
        raise ConfigurationError(
            f"sweep param must be latent_k, latent_size or variant, "
            f"got {cfg['sweep']['param']!r}")
    return cfg


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(resolved: dict) -> str:
    return hashlib.sha256(canonical_json(resolved).encode()).hexdigest()[:12]


def derived_seeds(seed: int) -> dict:
    """Stable child seeds for every random stage of a run."""
    state = np.random.SeedSequence(seed).generate_state(4)
    return {"train_mask": int(state[0]), "test_mask": int(state[1]),
            "model_init": int(state[2]), "train_loop": int(state[3])}


@dataclass
class Prepared:
    """Everything the preprocessing protocol produces for one run."""

    train_raw: D.SpatioTemporalSeries
    test_raw: D.SpatioTemporalSeries
    train_mask: D.MissingMask
    test_mask: D.MissingMask
    scaler: D.ScalerParams
    train_scaled: D.SpatioTemporalSeries
    test_scaled: D.SpatioTemporalSeries
    train_windows: D.WindowSet
    test_windows: D.WindowSet
    window: int


def load_series(cfg: dict) -> D.SpatioTemporalSeries:
    if "csv" in cfg["data"]:
        return D.load_csv(cfg["data"]["csv"])
    return D.synth_generate(D.SynthSpec(**cfg["data"]["synth"]))


def prepare_data(cfg: dict, series: D.SpatioTemporalSeries | None = None) -> Prepared:
    """Split, inject missing blocks, fit the scaler on observed training
    values, scale, and window. The scaler never sees test values."""
    if series is None:
        series = load_series(cfg)
    w = cfg["window"]
    seeds = derived_seeds(cfg["seed"])
    train_raw, test_raw = D.train_test_split(series, cfg["split_ratio"], w)
    dur = tuple(cfg["missing"]["duration_range_hours"])
    frac = cfg["missing"]["fraction"]
    train_mask = D.generate_missing_blocks(train_raw, frac, dur,
                                           seed=seeds["train_mask"])
    test_mask = D.generate_missing_blocks(test_raw, frac, dur,
                                          seed=seeds["test_mask"])
    scaler = D.fit_scaler(train_raw, train_mask)
    train_scaled = D.minmax_scale(train_raw, scaler)
    test_scaled = D.minmax_scale(test_raw, scaler)
    return Prepared(
        train_raw=train_raw, test_raw=test_raw,
        train_mask=train_mask, test_mask=test_mask, scaler=scaler,
        train_scaled=train_scaled, test_scaled=test_scaled,
        train_windows=D.slide_windows(train_scaled, train_mask, w),
        test_windows=D.slide_windows(test_scaled, test_mask, w),
        window=w)


def model_spec_from_config(cfg: dict, prepared: Prepared) -> ModelSpec:
    series = prepared.train_raw
    return ModelSpec(sensors=series.n_sensors, window=prepared.window,
                     features=series.n_features, **cfg["model"])


def train_configured(cfg: dict, prepared: Prepared,
                     spec: ModelSpec | None = None) -> TrainResult:
    seeds = derived_seeds(cfg["seed"])
    if spec is None:
        spec = model_spec_from_config(cfg, prepared)
    dtype = np.float32 if cfg["precision"] == "32" else np.float64
    model = build_model(spec, seeds["model_init"], dtype=dtype)
    tc = TrainConfig(seed=seeds["train_loop"], precision=cfg["precision"],
                     **cfg["train"])
    return train(model, prepared.train_windows, tc)


def check_model_dims(model: Model, prepared: Prepared):
    spec = model.spec
    series = prepared.test_raw
    expected = (series.n_sensors, prepared.window, series.n_features)
    got = (spec.sensors, spec.window, spec.features)
    if got != expected:
        raise DimensionError(
            f"checkpoint dims (s={got[0]}, w={got[1]}, f={got[2]}) do not "
            f"match data (s={expected[0]}, w={expected[1]}, f={expected[2]})")


def run_imputations(cfg: dict, prepared: Prepared, model: Model | None,
                    methods=None) -> dict:
    """Run the requested methods; returns {method: ImputationReport}."""
    icfg = cfg["impute"]
    methods = list(icfg["methods"] if methods is None else methods)
    clip = icfg["clip_negative"]
    needs_model = [m for m in methods if m in MODEL_METHODS]
    if needs_model and model is None:
        raise ConfigurationError(
            f"method(s) {needs_model} require a trained checkpoint")
    if model is not None:
        check_model_dims(model, prepared)
    reports: dict[str, I.ImputationReport] = {}
    wh_table = None
    for method in methods:
        if method == "multiple":
            reports[method] = I.multiple_impute(model, prepared.test_windows,
                                                prepared.scaler, clip)
        elif method == "single":
            reports[method] = I.single_impute(model, prepared.test_windows,
                                              prepared.scaler, clip)
        elif method == "latent_knn":
            train_lat = I.encode_latents(model, prepared.train_windows)
            test_lat = I.encode_latents(model, prepared.test_windows)
            reports[method] = I.latent_knn_impute(
                train_lat, prepared.train_windows, test_lat,
                prepared.test_windows, icfg["latent_k"], prepared.scaler, clip)
        elif method in ("wh_average", "neighbor_value"):
            if wh_table is None:
                wh_table = B.build_wh_table(prepared.train_scaled,
                                            prepared.train_mask)
            if method == "wh_average":
                est = B.wh_average_impute(wh_table, prepared.test_scaled,
                                          prepared.test_mask)
                reports[method] = I.report_from_flat_estimates(
                    "wh_average", est, prepared.test_raw, prepared.test_mask,
                    prepared.scaler, clip)
            else:
                ranking = B.rank_neighbors_by_dtw(
                    prepared.train_scaled, prepared.train_mask, wh_table,
                    icfg["dtw_slice_steps"], icfg["dtw_band"])
                est, fallback = B.neighbor_value_impute(
                    prepared.test_scaled, prepared.test_mask, ranking, wh_table)
                reports[method] = I.report_from_flat_estimates(
                    "neighbor_value", est, prepared.test_raw,
                    prepared.test_mask, prepared.scaler, clip,
                    extra={"wh_fallbacks": int(fallback.sum())})
        elif method == "knn_pca":
            matrix = B.pca_training_matrix(prepared.train_windows)
            pca = B.pca_fit(matrix, icfg["pca_components"])
            reports[method] = I.pca_knn_impute_series(
                pca, prepared.train_windows, prepared.test_windows,
                icfg["pca_k"], prepared.scaler, clip)
        else:
            raise ConfigurationError(f"unknown method {method!r}")
    return reports


def write_comparison_csv(path, reports: dict):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "mae", "rmse", "n_missing"])
        for method, report in reports.items():
            writer.writerow([method, repr(report.mae), repr(report.rmse),
                             report.n_missing])


def run_sweep(cfg: dict, out_dir: Path) -> list:
    """One train/evaluate cycle per grid point; failures leave markers."""
    param = cfg["sweep"]["param"]
    values = cfg["sweep"]["values"]
    if param is None or not values:
        raise ConfigurationError("sweep requires a param and a value grid")
    prepared = prepare_data(cfg)
    rows = []
    model = None
    if param == "latent_k":
        result = train_configured(cfg, prepared)
        model = result.model
        train_lat = I.encode_latents(model, prepared.train_windows)
        test_lat = I.encode_latents(model, prepared.test_windows)
    for value in values:
        try:
            if param == "latent_k":
                report = I.latent_knn_impute(
                    train_lat, prepared.train_windows, test_lat,
                    prepared.test_windows, int(value), prepared.scaler,
                    cfg["impute"]["clip_negative"])
            elif param == "latent_size":
                point = deepcopy(cfg)
                sizes = list(cfg["model"].get("layer_sizes",
                                              (32, 16, 12, 16, 32)))
                sizes[(len(sizes) - 1) // 2] = int(value)
                point["model"]["layer_sizes"] = sizes
                result = train_configured(point, prepared)
                report = run_imputations(point, prepared, result.model,
                                         ["latent_knn"])["latent_knn"]
            else:  # variant
                point = deepcopy(cfg)
                point["model"] = {"variant": str(value)}
                result = train_configured(point, prepared)
                report = run_imputations(point, prepared, result.model,
                                         ["multiple"])["multiple"]
            rows.append((value, report.mae, report.rmse, ""))
        except StimputeError as exc:
            rows.append((value, "", "", f"error: {exc}"))
    with open(out_dir / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([param, "mae", "rmse", "status"])
        for value, mae, rmse, status in rows:
            writer.writerow([value,
                             repr(mae) if mae != "" else "",
                             repr(rmse) if rmse != "" else "", status])
    return rows
