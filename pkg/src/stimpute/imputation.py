"""Imputation from autoencoder outputs plus MAE/RMSE evaluation.

Two reconstruction modes: multiple imputation averages every reconstruction
of a timestamp across the stride-1 windows covering it (interior timestamps
are covered by w windows, edges by fewer); single imputation keeps exactly
one designated reconstruction, by default the last position of the window
ending at the timestamp (the earliest covering window for the first w-1
steps). Latent-feature KNN imputes missing entries from the positionwise
mean of the k nearest training windows' clean values, then averages across
overlapping windows the same way.

Metrics are computed in original flow units over the injected-missing index
set only. Estimates are clipped below at zero flow after inverse scaling
(switchable).
"""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import knn_indices
from .data import ScalerParams, WindowSet, inverse_scale
from .errors import ConfigurationError, ContractError

CHUNK = 512


def workers() -> int:
    """Worker count for parallel window scans, capped by STIMPUTE_THREADS."""
    n = os.cpu_count() or 1
    cap = os.environ.get("STIMPUTE_THREADS")
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def evaluate(estimates, truth, missing_mask=None):
    """(MAE, RMSE) over the missing index set.

    Either aligned vectors (mask omitted) or full [s, t] grids plus a
    boolean mask; grid estimates must be present (finite) at every missing
    index.
    """
    estimates = np.asarray(estimates, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if missing_mask is not None:
        mask = np.asarray(missing_mask, dtype=bool)
        bad = mask & ~np.isfinite(estimates)
        if bad.any():
            where = np.argwhere(bad)[:10].tolist()
            raise ContractError(f"missing estimates at indices {where}")
        estimates = estimates[mask]
        truth = truth[mask]
    if estimates.shape != truth.shape:
        raise ContractError(
            f"estimate/truth shapes differ: {estimates.shape} vs {truth.shape}")
    if estimates.size == 0:
        raise ContractError("empty missing index set")
    err = estimates - truth
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err ** 2)))
    return mae, rmse


@dataclass
class ImputationReport:
    """Per-missing-index estimates plus aggregates and provenance."""

    method: str
    sensors: np.ndarray    # [n] sensor index per missing entry
    steps: np.ndarray      # [n] timestep index per missing entry
    truth: np.ndarray      # [n] ground truth, original units
    estimates: np.ndarray  # [n] estimates, original units
    mae: float
    rmse: float
    config_hash: str = ""
    seed: int | None = None
    timings: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def n_missing(self) -> int:
        return int(self.truth.size)

    def recomputed_aggregates(self):
        return evaluate(self.estimates, self.truth)

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "n_missing": self.n_missing,
            "mae": self.mae,
            "rmse": self.rmse,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "extra": self.extra,
        }

    def write_json(self, path):
        Path(path).write_text(
            json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n")

    def write_csv(self, path, series=None):
        """Per-index rows; sensor ids and timestamps when a series is given."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sensor", "step", "timestamp", "truth", "estimate"])
            for s, t, tr, es in zip(self.sensors, self.steps,
                                    self.truth, self.estimates):
                sid = series.sensor_ids[s] if series is not None else str(s)
                stamp = series.timestamp(int(t)).isoformat() if series is not None \
                    else ""
                writer.writerow([sid, int(t), stamp, repr(float(tr)),
                                 repr(float(es))])


def _grids_from_windows(windows: WindowSet):
    """Recover series-level truth and missing grids from stride-1 windows."""
    origins = windows.origins
    if len(windows) == 0:
        raise ContractError("empty window set")
    if not np.array_equal(origins, np.arange(len(windows))):
        raise ContractError("windows must be stride-1 over the full series")
    n, s, w, f = windows.clean.shape
    t = n + w - 1
    truth = np.empty((s, t, f))
    missing = np.zeros((s, t), dtype=bool)
    truth[:, :w] = windows.clean[0]
    missing[:, :w] = windows.missing[0]
    truth[:, w:] = np.moveaxis(windows.clean[1:, :, w - 1], 0, 1)
    missing[:, w:] = windows.missing[1:, :, w - 1].T
    return truth, missing


def _forward_chunks(model, arrays: np.ndarray, want_latent=False) -> np.ndarray:
    """Inference forward over [n, s, w, f] in chunks, optionally threaded."""
    chunks = [arrays[lo:lo + CHUNK] for lo in range(0, arrays.shape[0], CHUNK)]

    def run(chunk):
        recon, latent = model.forward(chunk, training=False)
        return latent.values if want_latent else recon

    n_workers = workers()
    if n_workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    return np.concatenate(parts, axis=0)


def _combine_multiple(windows: WindowSet, recon: np.ndarray) -> np.ndarray:
    """Average each timestamp's reconstructions across covering windows."""
    n, s, w, f = recon.shape
    t = n + w - 1
    sums = np.zeros((s, t, f))
    counts = np.zeros(t)
    for j in range(w):
        sums[:, j:j + n] += np.moveaxis(recon[:, :, j], 0, 1)
        counts[j:j + n] += 1
    return sums / counts[None, :, None]


def _combine_single(windows: WindowSet, recon: np.ndarray) -> np.ndarray:
    """One designated reconstruction per timestamp: the last position of the
    window ending there; the first window's positions for the first steps."""
    n, s, w, f = recon.shape
    t = n + w - 1
    est = np.empty((s, t, f))
    est[:, :w - 1] = recon[0, :, :w - 1]
    est[:, w - 1:] = np.moveaxis(recon[:, :, w - 1], 0, 1)
    return est


def _report_from_grids(method, est_scaled, windows, scaler, clip_negative,
                       timings, extra=None) -> ImputationReport:
    truth_scaled, missing = _grids_from_windows(windows)
    est = inverse_scale(est_scaled, scaler)
    truth = inverse_scale(truth_scaled, scaler)
    if clip_negative:
        est = np.maximum(est, 0.0)
    est2d = est[..., 0]
    truth2d = truth[..., 0]
    mae, rmse = evaluate(est2d, truth2d, missing)
    idx = np.argwhere(missing)
    return ImputationReport(
        method=method, sensors=idx[:, 0], steps=idx[:, 1],
        truth=truth2d[missing], estimates=est2d[missing],
        mae=mae, rmse=rmse, timings=timings, extra=extra or {})


def multiple_impute(model, windows: WindowSet, scaler: ScalerParams,
                    clip_negative: bool = True) -> ImputationReport:
    """Average all w reconstructions of each timestamp; evaluate Eqs. over
    the missing set in original units."""
    start = time.perf_counter()
    recon = _forward_chunks(model, windows.corrupted)
    est = _combine_multiple(windows, recon)
    timings = {"reconstruct_s": time.perf_counter() - start}
    return _report_from_grids(f"{model.spec.variant}:multiple", est, windows,
                              scaler, clip_negative, timings)


def single_impute(model, windows: WindowSet, scaler: ScalerParams,
                  clip_negative: bool = True) -> ImputationReport:
    """Keep exactly one reconstruction per timestamp (causal last position)."""
    start = time.perf_counter()
    recon = _forward_chunks(model, windows.corrupted)
    est = _combine_single(windows, recon)
    timings = {"reconstruct_s": time.perf_counter() - start}
    return _report_from_grids(f"{model.spec.variant}:single", est, windows,
                              scaler, clip_negative, timings)


def encode_latents(model, windows: WindowSet) -> np.ndarray:
    """One latent per window (from the corrupted inputs the model sees)."""
    return _forward_chunks(model, windows.corrupted, want_latent=True)


def _knn_window_estimates(train_windows, test_windows, train_emb, test_emb,
                          k, counter=None) -> np.ndarray:
    """Impute windows from k nearest training windows, then combine."""
    n_train = len(train_windows)
    if k < 1 or k > n_train:
        raise ConfigurationError(f"k={k} outside [1, {n_train}]")
    neighbors = knn_indices(test_emb, train_emb, k, counter=counter)
    clean = train_windows.clean
    n, s, w, f = test_windows.clean.shape
    imputed = np.empty_like(test_windows.corrupted)
    for lo in range(0, n, CHUNK):
        hi = min(lo + CHUNK, n)
        neigh_mean = clean[neighbors[lo:hi]].mean(axis=1)
        chunk = test_windows.corrupted[lo:hi].copy()
        miss = test_windows.missing[lo:hi][..., None] & np.ones(f, dtype=bool)
        chunk[miss] = neigh_mean[miss]
        imputed[lo:hi] = chunk
    return _combine_multiple(test_windows, imputed)


def latent_knn_impute(train_latents, train_windows: WindowSet,
                      test_latents, test_windows: WindowSet, k: int,
                      scaler: ScalerParams, clip_negative: bool = True,
                      method: str = "latent_knn") -> ImputationReport:
    """KNN in latent space; k-neighbor positionwise means at missing entries,
    averaged across overlapping windows. The scan cost is instrumented."""
    counter: dict = {}
    start = time.perf_counter()
    est = _knn_window_estimates(train_windows, test_windows,
                                train_latents, test_latents, k, counter)
    timings = {"knn_scan_s": time.perf_counter() - start}
    extra = {"k": k, "latent_dim": int(np.asarray(train_latents).shape[1]),
             "comparisons": counter.get("comparisons", 0)}
    return _report_from_grids(f"{method}:k={k}", est, test_windows, scaler,
                              clip_negative, timings, extra)


def pca_knn_impute_series(pca_model, train_windows: WindowSet,
                          test_windows: WindowSet, k: int,
                          scaler: ScalerParams,
                          clip_negative: bool = True) -> ImputationReport:
    """KNN-PCA over whole window sets: mean-filled windows projected onto
    the principal components, then the same window-KNN combination."""
    from .baselines import pca_project, pca_training_matrix

    start = time.perf_counter()
    train_matrix = pca_training_matrix(train_windows)
    n, s, w, f = test_windows.clean.shape
    test_matrix = test_windows.corrupted.reshape(n, -1).copy()
    miss = np.broadcast_to(test_windows.missing[..., None],
                           test_windows.clean.shape).reshape(n, -1)
    test_matrix[miss] = np.broadcast_to(pca_model.mean, test_matrix.shape)[miss]
    train_emb = pca_project(pca_model, train_matrix)
    test_emb = pca_project(pca_model, test_matrix)
    est = _knn_window_estimates(train_windows, test_windows,
                                train_emb, test_emb, k)
    timings = {"knn_scan_s": time.perf_counter() - start}
    extra = {"k": k, "n_components": int(pca_model.components.shape[1])}
    return _report_from_grids(f"knn_pca:k={k}", est, test_windows, scaler,
                              clip_negative, timings, extra)


def report_from_flat_estimates(method, estimates, series, mask, scaler=None,
                               clip_negative: bool = True,
                               timings=None, extra=None) -> ImputationReport:
    """Wrap baseline estimates (aligned with np.argwhere(mask)) in a report.

    ``series`` must hold truth in original units; pass scaler=None when the
    estimates are already in original units.
    """
    idx = np.argwhere(mask.mask)
    truth = series.values[..., 0][mask.mask]
    est = np.asarray(estimates, dtype=np.float64)
    if scaler is not None:
        est = inverse_scale(est, scaler)
    if clip_negative:
        est = np.maximum(est, 0.0)
    mae, rmse = evaluate(est, truth)
    return ImputationReport(
        method=method, sensors=idx[:, 0], steps=idx[:, 1], truth=truth,
        estimates=est, mae=mae, rmse=rmse, timings=timings or {},
        extra=extra or {})
