"""Classical imputation references: weekly-hourly averages, DTW neighbor
values, and KNN over principal components.

All three operate on the same preprocessed series as the autoencoders and
produce estimates aligned with the row-major order of the missing-index set
(np.argwhere of the mask).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import container
from .data import MissingMask, SpatioTemporalSeries, WindowSet
from .errors import ConfigurationError, ContractError

TWO_WEEKS_STEPS = 2 * 7 * 288


# ---------------------------------------------------------------------------
# weekly-hourly average table


@dataclass
class WeeklyHourlyTable:
    """Per sensor, per (day-of-week, hour-of-day): mean flow and count."""

    means: np.ndarray          # [s, 7, 24]
    counts: np.ndarray         # [s, 7, 24]
    sensor_means: np.ndarray   # [s] overall observed training mean (fallback)

    def lookup(self, sensors, dows, hours) -> np.ndarray:
        """Cell means with zero-observation cells falling back per sensor."""
        est = self.means[sensors, dows, hours]
        empty = self.counts[sensors, dows, hours] == 0
        if np.any(empty):
            est = np.where(empty, self.sensor_means[sensors], est)
        return est

    def save(self, path):
        container.save_container(
            path, "wh_table", {},
            {"means": self.means, "counts": self.counts.astype(np.float64),
             "sensor_means": self.sensor_means})

    @classmethod
    def load(cls, path) -> "WeeklyHourlyTable":
        _, _, tensors, _ = container.load_container(path, "wh_table")
        return cls(tensors["means"], tensors["counts"].astype(np.int64),
                   tensors["sensor_means"])


def build_wh_table(series: SpatioTemporalSeries,
                   mask: MissingMask | None = None) -> WeeklyHourlyTable:
    """Accumulate means over non-missing training entries only."""
    s, t = series.n_sensors, series.n_steps
    values = series.values[..., 0]
    observed = np.ones((s, t), dtype=bool) if mask is None else ~mask.mask
    dow, hour = series.dow_hour(np.arange(t))
    sums = np.zeros((s, 7, 24))
    counts = np.zeros((s, 7, 24), dtype=np.int64)
    for i in range(s):
        obs = observed[i]
        np.add.at(sums[i], (dow[obs], hour[obs]), values[i, obs])
        np.add.at(counts[i], (dow[obs], hour[obs]), 1)
    with np.errstate(invalid="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
    sensor_obs = observed.sum(axis=1)
    sensor_means = np.where(
        sensor_obs > 0,
        (values * observed).sum(axis=1) / np.maximum(sensor_obs, 1),
        float((values * observed).sum() / max(observed.sum(), 1)))
    return WeeklyHourlyTable(means, counts, sensor_means)


def wh_average_impute(table: WeeklyHourlyTable, series: SpatioTemporalSeries,
                      mask: MissingMask) -> np.ndarray:
    """Estimates for each missing (sensor, t), in np.argwhere(mask) order."""
    idx = np.argwhere(mask.mask)
    sensors, ts = idx[:, 0], idx[:, 1]
    dow, hour = series.dow_hour(ts)
    return table.lookup(sensors, dow, hour)


# ---------------------------------------------------------------------------
# dynamic time warping


def dtw_distance(a, b, band: int | None = None) -> float:
    """Classic DTW alignment cost with absolute-difference local cost.

    Computed over anti-diagonals so the inner recurrence stays vectorized.
    ``band`` is an optional Sakoe-Chiba radius: |i - j| <= band.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    n, m = a.size, b.size
    if n == 0 or m == 0:
        raise ContractError("DTW requires non-empty series")
    if band is not None and band < abs(n - m):
        raise ConfigurationError(
            f"band {band} narrower than length difference {abs(n - m)}")
    brev = b[::-1]
    prev = np.full(n, np.inf)
    prev2 = np.full(n, np.inf)
    shifted = np.empty(n)
    for d in range(n + m - 1):
        i0, i1 = max(0, d - m + 1), min(n - 1, d)
        if band is not None:
            i0 = max(i0, -((band - d) // 2))   # ceil((d - band) / 2)
            i1 = min(i1, (d + band) // 2)
            if i0 > i1:
                prev2, prev = prev, np.full(n, np.inf)
                continue
        cur = np.full(n, np.inf)
        cost = np.abs(a[i0:i1 + 1] - brev[m - 1 - d + i0:m - d + i1])
        if d == 0:
            cur[0] = cost[0]
        else:
            shifted[0] = np.inf
            shifted[1:] = prev[:-1]           # D[i-1, j]
            best = np.minimum(prev, shifted)  # vs D[i, j-1]
            shifted[1:] = prev2[:-1]          # D[i-1, j-1]
            best = np.minimum(best, shifted)
            cur[i0:i1 + 1] = cost + best[i0:i1 + 1]
        prev2, prev = prev, cur
    result = prev[n - 1]
    if not np.isfinite(result):
        raise ConfigurationError("no alignment path inside the band")
    return float(result)


# ---------------------------------------------------------------------------
# DTW neighbor ranking and neighbor-value imputation


def rank_neighbors_by_dtw(train_series: SpatioTemporalSeries,
                          train_mask: MissingMask | None,
                          table: WeeklyHourlyTable,
                          slice_steps: int = TWO_WEEKS_STEPS,
                          band: int | None = None) -> np.ndarray:
    """Rank other sensors per sensor by DTW over training residuals.

    Residual = observed - weekly-hourly profile; missing entries sit at
    residual zero (profile fill). Distances run over the most recent
    ``slice_steps`` of the training period to bound cost.
    """
    s, t = train_series.n_sensors, train_series.n_steps
    lo = max(0, t - slice_steps)
    idx = np.arange(lo, t)
    dow, hour = train_series.dow_hour(idx)
    values = train_series.values[:, lo:, 0]
    residuals = np.empty_like(values)
    for i in range(s):
        profile = table.lookup(np.full(idx.size, i), dow, hour)
        residuals[i] = values[i] - profile
        if train_mask is not None:
            residuals[i][train_mask.mask[i, lo:]] = 0.0
    dist = np.zeros((s, s))
    for i in range(s):
        for j in range(i + 1, s):
            dist[i, j] = dist[j, i] = dtw_distance(residuals[i], residuals[j],
                                                   band=band)
    order = np.argsort(dist, axis=1, kind="stable")
    return np.stack([order[i][order[i] != i] for i in range(s)])


def neighbor_value_impute(series: SpatioTemporalSeries, mask: MissingMask,
                          ranking: np.ndarray, table: WeeklyHourlyTable):
    """Mean of the two closest observed sensors at each missing timestamp.

    Neighbors missing at t are skipped in ranking order; if no neighbor is
    observed the weekly-hourly estimate is used. Returns (estimates,
    fallback_flags) aligned with np.argwhere(mask).
    """
    if series.n_sensors < 3:
        raise ContractError("neighbor-value imputation needs >= 3 sensors")
    values = series.values[..., 0]
    observed = ~mask.mask
    idx = np.argwhere(mask.mask)
    estimates = np.empty(idx.shape[0])
    fallback = np.zeros(idx.shape[0], dtype=bool)
    wh = wh_average_impute(table, series, mask)
    pos = 0
    for sensor in range(series.n_sensors):
        ts = np.where(mask.mask[sensor])[0]
        if ts.size == 0:
            continue
        neigh = ranking[sensor]                      # [s-1] ranked
        avail = observed[neigh][:, ts]               # [s-1, nt]
        vals = values[neigh][:, ts]
        # rank of each neighbor where available, +inf otherwise
        order = np.where(avail, np.arange(neigh.size)[:, None], np.inf)
        top2 = np.argsort(order, axis=0, kind="stable")[:2]
        picked_ok = np.take_along_axis(avail, top2, axis=0)
        picked_vals = np.take_along_axis(vals, top2, axis=0)
        n_ok = picked_ok.sum(axis=0)
        total = (picked_vals * picked_ok).sum(axis=0)
        est = np.where(n_ok > 0, total / np.maximum(n_ok, 1),
                       wh[pos:pos + ts.size])
        estimates[pos:pos + ts.size] = est
        fallback[pos:pos + ts.size] = n_ok == 0
        pos += ts.size
    return estimates, fallback


# ---------------------------------------------------------------------------
# PCA + KNN


@dataclass
class PcaModel:
    """Centered PCA: mean vector, orthonormal components, variance ratios."""

    mean: np.ndarray                       # [p]
    components: np.ndarray                 # [p, k]
    explained_variance_ratio: np.ndarray   # [k]

    def save(self, path):
        container.save_container(
            path, "pca", {},
            {"mean": self.mean, "components": self.components,
             "evr": self.explained_variance_ratio})

    @classmethod
    def load(cls, path) -> "PcaModel":
        _, _, tensors, _ = container.load_container(path, "pca")
        return cls(tensors["mean"], tensors["components"], tensors["evr"])


def pca_fit(matrix: np.ndarray, n_components: int = 10) -> PcaModel:
    """Top right-singular vectors of the centered data matrix."""
    matrix = np.asarray(matrix, dtype=np.float64)
    n, p = matrix.shape
    if n_components < 1 or n_components > min(n, p):
        raise ConfigurationError(
            f"n_components {n_components} outside [1, min(n={n}, p={p})]")
    mean = matrix.mean(axis=0)
    _, svals, vt = np.linalg.svd(matrix - mean, full_matrices=False)
    total = float(np.sum(svals ** 2))
    evr = (svals[:n_components] ** 2 / total) if total > 0 \
        else np.zeros(n_components)
    return PcaModel(mean, vt[:n_components].T.copy(), evr)


def pca_project(model: PcaModel, vectors: np.ndarray) -> np.ndarray:
    return (np.asarray(vectors) - model.mean) @ model.components


def pca_reconstruct(model: PcaModel, scores: np.ndarray) -> np.ndarray:
    return scores @ model.components.T + model.mean


def knn_indices(queries: np.ndarray, refs: np.ndarray, k: int,
                chunk: int = 256, counter: dict | None = None) -> np.ndarray:
    """k nearest reference rows per query row, Euclidean, ties to the
    earlier reference index. Optionally counts scalar comparisons."""
    queries = np.asarray(queries, dtype=np.float64)
    refs = np.asarray(refs, dtype=np.float64)
    n, d = refs.shape
    if k < 1 or k > n:
        raise ConfigurationError(f"k={k} outside [1, n={n}]")
    ref_sq = np.einsum("nd,nd->n", refs, refs)
    out = np.empty((queries.shape[0], k), dtype=np.int64)
    for lo in range(0, queries.shape[0], chunk):
        q = queries[lo:lo + chunk]
        d2 = ref_sq - 2.0 * (q @ refs.T)
        d2 += np.einsum("qd,qd->q", q, q)[:, None]
        order = np.argsort(d2, axis=1, kind="stable")
        out[lo:lo + chunk] = order[:, :k]
        if counter is not None:
            counter["comparisons"] = counter.get("comparisons", 0) \
                + q.shape[0] * n * d
    return out


def knn_pca_impute(model: PcaModel, train_windows: WindowSet,
                   query_window: np.ndarray, query_missing: np.ndarray,
                   k: int = 20, train_scores: np.ndarray | None = None) -> np.ndarray:
    """Impute one window: mean-fill, project, retrieve k training windows,
    replace missing entries by their positionwise mean of clean values."""
    orig = np.asarray(query_window, dtype=np.float64)
    miss = np.asarray(query_missing, dtype=bool).ravel()
    if miss.all():
        raise ContractError("query window has no observed entries")
    n = len(train_windows)
    if k > n:
        raise ConfigurationError(f"k={k} exceeds {n} training windows")
    filled = orig.ravel().copy()
    filled[miss] = model.mean[miss]
    if train_scores is None:
        train_scores = pca_project(model, pca_training_matrix(train_windows))
    scores = pca_project(model, filled[None])
    neighbors = knn_indices(scores, train_scores, k)[0]
    clean = train_windows.clean.reshape(n, -1)
    imputed = orig.ravel().copy()
    imputed[miss] = clean[neighbors].mean(axis=0)[miss]
    return imputed.reshape(orig.shape)


def pca_training_matrix(train_windows: WindowSet) -> np.ndarray:
    """Flattened training windows with missing entries mean-filled.

    The fill value per position is the mean of that position over windows
    where it is observed (so the fit never peeks at masked ground truth).
    """
    n = len(train_windows)
    flat = train_windows.clean.reshape(n, -1).copy()
    miss = np.broadcast_to(train_windows.missing[..., None],
                           train_windows.clean.shape).reshape(n, -1)
    obs_count = np.maximum((~miss).sum(axis=0), 1)
    col_mean = np.where(miss, 0.0, flat).sum(axis=0) / obs_count
    flat[miss] = np.broadcast_to(col_mean, flat.shape)[miss]
    return flat
