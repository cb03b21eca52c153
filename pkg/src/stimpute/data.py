"""Ingestion, scaling, window generation, missing-block injection, synthesis.

The preprocessing protocol: chronological train/test split, min-max scaling
fitted on observed training values only, random non-overlapping missing
blocks (0.5 h to 4 h) injected per split, then stride-1 sliding windows with
masked entries zero-filled in the corrupted copy. The synthetic generator
stands in for real loop-detector data at desk scale.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime, timedelta

import numpy as np

from .errors import ConfigurationError, ContractError, ParseError

STEP_SECONDS_DEFAULT = 300
WINDOW_DEFAULT = 6
SECONDS_PER_WEEK = 7 * 86400


@dataclass
class SpatioTemporalSeries:
    """sensors x timesteps x features array with uniform time metadata."""

    values: np.ndarray
    start: datetime
    step_seconds: int = STEP_SECONDS_DEFAULT
    sensor_ids: list = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 2:
            self.values = self.values[..., None]
        if self.values.ndim != 3:
            raise ConfigurationError(
                f"series values must be [s, t, f], got shape {self.values.shape}")
        if self.step_seconds <= 0:
            raise ConfigurationError("step duration must be positive")
        if not self.sensor_ids:
            self.sensor_ids = [f"s{i}" for i in range(self.values.shape[0])]
        if len(self.sensor_ids) != self.values.shape[0]:
            raise ConfigurationError(
                f"{len(self.sensor_ids)} sensor ids for "
                f"{self.values.shape[0]} sensors")
        if len(set(self.sensor_ids)) != len(self.sensor_ids):
            raise ConfigurationError("sensor ids must be unique")

    @property
    def n_sensors(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1]

    @property
    def n_features(self) -> int:
        return self.values.shape[2]

    def timestamp(self, idx: int) -> datetime:
        return self.start + timedelta(seconds=int(idx) * self.step_seconds)

    def dow_hour(self, idx) -> tuple:
        """Vectorized (day-of-week, hour-of-day) for timestep indices."""
        idx = np.asarray(idx)
        offset = (self.start.weekday() * 86400 + self.start.hour * 3600
                  + self.start.minute * 60 + self.start.second)
        sow = (offset + idx * self.step_seconds) % SECONDS_PER_WEEK
        return sow // 86400, (sow % 86400) // 3600

    def with_values(self, values) -> "SpatioTemporalSeries":
        return SpatioTemporalSeries(values, self.start, self.step_seconds,
                                    list(self.sensor_ids))


@dataclass
class MissingMask:
    """Union of injected missing blocks over the sensors x timesteps grid."""

    mask: np.ndarray                      # bool [s, t], True = missing
    blocks: list                          # (sensor, start, length) triples
    seed: int | None = None

    @property
    def fraction(self) -> float:
        return float(self.mask.mean())

    def rebuild_from_blocks(self) -> np.ndarray:
        out = np.zeros_like(self.mask)
        for sensor, start, length in self.blocks:
            out[sensor, start:start + length] = True
        return out


@dataclass
class ScalerParams:
    """Global min/max of observed flow; maps min -> 0, max -> 1."""

    vmin: float
    vmax: float

    def __post_init__(self):
        if not self.vmax > self.vmin:
            raise ConfigurationError(
                f"scaler needs max > min, got [{self.vmin}, {self.vmax}]")


@dataclass
class WindowSet:
    """Stride-1 windows: clean targets, zero-filled corrupted copies, masks."""

    clean: np.ndarray       # [n, s, w, f]
    corrupted: np.ndarray   # [n, s, w, f]
    missing: np.ndarray     # bool [n, s, w]
    target_valid: np.ndarray  # bool [n, s, w]
    origins: np.ndarray     # [n] start index of each window
    window: int

    def __len__(self):
        return self.clean.shape[0]


def load_csv(path) -> SpatioTemporalSeries:
    """Parse a series CSV: header of sensor ids, rows of timestamp + flows."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file")
        if len(header) < 2:
            raise ParseError(f"{path}: header must list at least one sensor id")
        sensor_ids = header[1:]
        n_sensors = len(sensor_ids)
        timestamps = []
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != n_sensors + 1:
                raise ParseError(
                    f"{path}:{lineno}: expected {n_sensors + 1} cells, "
                    f"got {len(row)}")
            try:
                timestamps.append(datetime.fromisoformat(row[0]))
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad timestamp {row[0]!r}")
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric cell")
    if not rows:
        raise ParseError(f"{path}: no timesteps")
    step = STEP_SECONDS_DEFAULT
    if len(timestamps) > 1:
        step = (timestamps[1] - timestamps[0]).total_seconds()
        if step <= 0:
            raise ParseError(f"{path}: timestamps must increase")
        for i in range(1, len(timestamps)):
            delta = (timestamps[i] - timestamps[i - 1]).total_seconds()
            if delta != step:
                raise ParseError(
                    f"{path}: line {i + 2}: gap in timestamps "
                    f"({timestamps[i - 1].isoformat()} -> "
                    f"{timestamps[i].isoformat()}, expected step {step:.0f}s)")
    values = np.asarray(rows).T[..., None]
    return SpatioTemporalSeries(values, timestamps[0], int(step), sensor_ids)


def save_csv(path, series: SpatioTemporalSeries):
    if series.n_features != 1:
        raise ConfigurationError("CSV format holds a single feature per sensor")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", *series.sensor_ids])
        for t in range(series.n_steps):
            writer.writerow([series.timestamp(t).isoformat(),
                             *[repr(float(v)) for v in series.values[:, t, 0]]])


def save_mask_csv(path, mask: MissingMask, series: SpatioTemporalSeries):
    """Missing blocks as (sensor_id, start_timestamp, n_steps) rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sensor_id", "start_timestamp", "n_steps"])
        for sensor, start, length in mask.blocks:
            writer.writerow([series.sensor_ids[sensor],
                             series.timestamp(start).isoformat(), length])


def fit_scaler(series: SpatioTemporalSeries,
               mask: MissingMask | None = None) -> ScalerParams:
    """Min/max over observed (non-missing) values; training portion only."""
    values = series.values
    if mask is not None:
        observed = values[~mask.mask]
        if observed.size == 0:
            raise ConfigurationError("mask leaves no observed values")
        return ScalerParams(float(observed.min()), float(observed.max()))
    return ScalerParams(float(values.min()), float(values.max()))


def minmax_scale(series: SpatioTemporalSeries,
                 params: ScalerParams) -> SpatioTemporalSeries:
    scaled = (series.values - params.vmin) / (params.vmax - params.vmin)
    return series.with_values(scaled)


def inverse_scale(values: np.ndarray, params: ScalerParams) -> np.ndarray:
    return np.asarray(values) * (params.vmax - params.vmin) + params.vmin


def duration_range_steps(duration_range_hours, step_seconds) -> tuple:
    lo = int(round(duration_range_hours[0] * 3600 / step_seconds))
    hi = int(round(duration_range_hours[1] * 3600 / step_seconds))
    return max(lo, 1), max(hi, 1)


def generate_missing_blocks(series: SpatioTemporalSeries, fraction: float = 0.25,
                            duration_range_hours=(0.5, 4.0),
                            rng=None, seed: int | None = None) -> MissingMask:
    """Random non-overlapping missing blocks until the fraction is reached.

    Durations (in steps) and sensors are drawn uniformly; overlapping
    candidates are rejected. Deterministic under a fixed seed.
    """
    if fraction < 0 or fraction >= 1:
        raise ConfigurationError(f"missing fraction {fraction} outside [0, 1)")
    if rng is None:
        rng = np.random.default_rng(seed)
    s, t = series.n_sensors, series.n_steps
    mask = np.zeros((s, t), dtype=bool)
    blocks: list = []
    if fraction == 0:
        return MissingMask(mask, blocks, seed)
    lo, hi = duration_range_steps(duration_range_hours, series.step_seconds)
    if lo > hi or hi > t:
        raise ConfigurationError(
            f"block durations [{lo}, {hi}] steps do not fit a series of "
            f"{t} steps")
    target = fraction * s * t
    missing = 0
    rejects = 0
    while missing < target:
        dur = int(rng.integers(lo, hi + 1))
        sensor = int(rng.integers(0, s))
        start = int(rng.integers(0, t - dur + 1))
        if mask[sensor, start:start + dur].any():
            rejects += 1
            if rejects > 100_000:
                raise ConfigurationError(
                    f"cannot reach missing fraction {fraction}: series too "
                    f"short for non-overlapping blocks")
            continue
        mask[sensor, start:start + dur] = True
        blocks.append((sensor, start, dur))
        missing += dur
        rejects = 0
    return MissingMask(mask, blocks, seed)


def slide_windows(series: SpatioTemporalSeries, mask: MissingMask | None = None,
                  window: int = WINDOW_DEFAULT) -> WindowSet:
    """Stride-1 windows; corrupted copies zero-fill masked entries."""
    t = series.n_steps
    if t < window:
        raise ContractError(
            f"series has {t} steps, shorter than window {window}")
    values = series.values
    # sliding_window_view appends the window axis last: [s, n, f, w]
    clean = np.lib.stride_tricks.sliding_window_view(values, window, axis=1)
    clean = np.ascontiguousarray(clean.transpose(1, 0, 3, 2))
    n = clean.shape[0]
    if mask is not None:
        mwin = np.lib.stride_tricks.sliding_window_view(mask.mask, window, axis=1)
        missing = np.ascontiguousarray(mwin.transpose(1, 0, 2))
    else:
        missing = np.zeros((n, series.n_sensors, window), dtype=bool)
    corrupted = clean * ~missing[..., None]
    target_valid = np.ones_like(missing)
    return WindowSet(clean=clean, corrupted=corrupted, missing=missing,
                     target_valid=target_valid,
                     origins=np.arange(n), window=window)


def train_test_split(series: SpatioTemporalSeries, ratio: float,
                     window: int = WINDOW_DEFAULT):
    """Chronological prefix/suffix split at floor(t * ratio); no shuffling."""
    if not 0.0 < ratio < 1.0:
        raise ConfigurationError(f"split ratio {ratio} outside (0, 1)")
    t = series.n_steps
    split = int(t * ratio)
    if split < window or t - split < window:
        raise ContractError(
            f"split at {split}/{t} leaves less than one window ({window} steps) "
            f"on a side")
    train = SpatioTemporalSeries(series.values[:, :split].copy(), series.start,
                                 series.step_seconds, list(series.sensor_ids))
    test = SpatioTemporalSeries(series.values[:, split:].copy(),
                                series.timestamp(split), series.step_seconds,
                                list(series.sensor_ids))
    return train, test


@dataclass
class SynthSpec:
    """Parameters of the bundled synthetic traffic-flow generator."""

    sensors: int = 10
    days: int = 60
    seed: int = 0
    noise_level: float = 0.15
    event_rate: float = 1.0   # expected events per day
    step_seconds: int = STEP_SECONDS_DEFAULT

    def __post_init__(self):
        if self.sensors < 2:
            raise ConfigurationError("synthetic generator needs >= 2 sensors")
        if self.days < 7:
            raise ConfigurationError("synthetic generator needs >= 7 days")


def synth_generate(spec: SynthSpec) -> SpatioTemporalSeries:
    """Daily double-peak flow with weekday/weekend modulation, spatially
    correlated noise, and sporadic local events; values are non-negative."""
    rng = np.random.default_rng(spec.seed)
    per_day = 86400 // spec.step_seconds
    t = spec.days * per_day
    s = spec.sensors
    start = datetime(2016, 1, 4)  # a Monday

    idx = np.arange(t)
    hour = (idx % per_day) * (spec.step_seconds / 3600.0)
    dow = (idx // per_day) % 7
    weekend = dow >= 5

    profile = (30.0
               + 170.0 * np.exp(-0.5 * ((hour - 8.0) / 1.8) ** 2)
               + 150.0 * np.exp(-0.5 * ((hour - 17.5) / 2.2) ** 2))
    day_factor = np.where(weekend, 0.62, 1.0)

    base_scale = rng.uniform(0.85, 1.15, size=s)
    shift_steps = np.round((np.arange(s) - s / 2) * 0.03 * 3600
                           / spec.step_seconds).astype(int)
    flows = np.empty((s, t))
    for i in range(s):
        flows[i] = np.roll(profile * day_factor, shift_steps[i]) * base_scale[i]

    # spatially correlated noise: white field smoothed over neighboring
    # sensor indices, then over time
    white = rng.normal(size=(s, t))
    spatial = np.zeros_like(white)
    kernel = np.array([0.3, 0.4, 0.3])
    for offset, weight in zip((-1, 0, 1), kernel):
        shifted = np.roll(white, offset, axis=0)
        if offset == -1:
            shifted[-1] = white[-1]
        elif offset == 1:
            shifted[0] = white[0]
        spatial += weight * shifted
    window = 9  # ~45 min smoothing
    smooth_kernel = np.ones(window) / window
    noise = np.apply_along_axis(
        lambda row: np.convolve(row, smooth_kernel, mode="same"), 1, spatial)
    noise *= spec.noise_level * 150.0 / noise.std()
    flows += noise

    n_events = rng.poisson(spec.event_rate * spec.days)
    for _ in range(n_events):
        center = int(rng.integers(0, s))
        span = int(rng.integers(1, 3))
        lo_s, hi_s = max(0, center - span + 1), min(s, center + span)
        dur = int(rng.integers(6, 25))  # 0.5 h to 2 h
        t0 = int(rng.integers(0, t - dur + 1))
        factor = rng.uniform(0.4, 0.75) if rng.random() < 0.7 \
            else rng.uniform(1.25, 1.5)
        flows[lo_s:hi_s, t0:t0 + dur] *= factor

    np.maximum(flows, 0.0, out=flows)
    return SpatioTemporalSeries(flows[..., None], start, spec.step_seconds)
