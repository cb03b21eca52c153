"""Tests for ingestion, scaling, masking, windowing, and the synthesizer."""

from datetime import datetime

import numpy as np
import pytest

from stimpute.data import (
    MissingMask,
    ScalerParams,
    SpatioTemporalSeries,
    SynthSpec,
    duration_range_steps,
    fit_scaler,
    generate_missing_blocks,
    inverse_scale,
    load_csv,
    minmax_scale,
    save_csv,
    save_mask_csv,
    slide_windows,
    synth_generate,
    train_test_split,
)
from stimpute.errors import ConfigurationError, ContractError, ParseError


def small_series(t=20, s=3, seed=0):
    values = np.random.default_rng(seed).uniform(10, 200, size=(s, t, 1))
    return SpatioTemporalSeries(values, datetime(2016, 1, 4))


class TestLoadCsv:
    def test_well_formed_file(self, tmp_path):
        path = tmp_path / "flows.csv"
        path.write_text(
            "timestamp,a,b\n"
            "2016-01-04T00:00:00,1.0,2.0\n"
            "2016-01-04T00:05:00,3.0,4.0\n"
            "2016-01-04T00:10:00,5.0,6.0\n"
            "2016-01-04T00:15:00,7.0,8.0\n")
        series = load_csv(path)
        assert series.values.shape == (2, 4, 1)
        assert series.sensor_ids == ["a", "b"]
        assert series.step_seconds == 300
        np.testing.assert_array_equal(series.values[:, 0, 0], [1.0, 2.0])

    def test_gap_in_timestamps(self, tmp_path):
        path = tmp_path / "gap.csv"
        path.write_text(
            "timestamp,a\n"
            "2016-01-04T00:00:00,1.0\n"
            "2016-01-04T00:05:00,2.0\n"
            "2016-01-04T00:20:00,3.0\n")
        with pytest.raises(ParseError, match="gap"):
            load_csv(path)

    def test_no_timesteps(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("timestamp,a\n")
        with pytest.raises(ParseError, match="no timesteps"):
            load_csv(path)

    def test_ragged_row_names_line(self, tmp_path):
        path = tmp_path / "ragged.csv"
        path.write_text(
            "timestamp,a,b\n"
            "2016-01-04T00:00:00,1.0,2.0\n"
            "2016-01-04T00:05:00,3.0\n")
        with pytest.raises(ParseError, match=":3"):
            load_csv(path)

    def test_non_numeric_cell(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text(
            "timestamp,a\n"
            "2016-01-04T00:00:00,oops\n")
        with pytest.raises(ParseError, match="non-numeric"):
            load_csv(path)

    def test_round_trip_through_save(self, tmp_path):
        series = small_series()
        path = tmp_path / "rt.csv"
        save_csv(path, series)
        loaded = load_csv(path)
        np.testing.assert_array_equal(loaded.values, series.values)
        assert loaded.start == series.start


class TestScaling:
    def test_quarter_point(self):
        series = SpatioTemporalSeries(np.array([[[50.0]]]), datetime(2016, 1, 4))
        scaled = minmax_scale(series, ScalerParams(0.0, 200.0))
        assert scaled.values[0, 0, 0] == 0.25

    def test_round_trip_exact(self):
        series = small_series()
        params = fit_scaler(series)
        restored = inverse_scale(minmax_scale(series, params).values, params)
        assert np.max(np.abs(restored - series.values)) < 1e-12

    def test_degenerate_scaler(self):
        with pytest.raises(ConfigurationError):
            ScalerParams(5.0, 5.0)

    def test_extrapolation_above_training_max(self):
        scaled = (300.0 - 0.0) / (200.0 - 0.0)
        series = SpatioTemporalSeries(np.array([[[300.0]]]), datetime(2016, 1, 4))
        out = minmax_scale(series, ScalerParams(0.0, 200.0))
        assert out.values[0, 0, 0] == scaled > 1.0

    def test_scaler_ignores_masked_entries(self):
        series = small_series(t=10, s=2)
        mask = np.zeros((2, 10), dtype=bool)
        mask[0, :3] = True
        series.values[0, :3, 0] = 1e6  # hidden behind the mask
        params = fit_scaler(series, MissingMask(mask, [(0, 0, 3)]))
        assert params.vmax < 1e6


class TestMissingBlocks:
    def test_zero_fraction_empty_mask(self):
        mask = generate_missing_blocks(small_series(), fraction=0.0, seed=1)
        assert not mask.mask.any()
        assert mask.blocks == []

    def test_hour_to_step_conversion(self):
        assert duration_range_steps((0.5, 4.0), 300) == (6, 48)

    def test_quarter_fraction_on_default_scale(self):
        values = np.zeros((10, 17280, 1))
        series = SpatioTemporalSeries(values, datetime(2016, 1, 4))
        for seed in range(10):
            mask = generate_missing_blocks(series, fraction=0.25, seed=seed)
            assert 0.23 <= mask.fraction <= 0.27
            lengths = [b[2] for b in mask.blocks]
            assert min(lengths) >= 6 and max(lengths) <= 48

    def test_mask_equals_union_of_blocks(self):
        series = small_series(t=500)
        mask = generate_missing_blocks(series, fraction=0.2,
                                       duration_range_hours=(0.25, 1.0), seed=3)
        np.testing.assert_array_equal(mask.mask, mask.rebuild_from_blocks())

    def test_blocks_do_not_overlap(self):
        series = small_series(t=500)
        mask = generate_missing_blocks(series, fraction=0.3,
                                       duration_range_hours=(0.25, 1.0), seed=4)
        total = sum(b[2] for b in mask.blocks)
        assert total == int(mask.mask.sum())

    def test_deterministic_under_seed(self):
        series = small_series(t=300)
        a = generate_missing_blocks(series, 0.2, (0.25, 0.5), seed=5)
        b = generate_missing_blocks(series, 0.2, (0.25, 0.5), seed=5)
        assert a.blocks == b.blocks

    def test_unreachable_duration_range(self):
        series = small_series(t=10)
        with pytest.raises(ConfigurationError):
            generate_missing_blocks(series, 0.25, (0.5, 4.0), seed=6)


class TestWindows:
    def test_window_count_identity(self):
        ws = slide_windows(small_series(t=10), window=6)
        assert len(ws) == 5

    def test_coverage_counts(self):
        t, w = 20, 6
        ws = slide_windows(small_series(t=t), window=w)
        counts = np.zeros(t, dtype=int)
        for origin in ws.origins:
            counts[origin:origin + w] += 1
        expected = [min(w, i + 1, t - i) for i in range(t)]
        np.testing.assert_array_equal(counts, expected)
        assert counts[0] == 1
        assert counts[10] == w

    def test_corrupted_zero_fills_masked(self):
        series = small_series(t=12, s=2)
        mask = np.zeros((2, 12), dtype=bool)
        mask[1, 4:8] = True
        ws = slide_windows(series, MissingMask(mask, [(1, 4, 4)]), window=6)
        assert (ws.corrupted[ws.missing] == 0).all()
        untouched = ws.corrupted[~ws.missing]
        np.testing.assert_array_equal(untouched, ws.clean[~ws.missing][..., None]
                                      .reshape(untouched.shape))

    def test_too_short_series(self):
        with pytest.raises(ContractError):
            slide_windows(small_series(t=5), window=6)

    def test_windows_are_deterministic_bytes(self):
        series = small_series(t=50)
        mask = generate_missing_blocks(series, 0.2, (0.25, 0.5), seed=7)
        a = slide_windows(series, mask)
        b = slide_windows(series, mask)
        assert a.clean.tobytes() == b.clean.tobytes()
        assert a.corrupted.tobytes() == b.corrupted.tobytes()


class TestSplit:
    def test_two_thirds_split(self):
        # six 30-day months at 5-minute resolution
        t = 6 * 30 * 288
        series = SpatioTemporalSeries(np.zeros((2, t, 1)), datetime(2016, 1, 4))
        train, test = train_test_split(series, 2 / 3)
        assert train.n_steps == 4 * 30 * 288
        assert test.n_steps == 2 * 30 * 288
        assert test.start == series.timestamp(train.n_steps)

    def test_split_index_is_floor(self):
        series = small_series(t=10)
        train, test = train_test_split(series, 0.67, window=3)
        assert train.n_steps == 6
        assert test.n_steps == 4

    def test_degenerate_split_rejected(self):
        series = small_series(t=10)
        with pytest.raises(ContractError):
            train_test_split(series, 0.9, window=6)


class TestSynth:
    def test_same_seed_identical(self):
        spec = SynthSpec(sensors=4, days=7, seed=9)
        a = synth_generate(spec)
        b = synth_generate(spec)
        np.testing.assert_array_equal(a.values, b.values)

    def test_weekday_flow_exceeds_weekend(self):
        series = synth_generate(SynthSpec(sensors=4, days=14, seed=10))
        dow, _ = series.dow_hour(np.arange(series.n_steps))
        weekday = series.values[:, dow < 5].mean()
        weekend = series.values[:, dow >= 5].mean()
        assert weekday > weekend

    def test_adjacent_sensors_more_correlated(self):
        series = synth_generate(SynthSpec(sensors=8, days=14, seed=11))
        flat = series.values[..., 0]
        corr = np.corrcoef(flat)
        adjacent = [corr[i, i + 1] for i in range(7)]
        distant = [corr[i, j] for i in range(8) for j in range(i + 3, 8)]
        assert np.mean(adjacent) > np.mean(distant)

    def test_non_negative(self):
        series = synth_generate(SynthSpec(sensors=3, days=7, seed=12,
                                          noise_level=0.5))
        assert (series.values >= 0).all()

    def test_spec_validation(self):
        with pytest.raises(ConfigurationError):
            SynthSpec(sensors=1)
        with pytest.raises(ConfigurationError):
            SynthSpec(days=3)


class TestMaskExport:
    def test_block_csv(self, tmp_path):
        series = small_series(t=100)
        mask = generate_missing_blocks(series, 0.1, (0.25, 0.5), seed=13)
        path = tmp_path / "mask.csv"
        save_mask_csv(path, mask, series)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "sensor_id,start_timestamp,n_steps"
        assert len(lines) == len(mask.blocks) + 1
