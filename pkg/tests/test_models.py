"""Tests for model assembly, LSTM mechanics, and per-variant gradients."""

import numpy as np
import pytest

from stimpute import tensor as T
from stimpute.errors import ConfigurationError, ContractError, DimensionError
from stimpute.models import (
    CellParams,
    LstmState,
    Model,
    ModelSpec,
    bilstm_forward,
    build_model,
    lstm_cell_step,
)
from stimpute.training import mse_loss

from oracles import assert_grads_match, finite_difference_grads

TINY = dict(sensors=2, window=3, features=1, lstm_units=3,
            kernel_widths=(1, 2), filters_per_kernel=2, layer_sizes=(5, 3, 5))


def tiny_spec(variant):
    return ModelSpec(variant=variant, **TINY)


class TestModelSpec:
    def test_fc_default_layer_widths(self):
        spec = ModelSpec("FC_NN", sensors=10, window=6, features=1)
        model = build_model(spec, 0)
        widths = [60, 32, 16, 12, 16, 32, 60]
        for i in range(6):
            assert model.params[f"fc{i}.w"].shape == (widths[i], widths[i + 1])
        assert spec.latent_dim == 12

    def test_same_seed_same_parameters(self):
        spec = ModelSpec("BILSTM", sensors=4, window=6)
        a = build_model(spec, 7)
        b = build_model(spec, 7)
        assert a.params.keys() == b.params.keys()
        for k in a.params:
            np.testing.assert_array_equal(a.params[k], b.params[k])

    def test_cnn_default_conv_channels(self):
        spec = ModelSpec("CNN_BILSTM", sensors=10)
        assert spec.conv_channels == 4 * 8 == 32

    def test_variant_unit_defaults(self):
        assert ModelSpec("LSTM", sensors=3).lstm_units == 32
        assert ModelSpec("BILSTM", sensors=3).lstm_units == 16
        assert ModelSpec("CNN_BILSTM_RES", sensors=3).lstm_units == 16

    def test_invalid_specs_name_constraint(self):
        with pytest.raises(ConfigurationError, match="variant"):
            ModelSpec("GRU", sensors=3)
        with pytest.raises(ConfigurationError, match="kernel widths"):
            ModelSpec("CNN_BILSTM", sensors=3, window=3, kernel_widths=(1, 4))
        with pytest.raises(ConfigurationError, match="dropout"):
            ModelSpec("LSTM", sensors=3, dropout_rate=1.2)
        with pytest.raises(ConfigurationError, match="layer sizes"):
            ModelSpec("FC_NN", sensors=3, layer_sizes=())

    def test_param_count_is_function_of_spec(self):
        spec = tiny_spec("CNN_BILSTM_RES")
        counts = {build_model(spec, seed).param_count for seed in range(3)}
        assert len(counts) == 1


class TestLstmCell:
    def _zero_params(self, in_dim, units):
        return CellParams(T.Tensor(np.zeros((in_dim, 4 * units))),
                          T.Tensor(np.zeros((units, 4 * units))),
                          T.Tensor(np.zeros(4 * units)))

    def test_zero_params_zero_state_gives_zero_hidden(self):
        params = self._zero_params(4, 3)
        prev = LstmState(T.Tensor(np.zeros(3)), T.Tensor(np.zeros(3)))
        out = lstm_cell_step(T.Tensor(np.ones(4)), prev, params)
        np.testing.assert_array_equal(out.h.data, np.zeros(3))

    def test_saturated_forget_gate_preserves_cell(self):
        units = 3
        params = self._zero_params(2, units)
        b = np.zeros(4 * units)
        b[units:2 * units] = 50.0  # forget gate bias
        params = CellParams(params.w_x, params.w_h, T.Tensor(b))
        c_prev = np.array([0.3, -0.7, 1.1])
        prev = LstmState(T.Tensor(np.zeros(units)), T.Tensor(c_prev))
        out = lstm_cell_step(T.Tensor(np.ones(2)), prev, params)
        assert np.max(np.abs(out.c.data - c_prev)) < 1e-8

    def test_cell_gradients_match_finite_differences(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(2, 4))
        h0 = rng.normal(size=(2, 3))
        c0 = rng.normal(size=(2, 3))
        params = {"w_x": rng.normal(size=(4, 12)),
                  "w_h": rng.normal(size=(3, 12)),
                  "b": rng.normal(size=12)}

        def run(arrs):
            g = T.Graph()
            cp = CellParams(g.parameter("w_x", arrs["w_x"]),
                            g.parameter("w_h", arrs["w_h"]),
                            g.parameter("b", arrs["b"]))
            state = lstm_cell_step(T.Tensor(x), LstmState(T.Tensor(h0), T.Tensor(c0)), cp)
            loss = T.sum_all(T.add(state.h, state.c))
            return g, loss

        g, loss = run(params)
        analytic = g.backward(loss)
        numeric = finite_difference_grads(lambda a: run(a)[1].item(), params)
        assert_grads_match(analytic, numeric)

    def test_dimension_mismatch(self):
        params = self._zero_params(4, 3)
        prev = LstmState(T.Tensor(np.zeros(3)), T.Tensor(np.zeros(3)))
        with pytest.raises(DimensionError):
            lstm_cell_step(T.Tensor(np.ones(5)), prev, params)


def _random_cell(rng, in_dim, units):
    return CellParams(T.Tensor(rng.normal(size=(in_dim, 4 * units))),
                      T.Tensor(rng.normal(size=(units, 4 * units))),
                      T.Tensor(rng.normal(size=4 * units)))


class TestBilstmForward:
    def test_single_step_sequence(self):
        rng = np.random.default_rng(1)
        out, final = bilstm_forward(T.Tensor(rng.normal(size=(1, 5))),
                                    _random_cell(rng, 5, 4), _random_cell(rng, 5, 4))
        assert out.shape == (1, 8)
        assert final.shape == (16,)

    def test_zero_params_zero_outputs(self):
        rng = np.random.default_rng(2)
        zero = CellParams(T.Tensor(np.zeros((5, 16))), T.Tensor(np.zeros((4, 16))),
                          T.Tensor(np.zeros(16)))
        out, final = bilstm_forward(T.Tensor(rng.normal(size=(6, 5))), zero, zero)
        np.testing.assert_array_equal(out.data, np.zeros((6, 8)))
        np.testing.assert_array_equal(final.data, np.zeros(16))

    def test_reversal_swaps_direction_streams(self):
        rng = np.random.default_rng(3)
        a = _random_cell(rng, 5, 4)
        b = _random_cell(rng, 5, 4)
        seq = rng.normal(size=(6, 5))
        out, _ = bilstm_forward(T.Tensor(seq), a, b)
        out_rev, _ = bilstm_forward(T.Tensor(seq[::-1].copy()), b, a)
        # time-flipped, with the two direction slots exchanged
        swapped = np.concatenate([out_rev.data[::-1, 4:], out_rev.data[::-1, :4]],
                                 axis=1)
        np.testing.assert_allclose(out.data, swapped, atol=1e-12)

    def test_empty_sequence_rejected(self):
        rng = np.random.default_rng(4)
        cell = _random_cell(rng, 5, 4)
        with pytest.raises((ContractError, DimensionError)):
            bilstm_forward(T.Tensor(np.zeros((0, 5))), cell, cell)


class TestForward:
    @pytest.mark.parametrize("variant", ["FC_NN", "LSTM", "BILSTM",
                                         "CNN_BILSTM", "CNN_BILSTM_RES"])
    def test_reconstruction_shape_matches_input(self, variant):
        spec = ModelSpec(variant, sensors=9, window=6, features=1)
        model = build_model(spec, 11)
        window = np.random.default_rng(5).normal(size=(9, 6, 1))
        recon, latent = model.forward(window)
        assert recon.shape == window.shape
        assert latent.values.shape == (spec.latent_dim,)
        assert latent.layout == spec.latent_layout

    def test_batched_forward_matches_single(self):
        model = build_model(tiny_spec("CNN_BILSTM_RES"), 12)
        windows = np.random.default_rng(6).normal(size=(4, 2, 3, 1))
        recon, latents = model.forward(windows)
        for i in range(4):
            ri, li = model.forward(windows[i])
            np.testing.assert_allclose(recon[i], ri, atol=1e-12)
            np.testing.assert_allclose(latents.values[i], li.values, atol=1e-12)

    def test_latent_dims(self):
        assert ModelSpec("FC_NN", sensors=10).latent_dim == 12
        assert ModelSpec("LSTM", sensors=10).latent_dim == 64
        assert ModelSpec("BILSTM", sensors=10).latent_dim == 64
        assert ModelSpec("BILSTM", sensors=10).latent_layout == (
            "h_forward", "c_forward", "h_back", "c_back")

    def test_residual_path_carries_signal_when_bilstm_zeroed(self):
        spec = tiny_spec("CNN_BILSTM_RES")
        model = build_model(spec, 13)
        for name in list(model.params):
            if name.startswith(("enc.", "dec.")):
                model.params[name] = np.zeros_like(model.params[name])
        window = np.random.default_rng(7).normal(size=(2, 3, 1))
        recon, _ = model.forward(window)

        # conv block then dense, composed directly
        g = T.Graph()
        x = g.constant(window[None])
        parts = []
        for m in spec.kernel_widths:
            conv = T.conv_time(x, T.Tensor(model.params[f"conv{m}.k"]),
                               T.Tensor(model.params[f"conv{m}.b"]))
            parts.append(T.leaky_relu(conv, spec.leaky_alpha))
        seq = T.reshape(T.concat(parts, axis=3), (1, 3, spec.conv_channels))
        if "res.w" in model.params:
            seq = T.matmul(T.reshape(seq, (3, spec.conv_channels)),
                           T.Tensor(model.params["res.w"]))
            seq = T.reshape(seq, (1, 3, model.params["res.w"].shape[1]))
        flat = T.reshape(seq, (3, seq.shape[2]))
        dense = T.add(T.matmul(flat, T.Tensor(model.params["out.w"])),
                      T.Tensor(model.params["out.b"]))
        expected = dense.data.reshape(1, 3, 2, 1).transpose(0, 2, 1, 3)[0]
        np.testing.assert_allclose(recon, expected, atol=1e-12)

    def test_inference_is_deterministic(self):
        model = build_model(tiny_spec("BILSTM"), 14)
        window = np.random.default_rng(8).normal(size=(2, 3, 1))
        r1, _ = model.forward(window, training=False)
        r2, _ = model.forward(window, training=False)
        np.testing.assert_array_equal(r1, r2)

    def test_training_mode_needs_rng_for_dropout(self):
        model = build_model(tiny_spec("LSTM"), 15)
        window = np.random.default_rng(9).normal(size=(2, 3, 1))
        with pytest.raises(ContractError):
            model.forward(window, training=True)

    def test_wrong_window_shape(self):
        model = build_model(tiny_spec("LSTM"), 16)
        with pytest.raises(DimensionError):
            model.forward(np.zeros((3, 3, 1)))


class TestModelGradientOracle:
    @pytest.mark.parametrize("variant", ["FC_NN", "LSTM", "BILSTM",
                                         "CNN_BILSTM", "CNN_BILSTM_RES"])
    def test_variant_gradients_match_finite_differences(self, variant):
        spec = tiny_spec(variant)
        model = build_model(spec, 21)
        rng = np.random.default_rng(22)
        x = rng.normal(size=(2, 2, 3, 1))
        target = rng.normal(size=(2, 2, 3, 1))

        def run(arrs):
            m = Model(spec, arrs)
            g = T.Graph()
            recon, _ = m.apply(g, g.constant(x), training=False)
            return g, mse_loss(recon, T.Tensor(target))

        g, loss = run(model.params)
        analytic = g.backward(loss)
        numeric = finite_difference_grads(lambda a: run(a)[1].item(), model.params)
        assert_grads_match(analytic, numeric)

    def test_training_mode_gradients_with_replayed_dropout(self):
        spec = tiny_spec("BILSTM")
        model = build_model(spec, 23)
        rng = np.random.default_rng(24)
        x = rng.normal(size=(2, 2, 3, 1))
        target = rng.normal(size=(2, 2, 3, 1))

        def run(arrs):
            m = Model(spec, arrs)
            g = T.Graph()
            recon, _ = m.apply(g, g.constant(x), training=True,
                               rng=np.random.default_rng(77))
            return g, mse_loss(recon, T.Tensor(target))

        g, loss = run(model.params)
        analytic = g.backward(loss)
        numeric = finite_difference_grads(lambda a: run(a)[1].item(), model.params)
        assert_grads_match(analytic, numeric)


class TestCheckpoint:
    def test_save_load_round_trip(self, tmp_path):
        model = build_model(tiny_spec("CNN_BILSTM_RES"), 31)
        path = tmp_path / "model.ckpt"
        model.save(path)
        loaded = Model.load(path)
        assert loaded.spec == model.spec
        assert loaded.seed == 31
        window = np.random.default_rng(10).normal(size=(2, 3, 1))
        np.testing.assert_array_equal(model.forward(window)[0],
                                      loaded.forward(window)[0])

    def test_serialization_is_byte_stable(self, tmp_path):
        model = build_model(tiny_spec("LSTM"), 32)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        model.save(p1)
        model.save(p2)
        assert p1.read_bytes() == p2.read_bytes()
