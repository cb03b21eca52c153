"""The five denoising-autoencoder variants, assembled from the autodiff primitives.

Variants: a fully-connected autoencoder, an LSTM encoder-decoder, a
bidirectional-LSTM encoder-decoder, and a convolutional BiLSTM with and
without a residual shortcut from the convolution block to the final dense
layer. All variants reconstruct a window of the same shape they receive and
expose a fixed-size latent vector.

LSTM cells use the standard gate formulation (input/forget/output gates via
sigmoid, tanh candidate), with gates fused into one matrix per cell in the
order [input, forget, candidate, output]. Dropout applies to LSTM layer
inputs only. Decoders are initialized with the encoder's final states and
consume the encoder's per-step output sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import container
from . import tensor as T
from .errors import ConfigurationError, ContractError, DimensionError
from .tensor import Tensor

VARIANTS = ("FC_NN", "LSTM", "BILSTM", "CNN_BILSTM", "CNN_BILSTM_RES")

# §-defaults used when a field is not set explicitly
DEFAULT_FC_SIZES = (32, 16, 12, 16, 32)
DEFAULT_KERNEL_WIDTHS = (1, 2, 3, 4)
DEFAULT_FILTERS = 8
DEFAULT_UNITS = {"LSTM": 32, "BILSTM": 16, "CNN_BILSTM": 16, "CNN_BILSTM_RES": 16}
DEFAULT_DROPOUT = 0.2


@dataclass(frozen=True)
class ModelSpec:
    """Declarative description of one autoencoder variant."""

    variant: str
    sensors: int
    window: int = 6
    features: int = 1
    layer_sizes: tuple = DEFAULT_FC_SIZES
    kernel_widths: tuple = DEFAULT_KERNEL_WIDTHS
    filters_per_kernel: int = DEFAULT_FILTERS
    lstm_units: int = 0  # 0 = variant default
    dropout_rate: float = DEFAULT_DROPOUT
    leaky_alpha: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(self.layer_sizes))
        object.__setattr__(self, "kernel_widths", tuple(self.kernel_widths))
        if self.lstm_units == 0 and self.variant in DEFAULT_UNITS:
            object.__setattr__(self, "lstm_units", DEFAULT_UNITS[self.variant])
        self.validate()

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(
                f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.sensors < 1 or self.window < 1 or self.features < 1:
            raise ConfigurationError(
                f"input dims must be positive, got (s={self.sensors}, "
                f"w={self.window}, f={self.features})")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError(
                f"dropout rate {self.dropout_rate} outside [0, 1)")
        if self.variant == "FC_NN":
            if not self.layer_sizes or any(n < 1 for n in self.layer_sizes):
                raise ConfigurationError(
                    f"FC_NN layer sizes must be positive, got {self.layer_sizes}")
        elif self.lstm_units < 1:
            raise ConfigurationError(
                f"lstm_units must be positive, got {self.lstm_units}")
        if self.variant in ("CNN_BILSTM", "CNN_BILSTM_RES"):
            if not self.kernel_widths:
                raise ConfigurationError("at least one kernel width required")
            bad = [m for m in self.kernel_widths if m < 1 or m > self.window]
            if bad:
                raise ConfigurationError(
                    f"kernel widths {bad} outside [1, window={self.window}]")
            if self.filters_per_kernel < 1:
                raise ConfigurationError(
                    f"filters_per_kernel must be positive, "
                    f"got {self.filters_per_kernel}")

    @property
    def input_dim(self) -> int:
        return self.sensors * self.window * self.features

    @property
    def step_dim(self) -> int:
        return self.sensors * self.features

    @property
    def conv_channels(self) -> int:
        return len(self.kernel_widths) * self.filters_per_kernel

    @property
    def latent_layout(self) -> tuple:
        if self.variant == "FC_NN":
            return ("bottleneck",)
        if self.variant == "LSTM":
            return ("h", "c")
        return ("h_forward", "c_forward", "h_back", "c_back")

    @property
    def latent_dim(self) -> int:
        if self.variant == "FC_NN":
            return self.layer_sizes[(len(self.layer_sizes) - 1) // 2]
        return len(self.latent_layout) * self.lstm_units

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "sensors": self.sensors,
            "window": self.window,
            "features": self.features,
            "layer_sizes": list(self.layer_sizes),
            "kernel_widths": list(self.kernel_widths),
            "filters_per_kernel": self.filters_per_kernel,
            "lstm_units": self.lstm_units,
            "dropout_rate": self.dropout_rate,
            "leaky_alpha": self.leaky_alpha,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)


@dataclass
class LstmState:
    """Hidden and cell state of one LSTM direction."""

    h: Tensor
    c: Tensor

    def __post_init__(self):
        if self.h.shape != self.c.shape:
            raise DimensionError(
                f"h shape {self.h.shape} != c shape {self.c.shape}")


@dataclass
class CellParams:
    """Fused gate parameters of one LSTM cell: [input|forget|candidate|output]."""

    w_x: Tensor  # [in_dim, 4*units]
    w_h: Tensor  # [units, 4*units]
    b: Tensor    # [4*units]


@dataclass
class LatentVector:
    """Fixed-size window representation plus the names of its parts."""

    values: np.ndarray
    layout: tuple


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def lstm_cell_step(x_t: Tensor, prev: LstmState, params: CellParams) -> LstmState:
    """One LSTM update: gates from x_t and prev.h, new cell and hidden state.

    x_t may be [in_dim] or batched [B, in_dim]; states follow suit.
    """
    single = x_t.ndim == 1
    if single:
        x_t = T.reshape(x_t, (1, x_t.shape[0]))
        prev = LstmState(T.reshape(prev.h, (1, prev.h.shape[0])),
                         T.reshape(prev.c, (1, prev.c.shape[0])))
    units = prev.h.shape[1]
    if params.w_x.shape != (x_t.shape[1], 4 * units):
        raise DimensionError(
            f"w_x shape {params.w_x.shape} incompatible with input "
            f"{x_t.shape} and {units} units")
    gates = T.add(T.add(T.matmul(x_t, params.w_x), T.matmul(prev.h, params.w_h)),
                  params.b)
    i = T.sigmoid(T.slice_axis(gates, 1, 0, units))
    f = T.sigmoid(T.slice_axis(gates, 1, units, 2 * units))
    g = T.tanh(T.slice_axis(gates, 1, 2 * units, 3 * units))
    o = T.sigmoid(T.slice_axis(gates, 1, 3 * units, 4 * units))
    c = T.add(T.multiply(f, prev.c), T.multiply(i, g))
    h = T.multiply(o, T.tanh(c))
    if single:
        h = T.reshape(h, (units,))
        c = T.reshape(c, (units,))
    return LstmState(h, c)


def _zero_state(graph, batch: int, units: int, dtype) -> LstmState:
    zeros = np.zeros((batch, units), dtype=dtype)
    make = graph.constant if graph is not None else Tensor
    return LstmState(make(zeros.copy()), make(zeros.copy()))


def _unroll(seq: Tensor, params: CellParams, init: LstmState, reverse: bool):
    """Run a cell over [B, w, D]; returns per-step hidden list and final state."""
    B, w, D = seq.shape
    steps = range(w - 1, -1, -1) if reverse else range(w)
    state = init
    outputs = [None] * w
    for t in steps:
        x_t = T.reshape(T.slice_axis(seq, 1, t, t + 1), (B, D))
        state = lstm_cell_step(x_t, state, params)
        outputs[t] = state.h
    return outputs, state


def _seq_tensor(outputs: list) -> Tensor:
    B, u = outputs[0].shape
    return T.concat([T.reshape(h, (B, 1, u)) for h in outputs], axis=1)


def bilstm_forward(seq: Tensor, fw: CellParams, bw: CellParams,
                   init_fw: LstmState | None = None,
                   init_bw: LstmState | None = None):
    """Bidirectional pass over [w, F] or [B, w, F].

    Returns (outputs, final) where outputs concatenates both directions'
    per-step hidden states and final is the four-part state concatenation
    [h_forward, c_forward, h_back, c_back] taken at each direction's last
    processed step.
    """
    single = seq.ndim == 2
    if single:
        seq = T.reshape(seq, (1,) + seq.shape)
    if seq.ndim != 3:
        raise DimensionError(f"sequence must be [w,F] or [B,w,F], got {seq.shape}")
    if seq.shape[1] < 1:
        raise ContractError("empty sequence")
    B = seq.shape[0]
    units = fw.w_h.shape[0]
    graph = seq.graph if seq.graph is not None else fw.w_x.graph
    if init_fw is None:
        init_fw = _zero_state(graph, B, units, seq.dtype)
    if init_bw is None:
        init_bw = _zero_state(graph, B, units, seq.dtype)
    out_fw, final_fw = _unroll(seq, fw, init_fw, reverse=False)
    out_bw, final_bw = _unroll(seq, bw, init_bw, reverse=True)
    outputs = _seq_tensor([T.concat([f, b], axis=1)
                           for f, b in zip(out_fw, out_bw)])
    final = T.concat([final_fw.h, final_fw.c, final_bw.h, final_bw.c], axis=1)
    if single:
        outputs = T.reshape(outputs, outputs.shape[1:])
        final = T.reshape(final, (final.shape[1],))
    return outputs, final


# ---------------------------------------------------------------------------
# parameter initialization (construction order is fixed and seed-determined)


def _init_cell(rng, prefix: str, in_dim: int, units: int, out: dict):
    out[f"{prefix}.w_x"] = _glorot(rng, in_dim, 4 * units, (in_dim, 4 * units))
    out[f"{prefix}.w_h"] = _glorot(rng, units, 4 * units, (units, 4 * units))
    out[f"{prefix}.b"] = np.zeros(4 * units)


def init_params(spec: ModelSpec, rng: np.random.Generator) -> dict:
    p: dict[str, np.ndarray] = {}
    if spec.variant == "FC_NN":
        dims = [spec.input_dim, *spec.layer_sizes, spec.input_dim]
        for i in range(len(dims) - 1):
            p[f"fc{i}.w"] = _glorot(rng, dims[i], dims[i + 1], (dims[i], dims[i + 1]))
            p[f"fc{i}.b"] = np.zeros(dims[i + 1])
        return p
    u = spec.lstm_units
    if spec.variant in ("CNN_BILSTM", "CNN_BILSTM_RES"):
        s, c, f = spec.sensors, spec.features, spec.filters_per_kernel
        for m in spec.kernel_widths:
            fan_in, fan_out = s * m * c, s * m * f
            p[f"conv{m}.k"] = _glorot(rng, fan_in, fan_out, (s, m, c, f))
            p[f"conv{m}.b"] = np.zeros(f)
        enc_in = spec.conv_channels
    else:
        enc_in = spec.step_dim
    if spec.variant == "LSTM":
        _init_cell(rng, "enc", enc_in, u, p)
        _init_cell(rng, "dec", u, u, p)
        dec_out = u
    else:
        _init_cell(rng, "enc.fw", enc_in, u, p)
        _init_cell(rng, "enc.bw", enc_in, u, p)
        _init_cell(rng, "dec.fw", 2 * u, u, p)
        _init_cell(rng, "dec.bw", 2 * u, u, p)
        dec_out = 2 * u
    if spec.variant == "CNN_BILSTM_RES" and spec.conv_channels != dec_out:
        p["res.w"] = _glorot(rng, spec.conv_channels, dec_out,
                             (spec.conv_channels, dec_out))
    p["out.w"] = _glorot(rng, dec_out, spec.step_dim, (dec_out, spec.step_dim))
    p["out.b"] = np.zeros(spec.step_dim)
    return p


# ---------------------------------------------------------------------------
# forward wiring


def _cell(params: dict, prefix: str) -> CellParams:
    return CellParams(params[f"{prefix}.w_x"], params[f"{prefix}.w_h"],
                      params[f"{prefix}.b"])


def _window_to_seq(x: Tensor) -> Tensor:
    B, s, w, f = x.shape
    return T.reshape(T.transpose(x, (0, 2, 1, 3)), (B, w, s * f))


def _seq_to_window(y: Tensor, s: int, f: int) -> Tensor:
    B, w, _ = y.shape
    return T.transpose(T.reshape(y, (B, w, s, f)), (0, 2, 1, 3))


def _step_dense(seq: Tensor, w_mat: Tensor, b: Tensor) -> Tensor:
    B, w, d = seq.shape
    flat = T.add(T.matmul(T.reshape(seq, (B * w, d)), w_mat), b)
    return T.reshape(flat, (B, w, w_mat.shape[1]))


def _drop(x, spec, training, rng):
    return T.dropout(x, spec.dropout_rate, training, rng)


def _forward_fc(spec, pt, x, training, rng):
    B = x.shape[0]
    h = T.reshape(x, (B, spec.input_dim))
    latent = None
    bottleneck = (len(spec.layer_sizes) - 1) // 2
    for i in range(len(spec.layer_sizes)):
        h = T.leaky_relu(T.add(T.matmul(h, pt[f"fc{i}.w"]), pt[f"fc{i}.b"]),
                         spec.leaky_alpha)
        if i == bottleneck:
            latent = h
    last = len(spec.layer_sizes)
    out = T.add(T.matmul(h, pt[f"fc{last}.w"]), pt[f"fc{last}.b"])
    return T.reshape(out, x.shape), latent


def _forward_lstm(spec, pt, x, training, rng):
    B = x.shape[0]
    u = spec.lstm_units
    seq = _drop(_window_to_seq(x), spec, training, rng)
    enc_out, enc_final = _unroll(seq, _cell(pt, "enc"),
                                 _zero_state(seq.graph, B, u, seq.dtype),
                                 reverse=False)
    latent = T.concat([enc_final.h, enc_final.c], axis=1)
    dec_in = _drop(_seq_tensor(enc_out), spec, training, rng)
    dec_out, _ = _unroll(dec_in, _cell(pt, "dec"), enc_final, reverse=False)
    y = _step_dense(_seq_tensor(dec_out), pt["out.w"], pt["out.b"])
    return _seq_to_window(y, spec.sensors, spec.features), latent


def _bilstm_block(spec, pt, seq, training, rng):
    """Encoder BiLSTM -> latent; decoder BiLSTM seeded with encoder states."""
    B = seq.shape[0]
    u = spec.lstm_units
    enc_in = _drop(seq, spec, training, rng)
    enc_fw, ffw = _unroll(enc_in, _cell(pt, "enc.fw"),
                          _zero_state(enc_in.graph, B, u, enc_in.dtype), False)
    enc_bw, fbw = _unroll(enc_in, _cell(pt, "enc.bw"),
                          _zero_state(enc_in.graph, B, u, enc_in.dtype), True)
    latent = T.concat([ffw.h, ffw.c, fbw.h, fbw.c], axis=1)
    enc_seq = _seq_tensor([T.concat([f, b], axis=1)
                           for f, b in zip(enc_fw, enc_bw)])
    dec_in = _drop(enc_seq, spec, training, rng)
    dec_fw, _ = _unroll(dec_in, _cell(pt, "dec.fw"), ffw, False)
    dec_bw, _ = _unroll(dec_in, _cell(pt, "dec.bw"), fbw, True)
    dec_seq = _seq_tensor([T.concat([f, b], axis=1)
                           for f, b in zip(dec_fw, dec_bw)])
    return dec_seq, latent


def _forward_bilstm(spec, pt, x, training, rng):
    dec_seq, latent = _bilstm_block(spec, pt, _window_to_seq(x), training, rng)
    y = _step_dense(dec_seq, pt["out.w"], pt["out.b"])
    return _seq_to_window(y, spec.sensors, spec.features), latent


def _conv_block(spec, pt, x):
    parts = []
    for m in spec.kernel_widths:
        conv = T.conv_time(x, pt[f"conv{m}.k"], pt[f"conv{m}.b"])
        parts.append(T.leaky_relu(conv, spec.leaky_alpha))
    stacked = T.concat(parts, axis=3)  # [B, 1, w, F]
    B, _, w, F = stacked.shape
    return T.reshape(stacked, (B, w, F))


def _forward_cnn_bilstm(spec, pt, x, training, rng, residual: bool):
    conv_seq = _conv_block(spec, pt, x)
    dec_seq, latent = _bilstm_block(spec, pt, conv_seq, training, rng)
    if residual:
        res = conv_seq
        if "res.w" in pt:
            res = _step_dense(res, pt["res.w"],
                              Tensor(np.zeros(pt["res.w"].shape[1],
                                              dtype=res.dtype)))
        dec_seq = T.add(dec_seq, res)
    y = _step_dense(dec_seq, pt["out.w"], pt["out.b"])
    return _seq_to_window(y, spec.sensors, spec.features), latent


_FORWARD = {
    "FC_NN": _forward_fc,
    "LSTM": _forward_lstm,
    "BILSTM": _forward_bilstm,
    "CNN_BILSTM": lambda s, p, x, t, r: _forward_cnn_bilstm(s, p, x, t, r, False),
    "CNN_BILSTM_RES": lambda s, p, x, t, r: _forward_cnn_bilstm(s, p, x, t, r, True),
}


class Model:
    """A built autoencoder: spec, named parameter arrays, and forward logic."""

    def __init__(self, spec: ModelSpec, params: dict, seed=None,
                 dtype=np.float64):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.params = {k: np.asarray(v, dtype=self.dtype) for k, v in params.items()}
        self.seed = seed

    @property
    def latent_dim(self) -> int:
        return self.spec.latent_dim

    @property
    def param_count(self) -> int:
        return sum(v.size for v in self.params.values())

    def bind(self, graph: T.Graph) -> dict:
        return {name: graph.parameter(name, arr)
                for name, arr in self.params.items()}

    def apply(self, graph: T.Graph, x: Tensor, training: bool = False,
              rng: np.random.Generator | None = None, bound: dict | None = None):
        """In-graph forward pass on a batched window tensor [B, s, w, f]."""
        spec = self.spec
        if x.ndim != 4 or x.shape[1:] != (spec.sensors, spec.window, spec.features):
            raise DimensionError(
                f"window batch shape {x.shape} does not match spec dims "
                f"(s={spec.sensors}, w={spec.window}, f={spec.features})")
        if bound is None:
            bound = self.bind(graph)
        return _FORWARD[spec.variant](spec, bound, x, training, rng)

    def forward(self, window: np.ndarray, training: bool = False,
                rng: np.random.Generator | None = None):
        """Reconstruct a window (or a batch of windows) outside any graph.

        Returns (reconstruction, LatentVector); shapes mirror the input.
        """
        arr = np.asarray(window, dtype=self.dtype)
        single = arr.ndim == 3
        if single:
            arr = arr[None]
        graph = T.Graph()
        recon, latent = self.apply(graph, graph.constant(arr), training, rng)
        rd, ld = recon.data, latent.data
        if single:
            rd, ld = rd[0], ld[0]
        return rd, LatentVector(ld, self.spec.latent_layout)

    def save(self, path):
        container.save_container(
            path, "model", {"spec": self.spec.to_dict(),
                            "dtype": self.dtype.name},
            self.params, seed=self.seed)

    @classmethod
    def load(cls, path) -> "Model":
        _, payload, tensors, seed = container.load_container(path, "model")
        spec = ModelSpec.from_dict(payload["spec"])
        return cls(spec, tensors, seed=seed, dtype=np.dtype(payload["dtype"]))


def build_model(spec: ModelSpec, rng, dtype=np.float64) -> Model:
    """Initialize a model: Glorot-uniform weights, zero biases.

    ``rng`` is an integer seed or a numpy Generator; the seed is recorded
    in checkpoints when known.
    """
    if isinstance(rng, (int, np.integer)):
        seed = int(rng)
        rng = np.random.default_rng(seed)
    else:
        seed = None
    return Model(spec, init_params(spec, rng), seed=seed, dtype=dtype)
