"""Denoising training loop: masked MSE, Adam, per-epoch loss traces.

Each epoch shuffles mini-batches (seeded), feeds corrupted windows with the
clean windows as targets, and records mean training loss plus the loss on a
chronological validation tail. Both the final parameters and the best
validation snapshot are kept. A non-finite loss aborts immediately rather
than propagating NaNs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, ContractError, DimensionError, TrainingDiverged
from .models import Model
from .tensor import Tensor


def mse_loss(pred: Tensor, target: Tensor, valid_mask: Tensor | None = None) -> Tensor:
    """Mean squared error over entries where valid_mask is true.

    With no mask (or an all-true one) this is plain MSE. Raises if the mask
    selects nothing.
    """
    if pred.shape != target.shape:
        raise DimensionError(
            f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = T.subtract(pred, target)
    if valid_mask is None:
        return T.mean_all(T.multiply(diff, diff))
    mask = valid_mask.data if isinstance(valid_mask, Tensor) else np.asarray(valid_mask)
    if mask.shape != pred.shape:
        raise DimensionError(
            f"mask shape {mask.shape} != prediction shape {pred.shape}")
    count = int(np.count_nonzero(mask))
    if count == 0:
        raise ContractError("valid_mask selects zero entries")
    masked = T.multiply(diff, Tensor(mask.astype(pred.dtype)))
    return T.scale(T.sum_all(T.multiply(masked, masked)), 1.0 / count)


@dataclass
class AdamState:
    """First/second moment estimates plus the shared step counter."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict):
    """One Adam update; returns (params, state) with params replaced in place."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError(
                f"gradient shape {g.shape} != parameter shape {p.shape} "
                f"for {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * (g * g)
        params[name] = p - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


@dataclass
class TrainConfig:
    batch_size: int = 256
    epochs: int = 100
    lr: float = 0.001
    seed: int = 0
    validation_fraction: float = 0.1
    precision: str = "64"
    clip_norm: float | None = None

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigurationError("batch_size and epochs must be positive")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigurationError(
                f"validation_fraction {self.validation_fraction} outside (0, 1)")
        if self.precision not in ("32", "64"):
            raise ConfigurationError(f"precision must be '32' or '64', "
                                     f"got {self.precision!r}")


@dataclass
class TrainResult:
    model: Model                 # final parameters
    best_params: dict            # snapshot at lowest validation loss
    best_epoch: int
    trace: list                  # rows of (epoch, train_mse, val_mse)


def _clip_global_norm(grads: dict, max_norm: float):
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm and total > 0:
        factor = max_norm / total
        for name in grads:
            grads[name] = grads[name] * factor


def _batch_loss(model, X, Y, mask, idx, training, rng):
    graph = T.Graph()
    recon, _ = model.apply(graph, graph.constant(X[idx]), training=training, rng=rng)
    loss = mse_loss(recon, Tensor(Y[idx]), Tensor(mask[idx]))
    return graph, loss, int(np.count_nonzero(mask[idx]))


def train(model: Model, windows, config: TrainConfig) -> TrainResult:
    """Train on a WindowSet (corrupted inputs, clean targets, validity mask)."""
    n = len(windows)
    if n == 0:
        raise ContractError("empty window set")
    dtype = np.float32 if config.precision == "32" else np.float64
    model.params = {k: v.astype(dtype) for k, v in model.params.items()}
    model.dtype = np.dtype(dtype)

    X = windows.corrupted.astype(dtype)
    Y = windows.clean.astype(dtype)
    mask = np.broadcast_to(windows.target_valid[..., None], Y.shape)

    val_count = max(1, int(n * config.validation_fraction))
    train_count = n - val_count
    if train_count < 1:
        raise ContractError(
            f"{n} windows leave no training data after validation split")

    root = np.random.SeedSequence(config.seed)
    shuffle_rng, dropout_rng = (np.random.default_rng(s) for s in root.spawn(2))

    adam = AdamState(lr=config.lr)
    trace = []
    best_val = np.inf
    best_params = {k: v.copy() for k, v in model.params.items()}
    best_epoch = 0

    for epoch in range(1, config.epochs + 1):
        perm = shuffle_rng.permutation(train_count)
        sq_sum = 0.0
        n_entries = 0
        for b in range(0, train_count, config.batch_size):
            idx = perm[b:b + config.batch_size]
            graph, loss, count = _batch_loss(model, X, Y, mask, idx,
                                             training=True, rng=dropout_rng)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, "
                    f"batch {b // config.batch_size}")
            grads = graph.backward(loss)
            if config.clip_norm is not None:
                _clip_global_norm(grads, config.clip_norm)
            adam_step(adam, model.params, grads)
            sq_sum += value * count
            n_entries += count
        train_mse = sq_sum / n_entries

        val_sq = 0.0
        val_entries = 0
        for b in range(train_count, n, config.batch_size):
            idx = np.arange(b, min(b + config.batch_size, n))
            _, loss, count = _batch_loss(model, X, Y, mask, idx,
                                         training=False, rng=None)
            val_sq += loss.item() * count
            val_entries += count
        val_mse = val_sq / val_entries
        if not np.isfinite(val_mse):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}")

        trace.append((epoch, train_mse, val_mse))
        if val_mse < best_val:
            best_val = val_mse
            best_epoch = epoch
            best_params = {k: v.copy() for k, v in model.params.items()}

    return TrainResult(model=model, best_params=best_params,
                       best_epoch=best_epoch, trace=trace)


def write_loss_trace(path, trace):
    """CSV of per-epoch losses: epoch, train_mse, val_mse."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_mse", "val_mse"])
        for epoch, train_mse, val_mse in trace:
            writer.writerow([epoch, repr(float(train_mse)), repr(float(val_mse))])
