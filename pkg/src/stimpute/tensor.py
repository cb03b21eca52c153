"""Dense tensors with reverse-mode automatic differentiation.

Values are numpy arrays wrapped in :class:`Tensor`. Operations on tensors
attached to a :class:`Graph` are recorded on a tape (the tape order is a
valid topological order by construction), and :func:`backward` replays the
tape in reverse to accumulate gradients for every registered parameter.

Tensors are immutable once constructed: no operation mutates an operand's
backing array. A graph is built and traversed single-threaded; independent
graphs may live on independent threads.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, ContractError, DimensionError

DEFAULT_DTYPE = np.float64


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(DEFAULT_DTYPE)
    return arr


class Tensor:
    """A dense n-dimensional real array, optionally attached to a graph."""

    __slots__ = ("data", "graph", "idx")

    def __init__(self, data, dtype=None):
        self.data = _as_array(data, dtype)
        self.graph: Optional[Graph] = None
        self.idx: Optional[int] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"

    # Operator sugar; all routed through the recorded primitives below.
    def __add__(self, other):
        return add(self, _lift(other, self.dtype))

    def __sub__(self, other):
        return subtract(self, _lift(other, self.dtype))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return multiply(self, _lift(other, self.dtype))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _lift(other, self.dtype))


def _lift(x, dtype) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


class _Node:
    """Tape entry: one recorded primitive with its local gradient rule."""

    __slots__ = ("inputs", "backward_fn")

    def __init__(self, inputs, backward_fn):
        self.inputs = inputs           # tuple of tape indices (None = constant operand)
        self.backward_fn = backward_fn  # g_out -> tuple of grads aligned with inputs


class Graph:
    """Recorded computation: an append-only tape plus a parameter registry."""

    def __init__(self):
        self._nodes: list[_Node] = []
        self._params: dict[str, Tensor] = {}

    def parameter(self, name: str, data, dtype=None) -> Tensor:
        """Register a named trainable leaf tensor."""
        if name in self._params:
            raise ConfigurationError(f"duplicate parameter name {name!r}")
        t = Tensor(data, dtype)
        self._attach_leaf(t)
        self._params[name] = t
        return t

    def constant(self, data, dtype=None) -> Tensor:
        """Attach a non-trainable leaf tensor to this graph."""
        t = Tensor(data, dtype)
        self._attach_leaf(t)
        return t

    @property
    def parameters(self) -> dict[str, Tensor]:
        return dict(self._params)

    def _attach_leaf(self, t: Tensor):
        t.graph = self
        t.idx = len(self._nodes)
        self._nodes.append(_Node((), None))

    def _record(self, out: Tensor, inputs, backward_fn):
        out.graph = self
        out.idx = len(self._nodes)
        self._nodes.append(_Node(inputs, backward_fn))

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss w.r.t. every registered parameter.

        Parameters the loss does not depend on get zero gradients.
        """
        if loss.graph is not self or loss.idx is None:
            raise ContractError("loss tensor does not belong to this graph")
        if loss.size != 1:
            raise ContractError(
                f"loss must be a scalar node, got shape {loss.shape}")
        grads: list[Optional[np.ndarray]] = [None] * len(self._nodes)
        grads[loss.idx] = np.ones_like(loss.data)
        for idx in range(loss.idx, -1, -1):
            g = grads[idx]
            if g is None:
                continue
            node = self._nodes[idx]
            if node.backward_fn is None:
                continue
            for slot, gin in zip(node.inputs, node.backward_fn(g)):
                if slot is None or gin is None:
                    continue
                grads[slot] = gin if grads[slot] is None else grads[slot] + gin
        out = {}
        for name, p in self._params.items():
            g = grads[p.idx]
            out[name] = np.zeros_like(p.data) if g is None else g
        return out


def backward(graph: Graph, loss: Tensor) -> dict[str, np.ndarray]:
    """Functional form of :meth:`Graph.backward`."""
    return graph.backward(loss)


def _owner(operands: Sequence[Tensor]) -> Optional[Graph]:
    graph = None
    for t in operands:
        if t.graph is None:
            continue
        if graph is None:
            graph = t.graph
        elif graph is not t.graph:
            raise ContractError("operands belong to different graphs")
    return graph


def _emit(operands: Sequence[Tensor], out_data: np.ndarray,
          backward_fn: Callable) -> Tensor:
    """Wrap a computed array; record it if any operand is graph-attached."""
    out = Tensor(out_data)
    graph = _owner(operands)
    if graph is not None:
        graph._record(out, tuple(t.idx for t in operands), backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two rank-2 tensors."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul requires (m,k) x (k,n), got {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def bwd(g):
        return g @ bd.T, ad.T @ g

    return _emit((a, b), ad @ bd, bwd)


def _binary_shapes(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(
            f"{op} operands have incompatible shapes {a.shape} and {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "add")
    ash, bsh = a.shape, b.shape

    def bwd(g):
        return _unbroadcast(g, ash), _unbroadcast(g, bsh)

    return _emit((a, b), a.data + b.data, bwd)


def subtract(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "subtract")
    ash, bsh = a.shape, b.shape

    def bwd(g):
        return _unbroadcast(g, ash), _unbroadcast(-g, bsh)

    return _emit((a, b), a.data - b.data, bwd)


def multiply(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "multiply")
    ad, bd = a.data, b.data

    def bwd(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _emit((a, b), ad * bd, bwd)


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply by a python scalar (dtype-preserving)."""
    factor = float(factor)

    def bwd(g):
        return (g * factor,)

    return _emit((x,), x.data * factor, bwd)


def leaky_relu(x: Tensor, alpha: float = 0.01) -> Tensor:
    """max(x, alpha*x); the gradient at exactly 0 is alpha."""
    alpha = float(alpha)
    pos = x.data > 0
    out = np.where(pos, x.data, x.data * alpha)

    def bwd(g):
        return (np.where(pos, g, g * alpha),)

    return _emit((x,), out, bwd)


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)

    def bwd(g):
        return (g * out * (1.0 - out),)

    return _emit((x,), out, bwd)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def bwd(g):
        return (g * (1.0 - out * out),)

    return _emit((x,), out, bwd)


_ELEMENTWISE = {"leaky_relu", "sigmoid", "tanh", "add", "multiply", "scale"}


def elementwise(op: str, *operands: Tensor, alpha: float = 0.01,
                factor: float = 1.0) -> Tensor:
    """Dispatch by name to the pointwise primitives."""
    if op not in _ELEMENTWISE:
        raise ConfigurationError(f"unknown elementwise op {op!r}")
    if op == "leaky_relu":
        return leaky_relu(operands[0], alpha)
    if op == "sigmoid":
        return sigmoid(operands[0])
    if op == "tanh":
        return tanh(operands[0])
    if op == "add":
        return add(*operands)
    if op == "multiply":
        return multiply(*operands)
    return scale(operands[0], factor)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    """Concatenate along one axis; all other axes must agree."""
    if not tensors:
        raise ContractError("concat of an empty tensor list")
    if len(tensors) == 1:
        return tensors[0]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
                i != axis and t.shape[i] != ref[i] for i in range(t.ndim)):
            raise DimensionError(
                f"concat shapes {[t.shape for t in tensors]} "
                f"incompatible on axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _emit(tuple(tensors), np.concatenate([t.data for t in tensors], axis=axis), bwd)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice [start:stop) along one axis."""
    if not (0 <= start < stop <= x.shape[axis]):
        raise DimensionError(
            f"slice [{start}:{stop}) out of bounds for axis {axis} of {x.shape}")
    sel = tuple(slice(None) if i != axis else slice(start, stop)
                for i in range(x.ndim))
    xsh = x.shape

    def bwd(g):
        buf = np.zeros(xsh, dtype=g.dtype)
        buf[sel] = g
        return (buf,)

    return _emit((x,), x.data[sel], bwd)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    xsh = x.shape

    def bwd(g):
        return (g.reshape(xsh),)

    return _emit((x,), x.data.reshape(shape), bwd)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        return (g.transpose(inv),)

    return _emit((x,), x.data.transpose(axes), bwd)


def sum_all(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar node."""
    xsh = x.shape

    def bwd(g):
        return (np.broadcast_to(g, xsh).copy(),)

    return _emit((x,), x.data.sum(), bwd)


def mean_all(x: Tensor) -> Tensor:
    return scale(sum_all(x), 1.0 / x.size)


def dropout(x: Tensor, rate: float, training: bool,
            rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout: scales survivors by 1/(1-rate); identity at inference."""
    if not (0.0 <= rate < 1.0):
        raise ConfigurationError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("training-mode dropout requires a seeded generator")
    keep = rng.random(x.shape) >= rate
    scale_factor = 1.0 / (1.0 - rate)
    mask = keep.astype(x.dtype) * scale_factor

    def bwd(g):
        return (g * mask,)

    return _emit((x,), x.data * mask, bwd)


def conv_time(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Cross-correlation sliding only along the time axis.

    The kernel spans all sensors (height s) so the spatial axis collapses
    to 1. Zero "same" padding keeps the output time length equal to the
    input's: pad_left = floor((m-1)/2), pad_right = ceil((m-1)/2).

    x: [s, w, c] or batched [B, s, w, c]; kernel: [s, m, c, f]; bias: [f]
    -> [1, w, f] or [B, 1, w, f].
    """
    if kernel.ndim != 4:
        raise DimensionError(f"kernel must be rank 4 [s,m,c,f], got {kernel.shape}")
    batched = x.ndim == 4
    if not batched and x.ndim != 3:
        raise DimensionError(f"input must be [s,w,c] or [B,s,w,c], got {x.shape}")
    xd = x.data if batched else x.data[None]
    B, s, w, c = xd.shape
    ks, m, kc, f = kernel.shape
    if ks != s:
        raise DimensionError(
            f"kernel height {ks} must equal sensor count {s}")
    if kc != c:
        raise DimensionError(
            f"kernel channels {kc} do not match input channels {c}")
    if m < 1 or m > w:
        raise ConfigurationError(
            f"kernel time width {m} must be in [1, w={w}]")
    if bias.shape != (f,):
        raise DimensionError(f"bias shape {bias.shape} must be ({f},)")

    pad_left = (m - 1) // 2
    pad_right = m - 1 - pad_left
    xpad = np.pad(xd, ((0, 0), (0, 0), (pad_left, pad_right), (0, 0)))
    # win[b, s, t, c, tau] = xpad[b, s, t + tau, c]
    win = np.lib.stride_tricks.sliding_window_view(xpad, m, axis=2)
    out = np.einsum("bstcm,smcf->btf", win, kernel.data, optimize=True)
    out = out + bias.data
    out = out[:, None]  # [B, 1, w, f]
    kd = kernel.data

    def bwd(g):
        gb = (g if batched else g[None])[:, 0]  # [B, w, f]
        grad_k = np.einsum("bstcm,btf->smcf", win, gb, optimize=True)
        grad_bias = gb.sum(axis=(0, 1))
        grad_xpad = np.zeros_like(xpad)
        for tau in range(m):
            grad_xpad[:, :, tau:tau + w, :] += np.einsum(
                "btf,scf->bstc", gb, kd[:, tau], optimize=True)
        grad_x = grad_xpad[:, :, pad_left:pad_left + w, :]
        return (grad_x if batched else grad_x[0]), grad_k, grad_bias

    return _emit((x, kernel, bias), out if batched else out[0], bwd)
