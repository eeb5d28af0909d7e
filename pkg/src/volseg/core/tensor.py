"""Reverse-mode automatic differentiation on numpy arrays.

A :class:`Tensor` wraps an ``ndarray``; every differentiable operation that
touches a gradient-requiring tensor appends a :class:`TapeNode` stamped with
a monotone sequence number. :func:`backward` replays the nodes reachable from
the loss in exact reverse execution order, which is always a valid reverse
topological order, and accumulates gradients into ``Tensor.grad``.

Design rules enforced here:

* gradients accumulate additively across fan-out;
* any operation whose result contains NaN or Inf raises
  :class:`~volseg.errors.NumericsError` immediately instead of letting the
  value propagate;
* attention-style masking uses a large negative finite constant
  (:data:`MASK_FILL`), never ``-inf``.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager

import numpy as np

from ..errors import DimensionError, NumericsError, UsageError

MASK_FILL = -1.0e9

_seq = itertools.count(1)
_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording inside the managed block."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class TapeNode:
    """One recorded differentiable operation.

    ``seq`` orders nodes by execution; ``apply`` consumes the output gradient
    and accumulates into the parents captured by the closure.
    """

    __slots__ = ("seq", "op", "parents", "apply")

    def __init__(self, op, parents, apply):
        self.seq = next(_seq)
        self.op = op
        self.parents = parents
        self.apply = apply


class Tensor:
    """A dense float array with an optional gradient."""

    __slots__ = ("data", "grad", "requires_grad", "node")

    # keep numpy from intercepting `ndarray <op> Tensor`; the reflected
    # Tensor methods must run instead so the tape sees the operation
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        g = np.asarray(g, dtype=self.data.dtype)
        if g.shape != self.data.shape:
            raise DimensionError(
                f"gradient shape {g.shape} does not match tensor shape {self.data.shape}"
            )
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; implementations live in module-level functions.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return pow_(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_(self, axis=axis, keepdims=keepdims)


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _finite_or_raise(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        bad = "nan" if np.any(np.isnan(arr)) else "inf"
        raise NumericsError(f"operation '{op}' produced {bad}")


def make_result(data: np.ndarray, parents, apply, op: str) -> Tensor:
    """Wrap ``data``, validate finiteness, and record the op on the tape."""
    _finite_or_raise(data, op)
    out = Tensor(data)
    parents = tuple(p for p in parents if isinstance(p, Tensor))
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.node = TapeNode(op, parents, apply)
    return out


def backward(loss: Tensor, free_graph: bool = True) -> None:
    """Backpropagate from a scalar loss through the recorded tape.

    Visits reachable nodes in strictly decreasing sequence order, i.e. the
    exact reverse of execution order. With ``free_graph`` the visited nodes
    are unlinked afterwards so saved activations can be reclaimed.
    """
    if not isinstance(loss, Tensor):
        raise UsageError("backward expects a Tensor")
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.node is None:
        raise UsageError(
            "loss has no recorded operations; it is a leaf, was computed under "
            "no_grad, or its graph was already freed by a previous backward"
        )

    nodes: dict[int, tuple[TapeNode, Tensor]] = {}
    stack = [loss]
    seen: set[int] = set()
    while stack:
        t = stack.pop()
        if id(t) in seen or t.node is None:
            continue
        seen.add(id(t))
        nodes[t.node.seq] = (t.node, t)
        stack.extend(t.node.parents)

    loss.accumulate_grad(np.ones_like(loss.data))
    for seq in sorted(nodes, reverse=True):
        node, out = nodes[seq]
        if out.grad is None:
            continue
        node.apply(out.grad)
        if free_graph:
            out.node = None
    if free_graph:
        for node, _ in nodes.values():
            node.parents = ()
            node.apply = None


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def apply(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.data.shape))

    return make_result(out_data, (a, b), apply, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def apply(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g, b.data.shape))

    return make_result(out_data, (a, b), apply, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def apply(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

    return make_result(out_data, (a, b), apply, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data / b.data

    def apply(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return make_result(out_data, (a, b), apply, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)

    def apply(g):
        if a.requires_grad:
            a.accumulate_grad(-g)

    return make_result(-a.data, (a,), apply, "neg")


def pow_(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    e = float(exponent)
    out_data = a.data**e

    def apply(g):
        if a.requires_grad:
            a.accumulate_grad(g * e * a.data ** (e - 1.0))

    return make_result(out_data, (a,), apply, "pow")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def apply(g):
        if a.requires_grad:
            a.accumulate_grad(g * out_data)

    return make_result(out_data, (a,), apply, "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.log(a.data)

    def apply(g):
        if a.requires_grad:
            a.accumulate_grad(g / a.data)

    return make_result(out_data, (a,), apply, "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.sqrt(a.data)

    def apply(g):
        if a.requires_grad:
            a.accumulate_grad(g * 0.5 / out_data)

    return make_result(out_data, (a,), apply, "sqrt")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.tanh(a.data)

    def apply(g):
        if a.requires_grad:
            a.accumulate_grad(g * (1.0 - out_data * out_data))

    return make_result(out_data, (a,), apply, "tanh")


def relu(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.maximum(a.data, 0.0)

    def apply(g):
        if a.requires_grad:
            a.accumulate_grad(g * (a.data > 0.0))

    return make_result(out_data, (a,), apply, "relu")


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    a = as_tensor(a)
    s = float(slope)
    out_data = np.where(a.data > 0.0, a.data, s * a.data)

    def apply(g):
        if a.requires_grad:
            a.accumulate_grad(g * np.where(a.data > 0.0, 1.0, s))

    return make_result(out_data, (a,), apply, "leaky_relu")


_GELU_C = 0.7978845608028654  # sqrt(2 / pi)
_GELU_A = 0.044715


def gelu(a) -> Tensor:
    """Gaussian error linear unit, tanh formulation."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + _GELU_A * x**3)
    t = np.tanh(inner)
    out_data = 0.5 * x * (1.0 + t)

    def apply(g):
        if a.requires_grad:
            sech2 = 1.0 - t * t
            dinner = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
            a.accumulate_grad(g * (0.5 * (1.0 + t) + 0.5 * x * sech2 * dinner))

    return make_result(out_data, (a,), apply, "gelu")


# ---------------------------------------------------------------------------
# Reductions


def _normalize_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _normalize_axis(axis, a.ndim)
    out_data = a.data.sum(axis=axes, keepdims=keepdims)

    def apply(g):
        if a.requires_grad:
            gg = g
            if not keepdims:
                gg = np.expand_dims(gg, axes)
            a.accumulate_grad(np.broadcast_to(gg, a.data.shape))

    return make_result(out_data, (a,), apply, "sum")


def mean_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _normalize_axis(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.data.shape[ax]
    out_data = a.data.mean(axis=axes, keepdims=keepdims)

    def apply(g):
        if a.requires_grad:
            gg = g
            if not keepdims:
                gg = np.expand_dims(gg, axes)
            a.accumulate_grad(np.broadcast_to(gg, a.data.shape) / count)

    return make_result(out_data, (a,), apply, "mean")


# ---------------------------------------------------------------------------
# Shape manipulation


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    out_data = a.data.reshape(shape)

    def apply(g):
        if a.requires_grad:
            a.accumulate_grad(g.reshape(a.data.shape))

    return make_result(out_data, (a,), apply, "reshape")


def permute(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"permute axes {axes} are not a permutation of 0..{a.ndim - 1}")
    inverse = tuple(np.argsort(axes))
    out_data = a.data.transpose(axes)

    def apply(g):
        if a.requires_grad:
            a.accumulate_grad(g.transpose(inverse))

    return make_result(out_data, (a,), apply, "permute")


def slice_(a, key) -> Tensor:
    """Basic slicing (slices, ints, ellipsis); backward scatters into zeros."""
    a = as_tensor(a)
    out_data = a.data[key]

    def apply(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[key] += g
            a.accumulate_grad(full)

    return make_result(out_data, (a,), apply, "slice")


def index_select(a, indices, axis: int = 0) -> Tensor:
    """Gather along one axis with a 1-d integer index array."""
    a = as_tensor(a)
    idx = np.asarray(indices)
    if idx.dtype.kind not in "iu" or idx.ndim != 1:
        raise UsageError("index_select needs a 1-d integer index array")
    out_data = np.take(a.data, idx, axis=axis)

    def apply(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(np.moveaxis(full, axis, 0), idx, np.moveaxis(g, axis, 0))
            a.accumulate_grad(full)

    return make_result(out_data, (a,), apply, "index_select")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise UsageError("concat needs at least one tensor")
    axis = axis % tensors[0].ndim
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def apply(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(int(lo), int(hi))
                t.accumulate_grad(g[tuple(sl)])

    return make_result(out_data, tuple(tensors), apply, "concat")


def pad(a, pad_width, value: float = 0.0) -> Tensor:
    """Constant padding; ``pad_width`` follows ``np.pad`` conventions."""
    a = as_tensor(a)
    pad_width = tuple((int(lo), int(hi)) for lo, hi in pad_width)
    if len(pad_width) != a.ndim:
        raise DimensionError(f"pad_width has {len(pad_width)} entries for a {a.ndim}-d tensor")
    out_data = np.pad(a.data, pad_width, mode="constant", constant_values=value)
    crop = tuple(slice(lo, lo + n) for (lo, _), n in zip(pad_width, a.data.shape))

    def apply(g):
        if a.requires_grad:
            a.accumulate_grad(g[crop])

    return make_result(out_data, (a,), apply, "pad")


def roll(a, shift, axis) -> Tensor:
    """Cyclic shift along one or more axes (differentiable)."""
    a = as_tensor(a)
    shift = tuple(shift) if isinstance(shift, (tuple, list)) else (shift,)
    axis = tuple(axis) if isinstance(axis, (tuple, list)) else (axis,)
    out_data = np.roll(a.data, shift, axis=axis)
    inverse = tuple(-s for s in shift)

    def apply(g):
        if a.requires_grad:
            a.accumulate_grad(np.roll(g, inverse, axis=axis))

    return make_result(out_data, (a,), apply, "roll")


# ---------------------------------------------------------------------------
# Linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul operands must have at least 2 dimensions")
    out_data = np.matmul(a.data, b.data)

    def apply(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a.accumulate_grad(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b.accumulate_grad(_unbroadcast(gb, b.data.shape))

    return make_result(out_data, (a, b), apply, "matmul")


def linear(x, weight, bias=None) -> Tensor:
    """Affine map over the last axis: ``x @ weight + bias``.

    ``weight`` has shape ``(in_features, out_features)``.
    """
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, bias)
    return out


# ---------------------------------------------------------------------------
# Softmax family


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def apply(g):
        if a.requires_grad:
            dot = (g * out_data).sum(axis=axis, keepdims=True)
            a.accumulate_grad(out_data * (g - dot))

    return make_result(out_data, (a,), apply, "softmax")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse

    def apply(g):
        if a.requires_grad:
            p = np.exp(out_data)
            a.accumulate_grad(g - p * g.sum(axis=axis, keepdims=True))

    return make_result(out_data, (a,), apply, "log_softmax")


def dropout(a, p: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when not training or ``p == 0``."""
    a = as_tensor(a)
    if not 0.0 <= p < 1.0:
        raise UsageError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return a
    mask = (rng.random(a.data.shape) >= p).astype(a.data.dtype) / (1.0 - p)
    out_data = a.data * mask

    def apply(g):
        if a.requires_grad:
            a.accumulate_grad(g * mask)

    return make_result(out_data, (a,), apply, "dropout")
