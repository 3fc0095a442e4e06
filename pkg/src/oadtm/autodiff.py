"""Minimal reverse-mode differentiation over dense numpy arrays.

Every differentiable primitive records itself on the calling thread's
:class:`GraphTape`; :func:`backward` replays the tape in reverse and then frees
it.  Values are 64-bit in ``"test"`` precision (used for every gradient check)
and 32-bit in ``"fast"`` precision (training).

Broadcasting is deliberately narrow: the binary elementwise ops accept a second
operand whose shape broadcasts *into* the first one's (a bias row over a matrix,
a per-window mean over its frames, a diagonal peephole over a batch), and
nothing else.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager

import numpy as np

from .errors import ContractError, DimensionError, ValidationError

__all__ = [
    "DiffTensor",
    "GraphTape",
    "add",
    "backward",
    "concat",
    "cross_entropy_loss",
    "dropout",
    "get_dtype",
    "get_precision",
    "getitem",
    "matmul",
    "max_reduce",
    "mean",
    "mul",
    "no_grad",
    "power",
    "precision",
    "relu",
    "reshape",
    "scale",
    "set_precision",
    "shift",
    "sigmoid",
    "softmax",
    "stack",
    "sub",
    "sum",
    "swapaxes",
    "tanh",
    "tensor",
]

_PRECISIONS = {
    "test": np.float64,
    "float64": np.float64,
    "fast": np.float32,
    "float32": np.float32,
}
_dtype = np.float64
_local = threading.local()
_ids = itertools.count()


def set_precision(mode: str) -> None:
    """Select the global compute precision: ``"test"`` (64-bit) or ``"fast"`` (32-bit)."""
    global _dtype
    try:
        _dtype = _PRECISIONS[mode]
    except KeyError:
        raise ValueError(f"unknown precision mode {mode!r}; expected one of {sorted(_PRECISIONS)}") from None


def get_dtype():
    return _dtype


def get_precision() -> str:
    return "test" if _dtype == np.float64 else "fast"


@contextmanager
def precision(mode: str):
    previous = get_precision()
    set_precision(mode)
    try:
        yield
    finally:
        set_precision(previous)


class GraphTape:
    """Ordered record of the operations executed since the last backward pass."""

    def __init__(self):
        self.ops = []
        self._outputs = set()

    def record(self, out, inputs, rule):
        self.ops.append((out, inputs, rule))
        self._outputs.add(out.node_id)

    def __contains__(self, tensor):
        return tensor.node_id in self._outputs

    def __len__(self):
        return len(self.ops)

    def clear(self):
        self.ops = []
        self._outputs = set()


def _thread_state():
    if not hasattr(_local, "tape"):
        _local.tape = GraphTape()
        _local.grad_enabled = True
    return _local


def current_tape() -> GraphTape:
    return _thread_state().tape


def reset_tape() -> None:
    """Drop every recorded operation without computing gradients."""
    _thread_state().tape.clear()


@contextmanager
def no_grad():
    """Run forward computations without recording them."""
    state = _thread_state()
    previous = state.grad_enabled
    state.grad_enabled = False
    try:
        yield
    finally:
        state.grad_enabled = previous


class DiffTensor:
    """A dense array plus its accumulated gradient.

    ``grad`` is allocated lazily but always reads as an array of the same
    shape as ``values``.
    """

    __slots__ = ("values", "_grad", "requires_grad", "node_id", "recorded")
    __array_priority__ = 1000

    def __init__(self, values, requires_grad=False, dtype=None):
        self.values = np.array(values, dtype=dtype or _dtype)
        self._grad = None
        self.requires_grad = requires_grad
        self.node_id = next(_ids)
        self.recorded = False

    @classmethod
    def _wrap(cls, arr, requires_grad=False):
        out = cls.__new__(cls)
        out.values = arr
        out._grad = None
        out.requires_grad = requires_grad
        out.node_id = next(_ids)
        out.recorded = False
        return out

    @property
    def grad(self):
        if self._grad is None:
            self._grad = np.zeros_like(self.values)
        return self._grad

    @grad.setter
    def grad(self, value):
        value = np.asarray(value, dtype=self.values.dtype)
        if value.shape != self.values.shape:
            raise DimensionError(f"grad shape {value.shape} does not match values shape {self.values.shape}")
        self._grad = value

    def zero_grad(self):
        self._grad = None

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def dtype(self):
        return self.values.dtype

    def numpy(self):
        return self.values

    def item(self):
        return self.values.item()

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"DiffTensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        if _is_scalar(other):
            return add_scalar(self, other)
        return add(self, other)

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        if _is_scalar(other):
            return add_scalar(self, -other)
        return sub(self, other)

    def __rsub__(self, other):
        return add_scalar(scale(self, -1.0), other)

    def __mul__(self, other):
        if _is_scalar(other):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)


def tensor(values, requires_grad=False):
    return DiffTensor(values, requires_grad=requires_grad)


def _is_scalar(x):
    return isinstance(x, (int, float, np.integer, np.floating))


def _as_tensor(x):
    if isinstance(x, DiffTensor):
        return x
    return DiffTensor(x)


def _make(arr, inputs, rule):
    """Wrap an op result and record it if any input needs a gradient."""
    state = _thread_state()
    needs = state.grad_enabled and any(t.requires_grad for t in inputs)
    out = DiffTensor._wrap(arr, requires_grad=needs)
    if needs:
        out.recorded = True
        state.tape.record(out, inputs, rule)
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    if lead:
        grad = grad.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_binary(kind, a, b):
    if a.shape == b.shape:
        return
    try:
        out = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        out = None
    if out != a.shape:
        raise DimensionError(f"{kind}: shapes {a.shape} and {b.shape} are incompatible")


def backward(loss: DiffTensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor reachable from ``loss``.

    The tape is freed afterwards; a second backward through the same graph
    raises :class:`ContractError`.
    """
    if loss.values.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    tape = current_tape()
    if loss.recorded and loss not in tape:
        raise ContractError("loss is not on the live tape (graph already consumed)")
    adj = {loss.node_id: np.ones_like(loss.values)}
    reached = {loss.node_id: loss}
    for out, inputs, rule in reversed(tape.ops):
        g = adj.get(out.node_id)
        if g is None:
            continue
        for inp, gi in zip(inputs, rule(g)):
            if gi is None or not inp.requires_grad:
                continue
            prev = adj.get(inp.node_id)
            if prev is None:
                adj[inp.node_id] = gi
                reached[inp.node_id] = inp
            else:
                adj[inp.node_id] = prev + gi
    for node_id, t in reached.items():
        if t.requires_grad or node_id == loss.node_id:
            t.grad = t.grad + adj[node_id]
    tape.clear()


# --- linear algebra -------------------------------------------------------


def matmul(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    """Matrix product over the last two axes.

    ``a`` is ``[..., m, k]``; ``b`` is either a shared ``[k, n]`` matrix or a
    ``[..., k, n]`` stack with the same leading axes as ``a``.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ for {a.shape} and {b.shape}")
    if b.ndim != 2 and b.shape[:-2] != a.shape[:-2]:
        raise DimensionError(f"matmul: batch axes differ for {a.shape} and {b.shape}")
    av, bv = a.values, b.values

    def rule(g):
        ga = gb = None
        if a.requires_grad:
            ga = g @ np.swapaxes(bv, -1, -2)
        if b.requires_grad:
            if bv.ndim == 2 and av.ndim > 2:
                gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(av, -1, -2) @ g
        return ga, gb

    return _make(av @ bv, (a, b), rule)


# --- elementwise ----------------------------------------------------------


def add(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary("add", a, b)

    def rule(g):
        return g, _unbroadcast(g, b.shape)

    return _make(a.values + b.values, (a, b), rule)


def sub(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary("sub", a, b)

    def rule(g):
        return g, _unbroadcast(-g, b.shape)

    return _make(a.values - b.values, (a, b), rule)


def mul(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary("mul", a, b)
    av, bv = a.values, b.values

    def rule(g):
        ga = g * bv if a.requires_grad else None
        gb = _unbroadcast(g * av, bv.shape) if b.requires_grad else None
        return ga, gb

    return _make(av * bv, (a, b), rule)


def elementwise(kind: str, a: DiffTensor, b: DiffTensor) -> DiffTensor:
    try:
        op = {"add": add, "mul": mul, "sub": sub}[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    return op(a, b)


def scale(x: DiffTensor, c: float) -> DiffTensor:
    return _make(x.values * c, (x,), lambda g: (g * c,))


def add_scalar(x: DiffTensor, c: float) -> DiffTensor:
    return _make(x.values + c, (x,), lambda g: (g,))


def power(x: DiffTensor, p: float) -> DiffTensor:
    xv = x.values
    return _make(xv**p, (x,), lambda g: (g * p * xv ** (p - 1),))


# --- activations ----------------------------------------------------------


def sigmoid(x: DiffTensor) -> DiffTensor:
    # tanh form is stable for large |x| and exact at 0
    y = 0.5 * (1.0 + np.tanh(0.5 * x.values))
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x: DiffTensor) -> DiffTensor:
    y = np.tanh(x.values)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),))


def relu(x: DiffTensor) -> DiffTensor:
    mask = x.values > 0
    return _make(np.where(mask, x.values, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def softmax(x: DiffTensor, axis: int = -1) -> DiffTensor:
    """Softmax along ``axis`` (rows of a matrix by default), max-shifted for stability."""
    z = x.values - x.values.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def rule(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), rule)


def activation(kind: str, x: DiffTensor) -> DiffTensor:
    if kind == "softmax-rows":
        if x.ndim != 2:
            raise DimensionError(f"softmax-rows needs a rank-2 input, got {x.shape}")
        return softmax(x, axis=-1)
    try:
        return {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}[kind](x)
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None


def dropout(x: DiffTensor, rate: float, rng=None) -> DiffTensor:
    """Inverted dropout; identity when ``rate`` is 0 or no generator is given."""
    if rate <= 0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return _make(x.values * keep, (x,), lambda g: (g * keep,))


# --- reductions -----------------------------------------------------------


def sum(x: DiffTensor, axis=None, keepdims=False) -> DiffTensor:  # noqa: A001
    shape = x.shape

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(x.values.sum(axis=axis, keepdims=keepdims)), (x,), rule)


def mean(x: DiffTensor, axis=None, keepdims=False) -> DiffTensor:
    n = x.values.size if axis is None else x.shape[axis]
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def max_reduce(x: DiffTensor, axis: int) -> DiffTensor:
    """Maximum along ``axis``; the gradient goes to the first maximizer only."""
    if x.shape[axis] == 0:
        raise ContractError("max over an empty axis")
    idx = np.expand_dims(np.argmax(x.values, axis=axis), axis)
    out = np.take_along_axis(x.values, idx, axis=axis).squeeze(axis)
    shape = x.shape

    def rule(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        return (full,)

    return _make(out, (x,), rule)


# --- structural -----------------------------------------------------------


def reshape(x: DiffTensor, shape) -> DiffTensor:
    old = x.shape
    return _make(x.values.reshape(shape), (x,), lambda g: (g.reshape(old),))


def swapaxes(x: DiffTensor, a1: int, a2: int) -> DiffTensor:
    return _make(np.swapaxes(x.values, a1, a2), (x,), lambda g: (np.swapaxes(g, a1, a2),))


def getitem(x: DiffTensor, key) -> DiffTensor:
    """Basic (non-fancy) indexing."""
    shape = x.shape

    def rule(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[key] = g
        return (full,)

    return _make(x.values[key], (x,), rule)


def concat(tensors, axis: int = -1) -> DiffTensor:
    tensors = [_as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.values for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def rule(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tuple(tensors), rule)


def stack(tensors, axis: int = 0) -> DiffTensor:
    tensors = [_as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.values for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"stack: {exc}") from None

    def rule(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make(out, tuple(tensors), rule)


def shift(x: DiffTensor, r: int, axis: int = -2) -> DiffTensor:
    """Delay by ``r`` steps along ``axis`` with zero fill: ``out[t] = x[t - r]``."""
    if r < 0:
        raise ValueError("shift amount must be non-negative")
    if r == 0:
        return x
    axis = axis % x.ndim
    n = x.shape[axis]
    out = np.zeros_like(x.values)
    if r < n:
        dst = [slice(None)] * x.ndim
        src = [slice(None)] * x.ndim
        dst[axis] = slice(r, None)
        src[axis] = slice(0, n - r)
        out[tuple(dst)] = x.values[tuple(src)]

    def rule(g):
        gx = np.zeros_like(g)
        if r < n:
            gx[tuple(src)] = g[tuple(dst)]
        return (gx,)

    return _make(out, (x,), rule)


# --- loss -----------------------------------------------------------------


def cross_entropy_loss(logits: DiffTensor, labels) -> DiffTensor:
    """Mean negative log-likelihood of ``labels`` under row-wise softmax of ``logits``."""
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy_loss expects [B, C] logits, got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    b, c = logits.shape
    if b < 1 or labels.shape[0] != b:
        raise ValidationError(f"need one label per row: {labels.shape[0]} labels for {b} rows")
    if labels.min() < 0 or labels.max() >= c:
        raise ValidationError(f"label out of range [0, {c - 1}]: {labels.tolist()}")
    z = logits.values - logits.values.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(b)
    nll = logsum - z[rows, labels]
    loss = np.asarray(nll.mean(), dtype=logits.dtype)
    probs = np.exp(z - logsum[:, None])

    def rule(g):
        d = probs.copy()
        d[rows, labels] -= 1.0
        return (d * (g / b),)

    return _make(loss, (logits,), rule)
