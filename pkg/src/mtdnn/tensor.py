"""Dense float64 tensors with reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array. Every operation on tensors that
require gradients records its parents and a backward closure; node ids come
from one monotone counter, so creation order is a topological order of the
graph and :func:`backward` simply walks reachable nodes by descending id.

Leaf tensors created with ``requires_grad=True`` own a ``grad`` buffer that
:func:`backward` accumulates into. Intermediate results do not retain
gradients.
"""
import contextlib
import itertools
import threading
from numbers import Number

import numpy as np
from scipy.special import expit

from . import _kernels
from .errors import (
    ConfigError,
    ContractError,
    DimensionError,
    GraphError,
    InputError,
    NumericError,
)

_node_ids = itertools.count()
_state = threading.local()


def _grad_enabled():
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording a graph (inference, finite differences)."""
    previous = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node_id", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, *, _parents=(), _backward=None, op="leaf"):
        if isinstance(data, Tensor):
            data = data.data
        if op == "leaf":
            arr = np.array(data, dtype=np.float64)
        else:
            arr = np.asarray(data, dtype=np.float64)
            if not arr.flags.c_contiguous:
                arr = np.ascontiguousarray(arr)
        if not np.isfinite(arr).all():
            raise NumericError(f"non-finite values produced by {op}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_node_ids)
        self.op = op
        self._parents = _parents
        self._backward = _backward
        self.grad = np.zeros_like(arr) if (self.requires_grad and _backward is None) else None

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._backward is None

    @property
    def T(self):
        return swap_last(self)

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0.0)

    def detach(self):
        return Tensor(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=6)}{flag})"

    def __len__(self):
        return len(self.data)

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Number):
            return scale(self, 1.0 / other)
        return NotImplemented

    def __neg__(self):
        return neg(self)

    def __abs__(self):
        return abs_(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn, op):
    """Wrap an op result, recording graph edges when any parent needs grads."""
    track = _grad_enabled() and any(p.requires_grad for p in parents)
    if track:
        return Tensor(data, True, _parents=parents, _backward=backward_fn, op=op)
    return Tensor(data, False, op=op)


# -- the backward pass -------------------------------------------------
def backward(loss):
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``."""
    if not isinstance(loss, Tensor):
        raise ContractError("backward() expects a Tensor")
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("loss is not connected to any tensor that requires gradients")

    nodes = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if t.node_id in nodes:
            continue
        nodes[t.node_id] = t
        stack.extend(p for p in t._parents if p.requires_grad)

    grads = {loss.node_id: np.ones_like(loss.data)}
    for node_id in sorted(nodes, reverse=True):
        node = nodes[node_id]
        g = grads.pop(node_id, None)
        if g is None:
            continue
        if node._backward is None:
            node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(parent.node_id)
            grads[parent.node_id] = pg if prev is None else prev + pg


# -- elementwise -------------------------------------------------------
def _check_same(a, b, op):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b):
    if isinstance(b, Number):
        return _make(a.data + b, (a,), lambda g: (g,), "add")
    b = as_tensor(b)
    _check_same(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    if isinstance(b, Number):
        return _make(a.data - b, (a,), lambda g: (g,), "sub")
    b = as_tensor(b)
    _check_same(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b):
    if isinstance(b, Number):
        return scale(a, b)
    b = as_tensor(b)
    _check_same(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(a, c):
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def abs_(a):
    sign = np.sign(a.data)  # subgradient 0 at 0
    return _make(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


def add_bias(x, b):
    """``x + b`` with ``b`` broadcast along the last axis of ``x``."""
    if b.ndim != 1 or x.shape[-1:] != b.shape:
        raise DimensionError(f"add_bias: bias shape {b.shape} does not match {x.shape}")
    n = b.shape[0]

    def _bw(g):
        return g, g.reshape(-1, n).sum(axis=0)

    return _make(x.data + b.data, (x, b), _bw, "add_bias")


def exp(x):
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,), "exp")


def log(x, floor=None):
    """Natural log; with ``floor``, computes ``log(max(x, floor))``."""
    xd = x.data
    if floor is None:
        if (xd <= 0).any():
            raise NumericError("log of a non-positive value")
        return _make(np.log(xd), (x,), lambda g: (g / xd,), "log")
    clamped = np.maximum(xd, floor)
    live = xd > floor
    return _make(np.log(clamped), (x,), lambda g: (np.where(live, g / clamped, 0.0),), "log")


def tanh(x):
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(x):
    y = expit(x.data)
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def gelu(x):
    xd = x.data
    flat = xd.reshape(-1)
    y = _kernels.gelu_forward(flat).reshape(xd.shape)
    return _make(y, (x,), lambda g: (_kernels.gelu_backward(flat, np.ascontiguousarray(g).reshape(-1)).reshape(xd.shape),), "gelu")


# -- shape ops ---------------------------------------------------------
def reshape(x, shape):
    old = x.shape
    try:
        y = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {old} as {shape}") from exc
    return _make(y, (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x, axes=None):
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),), "transpose")


def swap_last(x):
    if x.ndim < 2:
        raise DimensionError(f"swap_last needs ndim >= 2, got shape {x.shape}")
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def getitem(x, index):
    if isinstance(index, Tensor):
        raise InputError("tensor indices are not supported")
    shape = x.shape

    def _bw(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return _make(x.data[index], (x,), _bw, "getitem")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of an empty list")
    datas = [t.data for t in tensors]
    try:
        y = np.concatenate(datas, axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: incompatible shapes {[d.shape for d in datas]}") from exc
    bounds = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def _bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(y, tuple(tensors), _bw, "concat")


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise DimensionError(f"stack: shapes differ {sorted(shapes)}")
    y = np.stack([t.data for t in tensors], axis=axis)

    def _bw(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _make(y, tuple(tensors), _bw, "stack")


# -- reductions --------------------------------------------------------
def sum_(x, axis=None, keepdims=False):
    shape = x.shape
    y = x.data.sum(axis=axis, keepdims=keepdims)

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(y, (x,), _bw, "sum")


def mean(x, axis=None, keepdims=False):
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    if n == 0:
        raise DimensionError("mean over an empty extent")
    return scale(sum_(x, axis, keepdims), 1.0 / n)


# -- linear algebra ----------------------------------------------------
def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs ndim >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: batch dimensions differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    y = ad @ bd

    def _bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _make(y, (a, b), _bw, "matmul")


# -- normalisers -------------------------------------------------------
def _rows(x, axis):
    if x.ndim == 0:
        raise DimensionError("softmax of a 0-d tensor")
    axis = axis % x.ndim
    if x.shape[axis] == 0:
        raise DimensionError(f"softmax over an empty axis of shape {x.shape}")
    moved = np.moveaxis(x.data, axis, -1)
    return axis, moved.shape, np.ascontiguousarray(moved).reshape(-1, moved.shape[-1])


def _unrows(arr, moved_shape, axis):
    return np.moveaxis(arr.reshape(moved_shape), -1, axis)


def softmax(x, axis=-1):
    axis, moved_shape, rows = _rows(x, axis)
    y_rows = _kernels.softmax_forward(rows)

    def _bw(g):
        g_rows = np.ascontiguousarray(np.moveaxis(g, axis, -1)).reshape(y_rows.shape)
        return (_unrows(_kernels.softmax_backward(y_rows, g_rows), moved_shape, axis),)

    return _make(_unrows(y_rows, moved_shape, axis), (x,), _bw, "softmax")


def log_softmax(x, axis=-1):
    axis, moved_shape, rows = _rows(x, axis)
    y_rows = _kernels.log_softmax_forward(rows)

    def _bw(g):
        g_rows = np.ascontiguousarray(np.moveaxis(g, axis, -1)).reshape(y_rows.shape)
        return (_unrows(_kernels.log_softmax_backward(y_rows, g_rows), moved_shape, axis),)

    return _make(_unrows(y_rows, moved_shape, axis), (x,), _bw, "log_softmax")


def layer_norm(x, gain, bias, eps=1e-12):
    """Normalise the last axis to zero mean, unit variance, then apply gain and bias."""
    n = x.shape[-1] if x.ndim else 0
    if n == 0:
        raise DimensionError("layer_norm over a zero-length extent")
    if gain.shape != (n,) or bias.shape != (n,):
        raise DimensionError(
            f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match extent {n}"
        )
    shape = x.shape
    rows = x.data.reshape(-1, n)
    y, xhat, rstd = _kernels.layer_norm_forward(rows, gain.data, bias.data, float(eps))

    def _bw(g):
        dx, dgain, dbias = _kernels.layer_norm_backward(
            np.ascontiguousarray(g).reshape(-1, n), xhat, rstd, gain.data
        )
        return dx.reshape(shape), dgain, dbias

    return _make(y.reshape(shape), (x, gain, bias), _bw, "layer_norm")


# -- lookup and noise --------------------------------------------------
class EmbeddingIndexError(InputError, IndexError):
    pass


def embedding(table, ids):
    """Rows of ``table`` selected by integer ``ids`` (any shape)."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise DimensionError(f"embedding table must be 2-D, got {table.shape}")
    vocab, d = table.shape
    bad = ids[(ids < 0) | (ids >= vocab)]
    if bad.size:
        raise EmbeddingIndexError(f"embedding id {int(bad[0])} outside [0, {vocab})")
    flat = ids.reshape(-1)

    def _bw(g):
        out = np.zeros((vocab, d))
        np.add.at(out, flat, g.reshape(-1, d))
        return (out,)

    return _make(table.data[flat].reshape(ids.shape + (d,)), (table,), _bw, "embedding")


def dropout(x, p, training, rng):
    """Inverted dropout: zero with probability ``p``, scale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return _make(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


__all__ = [
    "Tensor", "tensor", "as_tensor", "no_grad", "backward",
    "add", "sub", "mul", "scale", "neg", "abs_", "add_bias", "exp", "log", "tanh",
    "sigmoid", "gelu", "reshape", "transpose", "swap_last", "getitem", "concat", "stack",
    "sum_", "mean", "matmul", "softmax", "log_softmax", "layer_norm", "embedding",
    "dropout", "EmbeddingIndexError",
]
