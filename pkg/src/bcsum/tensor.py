"""Dense tensors with tape-based reverse-mode differentiation.

Operations executed while a :class:`Tape` is active are recorded on it whenever
one of their inputs requires a gradient. :func:`backward` walks the tape in
reverse execution order exactly once.

Binary elementwise ops accept equal shapes, or an operand whose shape is a
trailing suffix of the other's (broadcast over leading dimensions only). Any
other broadcast must go through :func:`broadcast_to` explicitly.
"""
from __future__ import annotations

import contextlib
import os
import threading
import warnings

import numpy as np

from . import _kernels

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class NonFiniteError(FloatingPointError):
    pass


_state = threading.local()
_debug = os.environ.get("BCS_DEBUG_NAN", "0") == "1"


def set_debug(flag: bool) -> None:
    """Toggle the per-op NaN/Inf check."""
    global _debug
    _debug = bool(flag)


def _stack():
    s = getattr(_state, "stack", None)
    if s is None:
        s = _state.stack = []
    return s


def current_tape():
    s = _stack()
    return s[-1] if s else None


@contextlib.contextmanager
def no_grad():
    _stack().append(None)
    try:
        yield
    finally:
        _stack().pop()


class Tape:
    """Ordered record of differentiable operations."""

    def __init__(self):
        self.nodes = []
        self.consumed = False

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False

    def record(self, t):
        if self.consumed:
            raise TapeError("tape already consumed by backward(); call reset() first")
        self.nodes.append(t)

    def reset(self):
        for n in self.nodes:
            n._backward = None
            n._tape = None
        self.nodes = []
        self.consumed = False

    def __len__(self):
        return len(self.nodes)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_backward", "_tape", "op", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._backward = None
        self._tape = None
        self.op = None
        self.name = name

    # -- basic properties
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
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f", op={self.op}" if self.op else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # -- operators
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x), dtype=dtype if dtype is not None else DEFAULT_DTYPE)


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if g.shape != t.shape:
        raise ShapeError(f"gradient shape {g.shape} does not match tensor {t.shape}")
    if t.grad is None:
        t.grad = np.array(g, dtype=t.dtype, copy=True)
    else:
        t.grad += g


def _result(data, op, parents, backward):
    out = Tensor(data)
    out.op = op
    if _debug and not np.all(np.isfinite(out.data)):
        shapes = [p.shape for p in parents]
        raise NonFiniteError(f"non-finite values produced by {op} (input shapes {shapes})")
    tape = current_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._backward = backward
        out._tape = tape
        tape.record(out)
    return out


def backward(loss: Tensor) -> None:
    """Fill ``grad`` on every leaf that contributed to ``loss``."""
    if loss.data.size != 1 or loss.ndim != 0:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        warnings.warn("loss is not attached to a tape; no gradients computed", RuntimeWarning)
        return
    if tape.consumed:
        raise TapeError("backward already ran on this tape; reset it first")
    tape.consumed = True
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        g = node.grad
        if g is not None and node._backward is not None:
            node._backward(g)
        node.grad = None
        node._backward = None


# ------------------------------------------------------------- shape helpers

def _check_binary(op, a, b):
    if a.shape == b.shape:
        return
    if b.ndim <= a.ndim and a.shape[a.ndim - b.ndim:] == b.shape:
        return
    if a.ndim <= b.ndim and b.shape[b.ndim - a.ndim:] == a.shape:
        return
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _pair(a, b):
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        raise TypeError("at least one operand must be a Tensor")
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    return a, b


# --------------------------------------------------------------- elementwise

def add(a, b):
    a, b = _pair(a, b)
    _check_binary("add", a, b)

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _result(a.data + b.data, "add", (a, b), bw)


def sub(a, b):
    a, b = _pair(a, b)
    _check_binary("sub", a, b)

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _result(a.data - b.data, "sub", (a, b), bw)


def mul(a, b):
    a, b = _pair(a, b)
    _check_binary("mul", a, b)

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, "mul", (a, b), bw)


def div(a, b):
    a, b = _pair(a, b)
    _check_binary("div", a, b)
    out = a.data / b.data

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g * out / b.data, b.shape))

    return _result(out, "div", (a, b), bw)


def exp(x):
    out = np.exp(x.data)
    return _result(out, "exp", (x,), lambda g: _accumulate(x, g * out))


def log(x):
    return _result(np.log(x.data), "log", (x,), lambda g: _accumulate(x, g / x.data))


def tanh(x):
    out = np.tanh(x.data)
    return _result(out, "tanh", (x,), lambda g: _accumulate(x, g * (1.0 - out * out)))


def relu(x):
    pos = x.data > 0
    return _result(np.where(pos, x.data, 0).astype(x.dtype), "relu", (x,),
                   lambda g: _accumulate(x, g * pos))


def leaky_relu(x, slope=0.2):
    pos = x.data > 0
    scale = np.where(pos, 1.0, slope).astype(x.dtype)
    return _result(x.data * scale, "leaky_relu", (x,), lambda g: _accumulate(x, g * scale))


def masked_fill(x, mask, value):
    """Replace entries where ``mask`` is true. ``mask`` is a constant boolean array
    broadcastable to ``x``."""
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    out = np.where(mask, np.asarray(value, dtype=x.dtype), x.data)
    return _result(out, "masked_fill", (x,), lambda g: _accumulate(x, np.where(mask, 0, g).astype(x.dtype)))


def dropout(x, rate, seed, train=True):
    """Inverted dropout; ``seed`` is an int or a ``numpy.random.Generator``."""
    if not train or rate <= 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return _result(x.data * keep, "dropout", (x,), lambda g: _accumulate(x, g * keep))


# ---------------------------------------------------------------- reductions

def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for a in axis:
        if not -ndim <= a < ndim:
            raise ShapeError(f"axis {a} out of range for ndim {ndim}")
        out.append(a % ndim)
    return tuple(out)


def sum_(x, axis=None, keepdims=False):
    ax = _norm_axis(axis, x.ndim)
    out = np.sum(x.data, axis=ax, keepdims=keepdims)

    def bw(g):
        if ax is not None and not keepdims:
            g = np.expand_dims(g, ax)
        _accumulate(x, np.broadcast_to(g, x.shape).astype(x.dtype))

    return _result(np.asarray(out, dtype=x.dtype), "sum", (x,), bw)


def mean(x, axis=None, keepdims=False):
    ax = _norm_axis(axis, x.ndim)
    n = x.size if ax is None else int(np.prod([x.shape[a] for a in ax]))
    return mul(sum_(x, axis, keepdims), 1.0 / max(n, 1))


def softmax(x, axis=-1):
    ax = _norm_axis(axis, x.ndim)[0]
    z = x.data - x.data.max(axis=ax, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=ax, keepdims=True)

    def bw(g):
        _accumulate(x, out * (g - (g * out).sum(axis=ax, keepdims=True)))

    return _result(out, "softmax", (x,), bw)


def log_softmax(x, axis=-1):
    ax = _norm_axis(axis, x.ndim)[0]
    z = x.data - x.data.max(axis=ax, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=ax, keepdims=True))
    out = z - lse

    def bw(g):
        _accumulate(x, g - np.exp(out) * g.sum(axis=ax, keepdims=True))

    return _result(out, "log_softmax", (x,), bw)


def layer_norm(x, gain=None, bias=None, axis=-1, eps=1e-5):
    ax = _norm_axis(axis, x.ndim)[0]
    d = x.shape[ax]
    for name, p in (("gain", gain), ("bias", bias)):
        if p is not None and p.shape != (d,):
            raise ShapeError(f"layer_norm: {name} shape {p.shape} != ({d},)")
    mu = x.data.mean(axis=ax, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=ax, keepdims=True) + eps)
    xhat = xc * inv
    bshape = [1] * x.ndim
    bshape[ax] = d
    out = xhat
    if gain is not None:
        out = out * gain.data.reshape(bshape)
    if bias is not None:
        out = out + bias.data.reshape(bshape)
    other = tuple(i for i in range(x.ndim) if i != ax)
    parents = tuple(p for p in (x, gain, bias) if p is not None)

    def bw(g):
        if gain is not None:
            if gain.requires_grad:
                _accumulate(gain, (g * xhat).sum(axis=other))
            gx = g * gain.data.reshape(bshape)
        else:
            gx = g
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g.sum(axis=other))
        if x.requires_grad:
            m1 = gx.mean(axis=ax, keepdims=True)
            m2 = (gx * xhat).mean(axis=ax, keepdims=True)
            _accumulate(x, inv * (gx - m1 - xhat * m2))

    return _result(out.astype(x.dtype), "layer_norm", parents, bw)


# --------------------------------------------------------------- linear alg.

def matmul(a, b):
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    shared = b.ndim == 2
    if not shared and a.shape[:-2] != b.shape[:-2]:
        if a.ndim == 2:
            raise ShapeError(f"matmul: left operand {a.shape} must carry the batch dims of {b.shape}")
        raise ShapeError(f"matmul: batch dims differ {a.shape} vs {b.shape}")
    out = a.data @ b.data

    def bw(g):
        if a.requires_grad:
            _accumulate(a, g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            if shared:
                k, n = b.shape
                _accumulate(b, a.data.reshape(-1, k).T @ g.reshape(-1, n))
            else:
                _accumulate(b, np.swapaxes(a.data, -1, -2) @ g)

    return _result(out, "matmul", (a, b), bw)


# ------------------------------------------------------------ restructuring

def reshape(x, shape):
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape: cannot reshape {x.shape} to {shape}") from e
    return _result(out, "reshape", (x,), lambda g: _accumulate(x, g.reshape(x.shape)))


def transpose(x, axes=None):
    if axes is None:
        axes = tuple(range(x.ndim))[::-1]
    axes = tuple(a % x.ndim for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: bad axes {axes} for shape {x.shape}")
    inv = np.argsort(axes)
    return _result(np.transpose(x.data, axes), "transpose", (x,),
                   lambda g: _accumulate(x, np.transpose(g, inv)))


def swap_last(x):
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def broadcast_to(x, shape):
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError as e:
        raise ShapeError(f"broadcast_to: cannot broadcast {x.shape} to {shape}") from e
    return _result(np.array(out), "broadcast_to", (x,), lambda g: _accumulate(x, _unbroadcast(g, x.shape)))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: no inputs")
    ax = _norm_axis(axis, tensors[0].ndim)[0]
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
                s != s0 for i, (s, s0) in enumerate(zip(t.shape, tensors[0].shape)) if i != ax):
            raise ShapeError(f"concat: shapes {[t.shape for t in tensors]} differ off axis {ax}")
    out = np.concatenate([t.data for t in tensors], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def bw(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[ax] = slice(lo, hi)
                _accumulate(t, g[tuple(idx)])

    return _result(out, "concat", tuple(tensors), bw)


def slice_(x, key):
    out = x.data[key]

    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, key, g)
        _accumulate(x, full)

    return _result(np.array(out), "slice", (x,), bw)


def embedding(table, ids):
    """Row lookup ``table[ids]``; ids is an integer array of any shape."""
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise TypeError("embedding ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding id out of range [0, {table.shape[0]})")
    out = table.data[ids]

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        _accumulate(table, full)

    return _result(out, "embedding", (table,), bw)


def gather_last(x, idx):
    """out[..., i, j] = x[..., i, idx[i, j]]."""
    idx = np.asarray(idx, dtype=np.int64)
    if x.shape[-2] != idx.shape[0]:
        raise ShapeError(f"gather_last: rows {x.shape[-2]} != index rows {idx.shape[0]}")
    width = x.shape[-1]
    out = _kernels.gather_last(x.data, idx)
    return _result(out, "gather_last", (x,), lambda g: _accumulate(x, _kernels.scatter_last(g, idx, width)))


def scatter_last(x, idx, width):
    """out[..., i, r] = sum_j x[..., i, j] * [idx[i, j] == r]."""
    idx = np.asarray(idx, dtype=np.int64)
    if x.shape[-2:] != idx.shape:
        raise ShapeError(f"scatter_last: trailing shape {x.shape[-2:]} != index shape {idx.shape}")
    out = _kernels.scatter_last(x.data, idx, width)
    return _result(out, "scatter_last", (x,), lambda g: _accumulate(x, _kernels.gather_last(g, idx)))
