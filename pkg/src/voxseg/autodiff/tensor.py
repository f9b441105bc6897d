"""Reverse-mode differentiable tensors over flat numpy buffers.

A Tensor wraps an ndarray plus an optional gradient buffer. Operations
build an implicit acyclic graph by recording, on each result, the parents
that require gradients and a closure that scatters the result's gradient
back onto them. ``backward(loss)`` topologically sorts that graph and
visits every node exactly once; repeated calls accumulate into ``.grad``.

Two precision modes exist: float32 (training) and float64 (gradient
checking). The mode is a process-global default applied when leaf tensors
are created; mixing dtypes inside one graph is rejected.

Conventions baked into the derivatives:
  * relu'(0) = 0
  * clamp passes gradient only strictly inside [lo, hi]
  * gelu is the tanh approximation
"""

from __future__ import annotations

import contextlib

import numpy as np


class AutodiffError(Exception):
    """Base class; ``code`` is a stable machine-readable tag."""

    code = "autodiff"


class ShapeMismatchError(AutodiffError):
    code = "shape_mismatch"


class InvalidAxisError(AutodiffError):
    code = "invalid_axis"


class NonFiniteError(AutodiffError):
    code = "non_finite"


class DtypeMismatchError(AutodiffError):
    code = "dtype_mismatch"


class GraphError(AutodiffError):
    code = "graph"


_DTYPES = {"f32": np.float32, "f64": np.float64}
_default_dtype = np.float32
_grad_enabled = True


def set_default_dtype(mode):
    """Set the global precision mode ('f32' or 'f64')."""
    global _default_dtype
    if mode not in _DTYPES:
        raise ValueError(f"unknown precision mode {mode!r}")
    _default_dtype = _DTYPES[mode]


def default_dtype():
    return _default_dtype


@contextlib.contextmanager
def precision(mode):
    """Temporarily switch the global precision mode."""
    global _default_dtype
    saved = _default_dtype
    set_default_dtype(mode)
    try:
        yield
    finally:
        _default_dtype = saved


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference / timing runs)."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


class Tensor:
    """n-dimensional array node in a differentiable computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype or _default_dtype)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor initialized with non-finite values")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # -- inspection ---------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise GraphError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data.copy(), requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}{flag})"

    # -- graph plumbing -----------------------------------------------------

    def _accum(self, g):
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self):
        backward(self)

    # -- operators ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_lift(other, self), self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return reduce_sum(self, axis)

    def mean(self, axis=None):
        return reduce_mean(self, axis)


def tensor(data, requires_grad=False, dtype=None):
    """Create a leaf tensor in the current precision mode."""
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _lift(value, like):
    """Lift a scalar / ndarray constant to a non-grad Tensor matching ``like``'s dtype."""
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value), dtype=like.data.dtype)


def _check_inputs(op, *tensors):
    dt = tensors[0].data.dtype
    for t in tensors:
        if t.data.dtype != dt:
            raise DtypeMismatchError(
                f"{op}: mixed dtypes {dt} and {t.data.dtype} in one graph"
            )
        if not np.all(np.isfinite(t.data)):
            raise NonFiniteError(f"{op}: non-finite input")


def _make(data, parents, backward_fn):
    """Wrap an op result; records graph edges only toward grad-requiring parents."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    need = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = need
    out._parents = tuple(p for p in parents if p.requires_grad) if need else ()
    out._backward = backward_fn if need else None
    return out


def _topo(root):
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss):
    """Populate ``.grad`` on every grad-requiring ancestor of a scalar loss.

    Leaf gradients accumulate across repeated calls; interior nodes carry
    only the most recent pass (their buffers are reset before seeding so a
    second call cannot compound stale upstream gradients).
    """
    if not isinstance(loss, Tensor):
        raise GraphError("backward expects a Tensor")
    if loss.data.size != 1:
        raise GraphError("backward requires a scalar loss")
    if not loss.requires_grad:
        return
    order = _topo(loss)
    for node in order:
        if node._backward is not None:
            node.grad = None
    loss._accum(np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# elementwise / arithmetic ops
# ---------------------------------------------------------------------------


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _binary(op_name, a, b, fwd, da_fn, db_fn):
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a), dtype=b.data.dtype)
    b = b if isinstance(b, Tensor) else Tensor(np.asarray(b), dtype=a.data.dtype)
    _check_inputs(op_name, a, b)
    try:
        data = fwd(a.data, b.data)
    except ValueError as exc:
        raise ShapeMismatchError(f"{op_name}: {exc}") from exc

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(da_fn(g, a.data, b.data), a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(db_fn(g, a.data, b.data), b.data.shape))

    return _make(data, (a, b), bw)


def add(a, b):
    return _binary("add", a, b, lambda x, y: x + y,
                   lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b):
    return _binary("sub", a, b, lambda x, y: x - y,
                   lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b):
    return _binary("mul", a, b, lambda x, y: x * y,
                   lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b):
    return _binary("div", a, b, lambda x, y: x / y,
                   lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y))


def scale(x, s):
    """Multiply by a plain python scalar constant."""
    _check_inputs("scale", x)
    s = float(s)
    data = x.data * np.asarray(s, dtype=x.data.dtype)

    def bw(g):
        x._accum(g * np.asarray(s, dtype=x.data.dtype))

    return _make(data, (x,), bw)


def neg(x):
    return scale(x, -1.0)


def relu(x):
    _check_inputs("relu", x)
    mask = x.data > 0
    data = np.where(mask, x.data, np.asarray(0, dtype=x.data.dtype))

    def bw(g):
        x._accum(g * mask)

    return _make(data, (x,), bw)


_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def gelu(x):
    """Tanh-approximated gelu."""
    _check_inputs("gelu", x)
    xd = x.data
    c = np.asarray(_GELU_C, dtype=xd.dtype)
    a = np.asarray(_GELU_A, dtype=xd.dtype)
    inner = c * (xd + a * xd ** 3)
    t = np.tanh(inner)
    data = 0.5 * xd * (1.0 + t)
    data = data.astype(xd.dtype, copy=False)

    def bw(g):
        sech2 = 1.0 - t * t
        d = 0.5 * (1.0 + t) + 0.5 * xd * sech2 * c * (1.0 + 3.0 * a * xd * xd)
        x._accum(g * d.astype(xd.dtype, copy=False))

    return _make(data, (x,), bw)


def sigmoid(x):
    _check_inputs("sigmoid", x)
    xd = x.data
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    e = np.exp(xd[~pos])
    out[~pos] = e / (1.0 + e)

    def bw(g):
        x._accum(g * (out * (1.0 - out)))

    return _make(out, (x,), bw)


def log(x):
    _check_inputs("log", x)
    if np.any(x.data <= 0):
        raise NonFiniteError("log: non-positive input")
    data = np.log(x.data)

    def bw(g):
        x._accum(g / x.data)

    return _make(data, (x,), bw)


def clamp(x, lo, hi):
    """Clip values to [lo, hi]; gradient is zero at and outside the bounds."""
    _check_inputs("clamp", x)
    data = np.clip(x.data, lo, hi)
    mask = (x.data > lo) & (x.data < hi)

    def bw(g):
        x._accum(g * mask)

    return _make(data, (x,), bw)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a, b):
    """2-D matmul or batched 3-D matmul with equal leading dims."""
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a))
    b = b if isinstance(b, Tensor) else Tensor(np.asarray(b))
    _check_inputs("matmul", a, b)
    if a.data.ndim != b.data.ndim or a.data.ndim not in (2, 3):
        raise ShapeMismatchError(
            f"matmul: unsupported ranks {a.data.ndim} and {b.data.ndim}"
        )
    if a.data.ndim == 3 and a.data.shape[0] != b.data.shape[0]:
        raise ShapeMismatchError("matmul: batch dims differ")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeMismatchError(
            f"matmul: inner dims {a.data.shape} x {b.data.shape}"
        )
    data = a.data @ b.data

    def bw(g):
        if a.requires_grad:
            a._accum(g @ b.data.swapaxes(-1, -2))
        if b.requires_grad:
            b._accum(a.data.swapaxes(-1, -2) @ g)

    return _make(data, (a, b), bw)


def softmax(x, axis):
    _check_inputs("softmax", x)
    ax = _valid_axis(x, axis, "softmax")
    m = x.data.max(axis=ax, keepdims=True)
    e = np.exp(x.data - m)
    data = e / e.sum(axis=ax, keepdims=True)

    def bw(g):
        dot = (g * data).sum(axis=ax, keepdims=True)
        x._accum(data * (g - dot))

    return _make(data, (x,), bw)


def _valid_axis(x, axis, op):
    if not isinstance(axis, (int, np.integer)):
        raise InvalidAxisError(f"{op}: axis must be an integer")
    if not -x.data.ndim <= axis < x.data.ndim:
        raise InvalidAxisError(f"{op}: axis {axis} out of range for rank {x.data.ndim}")
    return int(axis) % x.data.ndim


def _normalize(x, axes, eps, op):
    """Shared zero-mean unit-variance core of layer_norm / instance_norm."""
    _check_inputs(op, x)
    xd = x.data
    mu = xd.mean(axis=axes, keepdims=True)
    centered = xd - mu
    var = (centered * centered).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=xd.dtype))
    data = centered * inv

    def bw(g):
        gm = g.mean(axis=axes, keepdims=True)
        gy = (g * data).mean(axis=axes, keepdims=True)
        x._accum(inv * (g - gm - data * gy))

    return _make(data, (x,), bw)


def layer_norm(x, axis=-1, eps=1e-6):
    """Normalize over one axis (no affine; apply scale/shift separately)."""
    ax = _valid_axis(x, axis, "layer_norm")
    return _normalize(x, (ax,), eps, "layer_norm")


def instance_norm(x, eps=1e-5):
    """Normalize each channel (last axis) over all remaining axes."""
    _check_inputs("instance_norm", x)
    if x.data.ndim < 2:
        raise ShapeMismatchError("instance_norm: rank must be >= 2")
    axes = tuple(range(x.data.ndim - 1))
    return _normalize(x, axes, eps, "instance_norm")


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------


def reshape(x, shape):
    _check_inputs("reshape", x)
    shape = tuple(int(s) for s in shape)
    try:
        data = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatchError(f"reshape: {exc}") from exc

    def bw(g):
        x._accum(g.reshape(x.data.shape))

    return _make(data, (x,), bw)


def permute(x, axes):
    _check_inputs("permute", x)
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.data.ndim)):
        raise InvalidAxisError(f"permute: {axes} is not a permutation of rank {x.data.ndim}")
    data = x.data.transpose(axes)
    inverse = tuple(np.argsort(axes))

    def bw(g):
        x._accum(g.transpose(inverse))

    return _make(data, (x,), bw)


def concat(tensors, axis):
    tensors = list(tensors)
    if not tensors:
        raise ShapeMismatchError("concat: no inputs")
    _check_inputs("concat", *tensors)
    ax = _valid_axis(tensors[0], axis, "concat")
    base = list(tensors[0].data.shape)
    for t in tensors[1:]:
        other = list(t.data.shape)
        if len(other) != len(base) or any(
            i != ax and other[i] != base[i] for i in range(len(base))
        ):
            raise ShapeMismatchError("concat: non-axis dims differ")
    data = np.concatenate([t.data for t in tensors], axis=ax)
    sizes = [t.data.shape[ax] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[ax] = slice(lo, hi)
                t._accum(g[tuple(idx)])

    return _make(data, tuple(tensors), bw)


def split(x, sizes, axis):
    """Inverse of concat: cut ``x`` into len(sizes) pieces along ``axis``."""
    _check_inputs("split", x)
    ax = _valid_axis(x, axis, "split")
    if sum(sizes) != x.data.shape[ax]:
        raise ShapeMismatchError(
            f"split: sizes {sizes} do not cover axis length {x.data.shape[ax]}"
        )
    outs = []
    offset = 0
    for size in sizes:
        lo, hi = offset, offset + size
        idx = [slice(None)] * x.data.ndim
        idx[ax] = slice(lo, hi)
        piece = x.data[tuple(idx)].copy()

        def bw(g, lo=lo, hi=hi):
            full = np.zeros_like(x.data)
            sl = [slice(None)] * x.data.ndim
            sl[ax] = slice(lo, hi)
            full[tuple(sl)] = g
            x._accum(full)

        outs.append(_make(piece, (x,), bw))
        offset = hi
    return outs


def reduce_sum(x, axis=None):
    _check_inputs("reduce_sum", x)
    axes = _reduce_axes(x, axis, "reduce_sum")
    data = x.data.sum(axis=axes)

    def bw(g):
        x._accum(np.broadcast_to(_restore_dims(g, x.data.shape, axes), x.data.shape))

    return _make(np.asarray(data, dtype=x.data.dtype), (x,), bw)


def reduce_mean(x, axis=None):
    _check_inputs("reduce_mean", x)
    axes = _reduce_axes(x, axis, "reduce_mean")
    data = x.data.mean(axis=axes)
    count = 1
    for a in axes:
        count *= x.data.shape[a]

    def bw(g):
        gg = _restore_dims(g, x.data.shape, axes) / np.asarray(count, dtype=x.data.dtype)
        x._accum(np.broadcast_to(gg, x.data.shape))

    return _make(np.asarray(data, dtype=x.data.dtype), (x,), bw)


def _reduce_axes(x, axis, op):
    if axis is None:
        return tuple(range(x.data.ndim))
    if isinstance(axis, (int, np.integer)):
        axis = (axis,)
    return tuple(_valid_axis(x, a, op) for a in axis)


def _restore_dims(g, shape, axes):
    out_shape = [1 if i in axes else s for i, s in enumerate(shape)]
    return np.asarray(g).reshape(out_shape)
