"""Reverse-mode autodiff on dense float64 numpy buffers.

A :class:`Tensor` wraps a numpy array plus a lazily allocated gradient
buffer. Every operation records its parent nodes and a backward closure on
the output, so the graph reachable from a scalar is a ready-made dynamic
tape: :func:`backward` walks it once in reverse topological order and
accumulates exact analytic gradients into every ``requires_grad`` leaf.

Everything runs eagerly in float64. There is no fusion, no graph
compilation and no hidden precision loss, which keeps central-difference
verification (:func:`finite_diff_check`) meaningful down to ~1e-9.

Forward and backward are bit-deterministic for a fixed graph: traversal
order depends only on graph structure, and gradient accumulation happens
in that fixed order. Graphs are not shared between model instances, so
separate instances may run on separate threads; the grad-enable flag is
thread-local.
"""

from __future__ import annotations

import itertools
import threading

import numpy as np
from scipy.special import erf, expit

from .errors import NumericalError, ShapeError

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT2PI = 0.3989422804014327

_node_ids = itertools.count()
_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager that stops graph recording (eval / finite differences)."""

    def __enter__(self):
        self._prev = grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


class Tensor:
    """Dense float64 array with an optional gradient slot.

    Leaf tensors are created directly; op outputs carry the op kind, the
    parent tensors, and a closure that maps the output gradient to parent
    gradient contributions.
    """

    __slots__ = ("values", "grad", "requires_grad", "node_id", "op", "parents", "_backward")

    def __init__(self, values, requires_grad: bool = False, op: str = "leaf",
                 parents: tuple = (), backward=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_node_ids)
        self.op = op
        self.parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        return float(self.values)

    def detach(self) -> "Tensor":
        """Copy of the values as a fresh constant leaf."""
        return Tensor(self.values.copy())

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, op={self.op!r})"

    # operator sugar; scalars and arrays are wrapped as constants
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)


def _wrap(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _make(values, op: str, parents: tuple, backward_fn) -> Tensor:
    """Create an op output; records the tape entry only when grads can flow."""
    if grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(values, requires_grad=True, op=op, parents=parents,
                      backward=backward_fn)
    return Tensor(values, op=op)


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.values)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, extent in enumerate(shape):
        if extent == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def toposort(root: Tensor) -> list:
    """Nodes reachable from ``root``, every parent before its consumer."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor):
    """Populate ``grad`` on every ``requires_grad`` ancestor of a scalar loss."""
    if loss.values.shape != ():
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.values.shape}")
    order = toposort(loss)
    loss.grad = np.ones((), dtype=np.float64)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grads(tensors):
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# elementwise arithmetic (numpy broadcasting rules)

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.values + b.values

    def bw(g, a=a, b=b):
        _accum(a, _unbroadcast(g, a.values.shape))
        _accum(b, _unbroadcast(g, b.values.shape))

    return _make(out, "add", (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.values - b.values

    def bw(g, a=a, b=b):
        _accum(a, _unbroadcast(g, a.values.shape))
        _accum(b, _unbroadcast(-g, b.values.shape))

    return _make(out, "sub", (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.values * b.values

    def bw(g, a=a, b=b):
        _accum(a, _unbroadcast(g * b.values, a.values.shape))
        _accum(b, _unbroadcast(g * a.values, b.values.shape))

    return _make(out, "mul", (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.values / b.values

    def bw(g, a=a, b=b):
        _accum(a, _unbroadcast(g / b.values, a.values.shape))
        _accum(b, _unbroadcast(-g * a.values / (b.values * b.values), b.values.shape))

    return _make(out, "div", (a, b), bw)


def neg(a) -> Tensor:
    a = _wrap(a)

    def bw(g, a=a):
        _accum(a, -g)

    return _make(-a.values, "neg", (a,), bw)


# ---------------------------------------------------------------------------
# linear algebra and shape plumbing

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} vs {b.shape}")
    out = a.values @ b.values

    def bw(g, a=a, b=b):
        _accum(a, g @ b.values.T)
        _accum(b, a.values.T @ g)

    return _make(out, "matmul", (a, b), bw)


def dot(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"dot needs equal-length vectors, got {a.shape} and {b.shape}")
    out = a.values @ b.values

    def bw(g, a=a, b=b):
        _accum(a, g * b.values)
        _accum(b, g * a.values)

    return _make(out, "dot", (a, b), bw)


def transpose(a: Tensor) -> Tensor:
    a = _wrap(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got shape {a.shape}")

    def bw(g, a=a):
        _accum(a, g.T)

    return _make(a.values.T.copy(), "transpose", (a,), bw)


def reshape(a: Tensor, shape) -> Tensor:
    a = _wrap(a)
    out = a.values.reshape(shape)

    def bw(g, a=a):
        _accum(a, g.reshape(a.values.shape))

    return _make(out.copy(), "reshape", (a,), bw)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty list")
    out = np.concatenate([t.values for t in tensors], axis=axis)
    sizes = [t.values.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g, tensors=tensors, splits=splits, axis=axis):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return _make(out, "concat", tuple(tensors), bw)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    if not tensors:
        raise ShapeError("stack of an empty list")
    first = tensors[0].values.shape
    for t in tensors:
        if t.values.shape != first:
            raise ShapeError(f"stack needs equal shapes, got {first} and {t.values.shape}")
    out = np.stack([t.values for t in tensors], axis=axis)

    def bw(g, tensors=tensors, axis=axis):
        for i, t in enumerate(tensors):
            _accum(t, np.take(g, i, axis=axis))

    return _make(out, "stack", tuple(tensors), bw)


def take_rows(a: Tensor, indices) -> Tensor:
    """Row gather on a matrix; serves embedding lookup and hard selection.

    Duplicate indices accumulate their gradients into the same source row.
    """
    a = _wrap(a)
    if a.ndim != 2:
        raise ShapeError(f"take_rows needs a matrix, got shape {a.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    out = a.values[idx]

    def bw(g, a=a, idx=idx):
        buf = np.zeros_like(a.values)
        np.add.at(buf, idx, g)
        _accum(a, buf)

    return _make(out, "take_rows", (a,), bw)


# ---------------------------------------------------------------------------
# reductions

def _norm_axis(a: Tensor, axis: int) -> int:
    return axis if axis >= 0 else a.ndim + axis


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    out = a.values.sum(axis=axis, keepdims=keepdims)

    def bw(g, a=a, axis=axis, keepdims=keepdims):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.values.shape).copy())
        else:
            if not keepdims:
                g = np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(g, a.values.shape).copy())

    return _make(out, "sum", (a,), bw)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    count = a.values.size if axis is None else a.values.shape[_norm_axis(a, axis)]
    out = a.values.mean(axis=axis, keepdims=keepdims)

    def bw(g, a=a, axis=axis, keepdims=keepdims, count=count):
        if axis is None:
            _accum(a, np.broadcast_to(g / count, a.values.shape).copy())
        else:
            if not keepdims:
                g = np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(g / count, a.values.shape).copy())

    return _make(out, "mean", (a,), bw)


def l2_norm_rows(a: Tensor) -> Tensor:
    """Euclidean norm of each row of a matrix.

    The subgradient at an all-zero row is defined as zero, so feature sets
    with empty entries never produce NaN.
    """
    a = _wrap(a)
    if a.ndim != 2:
        raise ShapeError(f"l2_norm_rows needs a matrix, got shape {a.shape}")
    norms = np.sqrt((a.values * a.values).sum(axis=1))

    def bw(g, a=a, norms=norms):
        safe = np.where(norms > 0.0, norms, 1.0)
        _accum(a, (g / safe)[:, None] * a.values * (norms > 0.0)[:, None])

    return _make(norms, "l2_norm_rows", (a,), bw)


# ---------------------------------------------------------------------------
# nonlinearities

def texp(a: Tensor) -> Tensor:
    a = _wrap(a)
    out = np.exp(a.values)

    def bw(g, a=a, out=out):
        _accum(a, g * out)

    return _make(out, "exp", (a,), bw)


def tlog(a: Tensor) -> Tensor:
    a = _wrap(a)

    def bw(g, a=a):
        _accum(a, g / a.values)

    return _make(np.log(a.values), "log", (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    a = _wrap(a)
    out = expit(a.values)

    def bw(g, a=a, out=out):
        _accum(a, g * out * (1.0 - out))

    return _make(out, "sigmoid", (a,), bw)


def log_sigmoid(a: Tensor) -> Tensor:
    """log(sigmoid(x)) computed without overflow for large |x|."""
    a = _wrap(a)
    out = -np.logaddexp(0.0, -a.values)

    def bw(g, a=a):
        _accum(a, g * expit(-a.values))

    return _make(out, "log_sigmoid", (a,), bw)


def relu(a: Tensor) -> Tensor:
    a = _wrap(a)

    def bw(g, a=a):
        _accum(a, g * (a.values > 0.0))

    return _make(np.maximum(a.values, 0.0), "relu", (a,), bw)


def gelu(a: Tensor) -> Tensor:
    """Exact-erf gaussian error linear unit; smooth, so finite differences agree."""
    a = _wrap(a)
    cdf = 0.5 * (1.0 + erf(a.values * _INV_SQRT2))
    out = a.values * cdf

    def bw(g, a=a, cdf=cdf):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * a.values * a.values)
        _accum(a, g * (cdf + a.values * pdf))

    return _make(out, "gelu", (a,), bw)


def clamp_min(a: Tensor, floor: float) -> Tensor:
    """max(x, floor); the gradient stops where the floor is active."""
    a = _wrap(a)

    def bw(g, a=a, floor=floor):
        _accum(a, g * (a.values > floor))

    return _make(np.maximum(a.values, floor), "clamp_min", (a,), bw)


# ---------------------------------------------------------------------------
# softmax family and normalization

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = _wrap(a)
    if np.isnan(a.values).any():
        raise NumericalError("softmax received NaN input")
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g, a=a, out=out, axis=axis):
        inner = (g * out).sum(axis=axis, keepdims=True)
        _accum(a, out * (g - inner))

    return _make(out, "softmax", (a,), bw)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = _wrap(a)
    if np.isnan(a.values).any():
        raise NumericalError("log_softmax received NaN input")
    m = a.values.max(axis=axis, keepdims=True)
    shifted = a.values - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def bw(g, a=a, out=out, axis=axis):
        _accum(a, g - np.exp(out) * g.sum(axis=axis, keepdims=True))

    return _make(out, "log_softmax", (a,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, axis: int = -1,
               eps: float = 1e-5) -> Tensor:
    """Normalize to zero mean / unit population variance along ``axis``, then affine.

    ``gain`` and ``bias`` are vectors with the extent of ``axis``.
    """
    x, gain, bias = _wrap(x), _wrap(gain), _wrap(bias)
    ax = _norm_axis(x, axis)
    n = x.values.shape[ax]
    if n < 2:
        raise ShapeError(f"layer_norm axis extent must be >= 2, got {n}")
    if gain.values.shape != (n,) or bias.values.shape != (n,):
        raise ShapeError(f"layer_norm affine shapes {gain.values.shape}/{bias.values.shape} "
                         f"do not match axis extent {n}")
    mu = x.values.mean(axis=ax, keepdims=True)
    var = x.values.var(axis=ax, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.values - mu) * inv
    bshape = [1] * x.ndim
    bshape[ax] = n
    out = xhat * gain.values.reshape(bshape) + bias.values.reshape(bshape)

    def bw(g, x=x, gain=gain, bias=bias, ax=ax, inv=inv, xhat=xhat, bshape=bshape):
        reduce_axes = tuple(i for i in range(g.ndim) if i != ax)
        _accum(gain, (g * xhat).sum(axis=reduce_axes))
        _accum(bias, g.sum(axis=reduce_axes))
        dxhat = g * gain.values.reshape(bshape)
        m1 = dxhat.mean(axis=ax, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=ax, keepdims=True)
        _accum(x, inv * (dxhat - m1 - xhat * m2))

    return _make(out, "layer_norm", (x, gain, bias), bw)


def attention_bias(mask: np.ndarray) -> Tensor:
    """Additive pre-softmax bias from a boolean mask: 0 where allowed, -1e9 where not."""
    mask = np.asarray(mask, dtype=bool)
    return Tensor(np.where(mask, 0.0, -1e9))


# ---------------------------------------------------------------------------
# verification

def finite_diff_check(f, x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be a deterministic scalar-valued function of ``x`` (it may
    close over other tensors). The error at each coordinate is
    ``|analytic - central| / max(1, |central|)`` and the max over all
    coordinates of ``x`` is returned. Two baseline evaluations that
    disagree mean ``f`` is not deterministic and are rejected.
    """
    y1 = f(x)
    if y1.values.shape != ():
        raise ShapeError(f"finite_diff_check needs a scalar function, got shape {y1.values.shape}")
    with no_grad():
        y2 = f(x)
    if y1.values != y2.values:
        raise NumericalError("finite_diff_check: function is not deterministic "
                             f"({y1.values!r} vs {y2.values!r})")
    x.grad = None
    backward(y1)
    analytic = (np.zeros_like(x.values) if x.grad is None else x.grad.copy()).ravel()

    flat = x.values.ravel()
    worst = 0.0
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(f(x).values)
            flat[i] = orig - h
            down = float(f(x).values)
            flat[i] = orig
            central = (up - down) / (2.0 * h)
            err = abs(analytic[i] - central) / max(1.0, abs(central))
            if err > worst:
                worst = err
    return worst
