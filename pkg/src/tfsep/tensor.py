"""Dense float64 tensors with reverse-mode automatic differentiation.

Implements exactly the operation set the separation models and losses
need: elementwise arithmetic, matmul, sigmoid/tanh/relu/exp/log/abs,
sum/mean/max reductions, reshape/transpose/concat/stack/slice, clamp,
plus an Adam optimizer and elementwise gradient clipping. Gradients
accumulate into ``.grad`` buffers micrograd-style; the graph is walked
iteratively so deeply unrolled recurrences do not hit the recursion
limit.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy.special import expit

log = logging.getLogger(__name__)

_grad_enabled = True


class no_grad:
    """Context manager that pauses graph construction (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled():
    return _grad_enabled


class Tensor:
    """N-dimensional float64 array plus an optional autodiff graph node."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward_fn = None

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

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    # -- backward pass -------------------------------------------------
    def backward(self):
        """Reverse-mode sweep from a scalar root.

        Leaf gradients accumulate across calls; interior node gradients
        are reset per sweep so a repeated backward on the same graph
        doubles the leaf gradients instead of compounding interiors.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward() needs a scalar root, got shape {self.data.shape}"
            )
        order = _toposort(self)
        for node in order:
            if node._parents:
                node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # -- operators -----------------------------------------------------
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
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return narrow(self, key)

    # -- method aliases ------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return reduce_max(self, axis, keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axis1=-2, axis2=-1):
        return transpose(self, axis1, axis2)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)

    def relu(self):
        return relu(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log_(self)

    def abs(self):
        return absolute(self)

    def clamp(self, lo, hi):
        return clamp(self, lo, hi)


class Parameter:
    """Trainable named tensor. Names must be unique within a model."""

    def __init__(self, name, data):
        self.name = str(name)
        self.tensor = Tensor(data, requires_grad=True)

    @property
    def data(self):
        return self.tensor.data

    @data.setter
    def data(self, value):
        self.tensor.data = np.asarray(value, dtype=np.float64)

    @property
    def grad(self):
        return self.tensor.grad

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.tensor.shape})"


# ---------------------------------------------------------------------
# graph plumbing
# ---------------------------------------------------------------------

def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn):
    out = Tensor(data)
    if _grad_enabled:
        grad_parents = tuple(p for p in parents if p.requires_grad)
        if grad_parents:
            out.requires_grad = True
            out._parents = grad_parents
            out._backward_fn = backward_fn
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    if g.shape != t.data.shape:
        g = _reduce_to(g, t.data.shape)
    t.grad += g


def _reduce_to(g, shape):
    # Collapse broadcast dimensions of g down to `shape`; dimensions g is
    # *missing* are handled by numpy's += broadcasting in _accum.
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    if extra >= 0:
        axes = tuple(
            i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1
        )
        if axes:
            g = g.sum(axis=axes, keepdims=True)
    return g


def _toposort(root):
    order = []
    visited = {id(root)}
    stack = [(root, iter(root._parents))]
    while stack:
        node, parents = stack[-1]
        advanced = False
        for p in parents:
            if id(p) not in visited:
                visited.add(id(p))
                stack.append((p, iter(p._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()
    return order


def _expand_reduced(g, in_shape, axis, keepdims):
    # Reshape a reduced gradient so numpy broadcasting restores in_shape.
    if axis is None or keepdims:
        return g
    axes = _norm_axes(axis, len(in_shape))
    shape = list(in_shape)
    for a in axes:
        shape[a] = 1
    return g.reshape(shape)


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


# ---------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def bw(g):
        _accum(a, g)
        _accum(b, g)

    return _make(out_data, (a, b), bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def bw(g):
        _accum(a, g)
        _accum(b, -g)

    return _make(out_data, (a, b), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def bw(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _make(out_data, (a, b), bw)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if np.any(b.data == 0.0):
        raise ValueError("division by zero in div()")
    out_data = a.data / b.data

    def bw(g):
        _accum(a, g / b.data)
        _accum(b, -g * a.data / (b.data * b.data))

    return _make(out_data, (a, b), bw)


def neg(a):
    a = as_tensor(a)

    def bw(g):
        _accum(a, -g)

    return _make(-a.data, (a,), bw)


def power(a, exponent):
    """Elementwise a**k for a scalar python exponent."""
    a = as_tensor(a)
    k = float(exponent)
    if k != int(k) and np.any(a.data < 0.0):
        raise ValueError("fractional power of negative base")
    if k < 1.0 and k != 0.0 and np.any(a.data == 0.0):
        raise ValueError("power(): gradient undefined at 0 for exponent < 1")
    out_data = a.data ** k

    def bw(g):
        _accum(a, g * k * a.data ** (k - 1.0))

    return _make(out_data, (a,), bw)


# ---------------------------------------------------------------------
# matmul and activations
# ---------------------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul requires tensors with ndim >= 2")
    out_data = a.data @ b.data

    def bw(g):
        _accum(a, g @ np.swapaxes(b.data, -1, -2))
        _accum(b, np.swapaxes(a.data, -1, -2) @ g)

    return _make(out_data, (a, b), bw)


def sigmoid(a):
    a = as_tensor(a)
    s = expit(a.data)

    def bw(g):
        _accum(a, g * s * (1.0 - s))

    return _make(s, (a,), bw)


def tanh(a):
    a = as_tensor(a)
    t = np.tanh(a.data)

    def bw(g):
        _accum(a, g * (1.0 - t * t))

    return _make(t, (a,), bw)


def relu(a):
    a = as_tensor(a)
    out_data = np.maximum(a.data, 0.0)

    def bw(g):
        _accum(a, g * (a.data > 0.0))

    return _make(out_data, (a,), bw)


def exp(a):
    a = as_tensor(a)
    e = np.exp(a.data)

    def bw(g):
        _accum(a, g * e)

    return _make(e, (a,), bw)


def log_(a):
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise ValueError("log() requires strictly positive input")

    def bw(g):
        _accum(a, g / a.data)

    return _make(np.log(a.data), (a,), bw)


def absolute(a):
    a = as_tensor(a)

    def bw(g):
        _accum(a, g * np.sign(a.data))

    return _make(np.abs(a.data), (a,), bw)


def clamp(a, lo, hi):
    """Clip into [lo, hi]; gradient is identity strictly inside, 0 outside."""
    a = as_tensor(a)
    lo, hi = float(lo), float(hi)
    if lo > hi:
        raise ValueError(f"clamp: lo {lo} > hi {hi}")
    out_data = np.clip(a.data, lo, hi)

    def bw(g):
        _accum(a, g * ((a.data > lo) & (a.data < hi)))

    return _make(out_data, (a,), bw)


# ---------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------

def reduce_sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        _accum(a, np.broadcast_to(_expand_reduced(g, a.shape, axis, keepdims), a.shape))

    return _make(out_data, (a,), bw)


def reduce_mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else np.prod(
        [a.shape[i] for i in _norm_axes(axis, a.ndim)]
    )

    def bw(g):
        expanded = _expand_reduced(g, a.shape, axis, keepdims) / count
        _accum(a, np.broadcast_to(expanded, a.shape))

    return _make(out_data, (a,), bw)


def reduce_max(a, axis=None, keepdims=False):
    """Max reduction. Ties split the gradient evenly among the maxima."""
    a = as_tensor(a)
    out_data = a.data.max(axis=axis, keepdims=keepdims)

    def bw(g):
        max_full = a.data.max(axis=axis, keepdims=True)
        mask = a.data == max_full
        counts = mask.sum(axis=_norm_axes(axis, a.ndim), keepdims=True)
        expanded = _expand_reduced(g, a.shape, axis, keepdims)
        _accum(a, mask * (expanded / counts))

    return _make(out_data, (a,), bw)


# ---------------------------------------------------------------------
# shape surgery
# ---------------------------------------------------------------------

def reshape(a, shape):
    a = as_tensor(a)
    out_data = a.data.reshape(shape)

    def bw(g):
        _accum(a, g.reshape(a.shape))

    return _make(out_data, (a,), bw)


def transpose(a, axis1=-2, axis2=-1):
    a = as_tensor(a)
    out_data = np.swapaxes(a.data, axis1, axis2)

    def bw(g):
        _accum(a, np.swapaxes(g, axis1, axis2))

    return _make(out_data, (a,), bw)


def narrow(a, key):
    """Basic slicing (ints, slices, tuples thereof) with gradient support."""
    a = as_tensor(a)
    out_data = a.data[key]

    def bw(g):
        if not a.requires_grad:
            return
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        a.grad[key] += g

    return _make(out_data, (a,), bw)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of empty sequence")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    ax = axis % out_data.ndim
    sizes = [t.shape[ax] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            idx = tuple(
                slice(start, stop) if d == ax else slice(None)
                for d in range(out_data.ndim)
            )
            _accum(t, g[idx])

    return _make(out_data, tuple(tensors), bw)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("stack of empty sequence")
    out_data = np.stack([t.data for t in tensors], axis=axis)
    ax = axis % out_data.ndim

    def bw(g):
        for i, t in enumerate(tensors):
            _accum(t, np.take(g, i, axis=ax))

    return _make(out_data, tuple(tensors), bw)


# ---------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------

class AdamState:
    """First/second moment estimates keyed by parameter name."""

    def __init__(self):
        self.step = 0
        self.m = {}
        self.v = {}

    def to_arrays(self):
        return {"step": self.step, "m": dict(self.m), "v": dict(self.v)}

    @classmethod
    def from_arrays(cls, step, m, v):
        state = cls()
        state.step = int(step)
        state.m = {k: np.asarray(a, dtype=np.float64) for k, a in m.items()}
        state.v = {k: np.asarray(a, dtype=np.float64) for k, a in v.items()}
        return state


def adam_step(params, grads, state, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, in place.

    Returns False (and mutates nothing) if any gradient is missing or
    non-finite; the skip is reported through the module logger.
    """
    for p, g in zip(params, grads):
        if g is None or not np.all(np.isfinite(g)):
            log.warning("adam_step skipped: non-finite gradient for %s", p.name)
            return False
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for p, g in zip(params, grads):
        m = state.m.setdefault(p.name, np.zeros_like(p.data))
        v = state.v.setdefault(p.name, np.zeros_like(p.data))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return True


def clip_gradients(params, lo=-1.0, hi=1.0):
    """Clamp every gradient component into [lo, hi], elementwise."""
    if lo > hi:
        raise ValueError(f"clip_gradients: lo {lo} > hi {hi}")
    for p in params:
        g = p.tensor.grad
        if g is not None:
            np.clip(g, lo, hi, out=g)
