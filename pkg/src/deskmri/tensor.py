"""Reverse-mode autodiff over numpy arrays.

A DiffTensor wraps a real ndarray together with an optional backward closure
recorded at construction time. Calling ``backward()`` on a scalar (or with an
explicit seed gradient) walks the recorded graph in reverse topological order
and accumulates gradients into every tensor with ``requires_grad``.

Feature maps throughout the model are rank-4 (batch, channel, height, width);
the tape itself is rank-agnostic so that token matrices and attention maps can
live on it too. All primitives are pure: inputs are never mutated, and
identical inputs always produce identical outputs.
"""
from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from . import opcount

DEFAULT_DTYPE = np.float64

_grad_enabled = True


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


@contextmanager
def no_grad():
    """Disable tape recording inside the block (pure inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class DiffTensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"DiffTensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "DiffTensor":
        return DiffTensor(self.data)

    def astype(self, dtype) -> "DiffTensor":
        return DiffTensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Accumulate gradients of this tensor w.r.t. every reachable leaf.

        The seed defaults to ones (i.e. d(sum of self)/d(leaf)); pass an
        explicit array for vector-Jacobian products. Interior gradients are
        released as soon as consumed; the recorded closures are dropped after
        the walk, so a graph can be backward()ed once.
        """
        if seed is None:
            seed = np.ones_like(self.data)
        else:
            seed = np.asarray(seed, dtype=self.data.dtype)
            if seed.shape != self.data.shape:
                raise ShapeError(f"seed shape {seed.shape} != tensor shape {self.data.shape}")

        order = _toposort(self)
        self.grad = seed if self.grad is None else self.grad + seed
        for node in order:
            if node._backward is None:
                continue
            grads = node._backward(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g
            node.grad = None  # interior gradient no longer needed
            node._backward = None
            node._parents = ()


def _toposort(root: DiffTensor) -> list[DiffTensor]:
    """Reverse topological order via iterative DFS (graphs exceed the
    recursion limit for deep models)."""
    order: list[DiffTensor] = []
    visited: set[int] = set()
    stack: list[tuple[DiffTensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p._backward is not None and id(p) not in visited:
                stack.append((p, False))
    order.reverse()
    return order


def _make(data: np.ndarray, parents: tuple, backward_fn) -> DiffTensor:
    """Build an op output; records the closure only when the tape is live."""
    out = DiffTensor.__new__(DiffTensor)
    out.data = data
    out.grad = None
    out._parents = ()
    out._backward = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    else:
        out.requires_grad = False
    return out


def _as_tensor(x) -> DiffTensor:
    return x if isinstance(x, DiffTensor) else DiffTensor(x)


def _sum_to_shape(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> DiffTensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def backward(g):
        return _sum_to_shape(g, a.data.shape), _sum_to_shape(g, b.data.shape)

    return _make(data, (a, b), backward)


def sub(a, b) -> DiffTensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data - b.data

    def backward(g):
        return _sum_to_shape(g, a.data.shape), -_sum_to_shape(g, b.data.shape)

    return _make(data, (a, b), backward)


def mul(a, b) -> DiffTensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data
    ad, bd = a.data, b.data

    def backward(g):
        return _sum_to_shape(g * bd, ad.shape), _sum_to_shape(g * ad, bd.shape)

    return _make(data, (a, b), backward)


def scale(x: DiffTensor, c: float) -> DiffTensor:
    data = x.data * c

    def backward(g):
        return (g * c,)

    return _make(data, (x,), backward)


def const_mul(x: DiffTensor, arr: np.ndarray) -> DiffTensor:
    """Multiply by a fixed array (not differentiated), broadcasting allowed."""
    arr = np.asarray(arr, dtype=x.data.dtype)
    data = x.data * arr

    def backward(g):
        return (_sum_to_shape(g * arr, x.data.shape),)

    return _make(data, (x,), backward)


def const_add(x: DiffTensor, arr: np.ndarray) -> DiffTensor:
    arr = np.asarray(arr, dtype=x.data.dtype)
    data = x.data + arr

    def backward(g):
        return (_sum_to_shape(g, x.data.shape),)

    return _make(data, (x,), backward)


def relu(x: DiffTensor) -> DiffTensor:
    mask = x.data > 0
    data = np.where(mask, x.data, 0.0)

    def backward(g):
        return (g * mask,)

    return _make(data, (x,), backward)


def abs_(x: DiffTensor) -> DiffTensor:
    data = np.abs(x.data)
    sign = np.sign(x.data)  # subgradient 0 at exact ties

    def backward(g):
        return (g * sign,)

    return _make(data, (x,), backward)


# ---------------------------------------------------------------------------
# contractions
# ---------------------------------------------------------------------------

def matmul(a, b) -> DiffTensor:
    """Batched matrix product ``(..., m, k) @ (..., k, n)``.

    Leading dimensions broadcast numpy-style; gradients are reduced back to
    each operand's shape. Reports m*k*n (times batch) to the MAC counter.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul inner dimension mismatch: a.shape[-1]={a.shape[-1]} vs b.shape[-2]={b.shape[-2]}"
        )
    data = np.matmul(a.data, b.data)
    m, k, n = a.shape[-2], a.shape[-1], b.shape[-1]
    batch = int(np.prod(data.shape[:-2])) if data.ndim > 2 else 1
    opcount.add_macs(batch * m * k * n)
    ad, bd = a.data, b.data
    na, nb = a.requires_grad, b.requires_grad  # skip grads of frozen operands

    def backward(g):
        ga = _sum_to_shape(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape) if na else None
        gb = _sum_to_shape(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape) if nb else None
        return ga, gb

    return _make(data, (a, b), backward)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(x: DiffTensor, shape) -> DiffTensor:
    shape = tuple(shape)
    data = x.data.reshape(shape)
    orig = x.data.shape

    def backward(g):
        return (g.reshape(orig),)

    return _make(data, (x,), backward)


def transpose(x: DiffTensor, axes) -> DiffTensor:
    axes = tuple(axes)
    data = np.transpose(x.data, axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inv),)

    return _make(data, (x,), backward)


def concat(tensors, axis: int) -> DiffTensor:
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(tensors))
        )

    return _make(data, tuple(tensors), backward)


def stack(tensors, axis: int = 0) -> DiffTensor:
    tensors = [_as_tensor(t) for t in tensors]
    data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make(data, tuple(tensors), backward)


def slice_axis(x: DiffTensor, axis: int, start: int, stop: int) -> DiffTensor:
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    data = x.data[idx]
    orig_shape = x.data.shape

    def backward(g):
        gx = np.zeros(orig_shape, dtype=g.dtype)
        gx[idx] = g
        return (gx,)

    return _make(data, (x,), backward)


# ---------------------------------------------------------------------------
# reductions and normalizations
# ---------------------------------------------------------------------------

def sum_axis(x: DiffTensor, axis: int, keepdims: bool = False) -> DiffTensor:
    data = x.data.sum(axis=axis, keepdims=keepdims)
    orig_shape = x.data.shape
    trivial = orig_shape[axis] == 1  # summing a singleton axis: pure reshape

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        if trivial:
            return (g,)
        return (np.broadcast_to(g, orig_shape).copy(),)

    return _make(data, (x,), backward)


def mean_all(x: DiffTensor) -> DiffTensor:
    n = x.data.size
    data = np.asarray(x.data.mean())

    def backward(g):
        return (np.broadcast_to(g / n, x.data.shape).copy(),)

    return _make(data, (x,), backward)


def spatial_mean(x: DiffTensor) -> DiffTensor:
    """(N, C, H, W) -> (N, C) average over both spatial axes."""
    if x.ndim != 4:
        raise ShapeError(f"spatial_mean expects a rank-4 feature map, got shape {x.shape}")
    n_pix = x.shape[2] * x.shape[3]
    data = x.data.mean(axis=(2, 3))

    def backward(g):
        return (np.broadcast_to(g[:, :, None, None] / n_pix, x.data.shape).copy(),)

    return _make(data, (x,), backward)


def softmax(x: DiffTensor, axis: int = -1) -> DiffTensor:
    """Numerically stable exp-normalize along ``axis`` (max-subtracted)."""
    p = x.data - x.data.max(axis=axis, keepdims=True)
    np.exp(p, out=p)
    p /= p.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * p).sum(axis=axis, keepdims=True)
        out = g - dot
        out *= p
        return (out,)

    return _make(p, (x,), backward)
