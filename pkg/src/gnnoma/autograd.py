"""Reverse-mode automatic differentiation over numpy arrays.

Every op on :class:`Tensor` returns a new tensor that remembers its parents
and a closure pushing the output gradient back to them. ``loss.backward()``
walks that graph in reverse topological order. Sparse constant operators
(adjacency, pooling, gather/scatter) enter through :func:`spmm`.
"""
from __future__ import annotations

import contextlib
import os

import numpy as np
from scipy import sparse
from scipy.special import expit

from .errors import NotScalarLoss, ShapeMismatch

_state = {"grad": True, "kinks": None}
CHECK_FINITE = bool(os.environ.get("GNNOMA_DEBUG"))


@contextlib.contextmanager
def no_grad():
    prev = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = prev


@contextlib.contextmanager
def record_kinks():
    """Collect the sign pattern of every (leaky) ReLU input evaluated inside."""
    prev = _state["kinks"]
    log: list[np.ndarray] = []
    _state["kinks"] = log
    try:
        yield log
    finally:
        _state["kinks"] = prev


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward")

    def __init__(self, data, requires_grad: bool = False, _prev=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        if CHECK_FINITE and not np.all(np.isfinite(self.data)):
            raise FloatingPointError("non-finite value in tensor")
        self.grad = None
        self.requires_grad = requires_grad
        self._prev = _prev
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape})"

    def backward(self):
        if self.data.size != 1:
            raise NotScalarLoss(f"loss has shape {self.shape}")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
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


def tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


def _track(*ts: Tensor) -> bool:
    return _state["grad"] and any(t.requires_grad for t in ts)


def _make(data, parents, backward):
    if _track(*parents):
        return Tensor(data, True, tuple(p for p in parents if p.requires_grad), backward)
    return Tensor(data)


def add(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    out = a.data / b.data

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), bw)


def matmul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")

    def bw(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), bw)


def spmm(A, x) -> Tensor:
    """Constant (sparse or dense) matrix times tensor."""
    x = tensor(x)
    if A.shape[1] != x.shape[0]:
        raise ShapeMismatch(f"spmm {A.shape} @ {x.shape}")
    out = A @ x.data
    out = np.asarray(out)

    def bw(g):
        _accum(x, np.asarray(A.T @ g))

    return _make(out, (x,), bw)


def _log_kink(x: np.ndarray):
    if _state["kinks"] is not None:
        _state["kinks"].append(x > 0)


def relu(x) -> Tensor:
    x = tensor(x)
    _log_kink(x.data)
    mask = x.data > 0

    def bw(g):
        _accum(x, g * mask)

    return _make(x.data * mask, (x,), bw)


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = tensor(x)
    _log_kink(x.data)
    scale = np.where(x.data > 0, 1.0, slope)

    def bw(g):
        _accum(x, g * scale)

    return _make(x.data * scale, (x,), bw)


def softplus(x) -> Tensor:
    x = tensor(x)

    def bw(g):
        _accum(x, g * expit(x.data))

    return _make(np.logaddexp(0.0, x.data), (x,), bw)


def sigmoid(x) -> Tensor:
    x = tensor(x)
    out = expit(x.data)

    def bw(g):
        _accum(x, g * out * (1.0 - out))

    return _make(out, (x,), bw)


def exp(x) -> Tensor:
    x = tensor(x)
    out = np.exp(x.data)

    def bw(g):
        _accum(x, g * out)

    return _make(out, (x,), bw)


def square(x) -> Tensor:
    x = tensor(x)

    def bw(g):
        _accum(x, 2.0 * g * x.data)

    return _make(x.data * x.data, (x,), bw)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = tensor(x)
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g, shape))

    return _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), bw)


def mean(x, axis=None) -> Tensor:
    x = tensor(x)
    n = x.data.size if axis is None else x.shape[axis]
    return mul(sum(x, axis=axis), 1.0 / n)


ACTIVATIONS = {
    "identity": lambda x: x,
    "relu": relu,
    "softplus": softplus,
    "sigmoid": sigmoid,
}


def as_sparse(A) -> sparse.csr_matrix:
    return sparse.csr_matrix(A)
