"""A minimal reverse-mode automatic differentiation tape over numpy arrays.

Only the handful of operations the model needs are provided. Every op accepts
arrays with arbitrary leading batch dimensions and broadcasts like numpy; the
backward pass sums gradients back down to each operand's shape.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """An ndarray value plus the closure that pushes its gradient to parents."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")
    # make ``ndarray <op> Tensor`` defer to the Tensor's reflected operator
    __array_ufunc__ = None

    def __init__(self, value, requires_grad: bool = False,
                 parents: Sequence["Tensor"] = (),
                 backward: Callable[[np.ndarray], None] | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = tuple(parents) if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        grad = _unbroadcast(grad, self.value.shape)
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64, copy=True)
        else:
            self.grad += grad

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Back-propagate from this tensor (a scalar unless ``grad`` is given)."""
        if grad is None:
            if self.value.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar")
            grad = np.ones_like(self.value)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self._accumulate(np.asarray(grad, dtype=np.float64))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(as_tensor(other), self)

    def __getitem__(self, key):
        return getitem(self, key)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.value + b.value, parents=(a, b))
    if out.requires_grad:
        out._backward = lambda g: (a._accumulate(g), b._accumulate(g))
    return out


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.value, parents=(a,))
    if out.requires_grad:
        out._backward = lambda g: a._accumulate(-g)
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.value * b.value, parents=(a, b))
    if out.requires_grad:
        def backward(g):
            a._accumulate(g * b.value)
            b._accumulate(g * a.value)
        out._backward = backward
    return out


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")
    out = Tensor(a.value @ b.value, parents=(a, b))
    if out.requires_grad:
        def backward(g):
            a._accumulate(g @ np.swapaxes(b.value, -1, -2))
            b._accumulate(np.swapaxes(a.value, -1, -2) @ g)
        out._backward = backward
    return out


def transpose(a: Tensor) -> Tensor:
    out = Tensor(np.swapaxes(a.value, -1, -2), parents=(a,))
    if out.requires_grad:
        out._backward = lambda g: a._accumulate(np.swapaxes(g, -1, -2))
    return out


def sigmoid(a: Tensor) -> Tensor:
    # branch-free stable form: 0.5 * (1 + tanh(x / 2))
    s = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    out = Tensor(s, parents=(a,))
    if out.requires_grad:
        out._backward = lambda g: a._accumulate(g * s * (1.0 - s))
    return out


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.value)
    out = Tensor(t, parents=(a,))
    if out.requires_grad:
        out._backward = lambda g: a._accumulate(g * (1.0 - t * t))
    return out


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.value), parents=(a,))
    if out.requires_grad:
        out._backward = lambda g: a._accumulate(g / a.value)
    return out


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.value >= lo) & (a.value <= hi)
    out = Tensor(np.clip(a.value, lo, hi), parents=(a,))
    if out.requires_grad:
        out._backward = lambda g: a._accumulate(g * inside)
    return out


def total(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.value.sum(axis=axis, keepdims=keepdims), parents=(a,))
    if out.requires_grad:
        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.value.shape))
        out._backward = backward
    return out


def mean(a: Tensor) -> Tensor:
    return mul(total(a), 1.0 / a.value.size)


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.value for t in tensors], axis=axis), parents=tensors)
    if out.requires_grad:
        sizes = np.cumsum([t.value.shape[axis] for t in tensors])[:-1]

        def backward(g):
            for t, piece in zip(tensors, np.split(g, sizes, axis=axis)):
                t._accumulate(piece)
        out._backward = backward
    return out


def getitem(a: Tensor, key) -> Tensor:
    out = Tensor(a.value[key], parents=(a,))
    if out.requires_grad:
        def backward(g):
            full = np.zeros_like(a.value)
            np.add.at(full, key, g)
            a._accumulate(full)
        out._backward = backward
    return out


def take_rows(table: Tensor, index: np.ndarray) -> Tensor:
    """Embedding lookup: ``table[index]`` with scatter-add backward."""
    index = np.asarray(index, dtype=np.intp)
    out = Tensor(table.value[index], parents=(table,))
    if out.requires_grad:
        def backward(g):
            full = np.zeros_like(table.value)
            np.add.at(full, index, g)
            table._accumulate(full)
        out._backward = backward
    return out


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(p, parents=(a,))
    if out.requires_grad:
        def backward(g):
            a._accumulate(p * (g - (g * p).sum(axis=axis, keepdims=True)))
        out._backward = backward
    return out


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    res = shifted - lse
    out = Tensor(res, parents=(a,))
    if out.requires_grad:
        p = np.exp(res)

        def backward(g):
            a._accumulate(g - p * g.sum(axis=axis, keepdims=True))
        out._backward = backward
    return out


def reshape(a: Tensor, shape: tuple) -> Tensor:
    out = Tensor(a.value.reshape(shape), parents=(a,))
    if out.requires_grad:
        out._backward = lambda g: a._accumulate(g.reshape(a.value.shape))
    return out


def expand_dims(a: Tensor, axis: int) -> Tensor:
    return reshape(a, np.expand_dims(a.value, axis).shape)


def as_rows(x) -> Tensor:
    """Promote a 1-D vector to a (1, n) row; leave 2-D+ input alone."""
    x = as_tensor(x)
    return reshape(x, (1, x.shape[0])) if x.ndim == 1 else x
