"""Reverse-mode differentiation over float64 numpy arrays.

Each :class:`Tensor` produced by an operation remembers its inputs and a
closure that pushes its gradient back to them.  :meth:`Tensor.backward`
walks the recorded graph in reverse topological order.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Tensor", "as_tensor", "stack", "concat", "where"]


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str = "",
                 _parents: tuple = (), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape})"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    # ------------------------------------------------------------------
    # graph plumbing

    def _make(self, data, parents, backward) -> "Tensor":
        req = any(p.requires_grad for p in parents)
        return Tensor(data, req, _parents=parents if req else (), _backward=backward if req else None)

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.asarray(grad, dtype=np.float64))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if node._parents:
                    # intermediate gradients are no longer needed
                    node.grad = None if node is not self else node.grad

    def zero_grad(self) -> None:
        self.grad = None

    # ------------------------------------------------------------------
    # elementwise arithmetic

    def __add__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def back(g):
            a._accumulate(_unbroadcast(g, a.shape))
            b._accumulate(_unbroadcast(g, b.shape))
        return self._make(a.data + b.data, (a, b), back)

    __radd__ = __add__

    def __neg__(self):
        a = self

        def back(g):
            a._accumulate(-g)
        return self._make(-a.data, (a,), back)

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def back(g):
            a._accumulate(_unbroadcast(g * b.data, a.shape))
            b._accumulate(_unbroadcast(g * a.data, b.shape))
        return self._make(a.data * b.data, (a, b), back)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def back(g):
            a._accumulate(_unbroadcast(g / b.data, a.shape))
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))
        return self._make(a.data / b.data, (a, b), back)

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent: float):
        a = self
        exponent = float(exponent)
        out = a.data ** exponent

        def back(g):
            a._accumulate(g * exponent * a.data ** (exponent - 1.0))
        return self._make(out, (a,), back)

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def back(g):
            if a.requires_grad:
                ga = g @ np.swapaxes(b.data, -1, -2) if b.ndim > 1 else np.multiply.outer(g, b.data)
                a._accumulate(_unbroadcast(ga, a.shape))
            if b.requires_grad:
                if a.ndim == 1:
                    gb = np.multiply.outer(a.data, g)
                else:
                    gb = np.swapaxes(a.data, -1, -2) @ g
                b._accumulate(_unbroadcast(gb, b.shape))
        return self._make(a.data @ b.data, (a, b), back)

    # ------------------------------------------------------------------
    # unary maps

    def exp(self):
        a = self
        out = np.exp(a.data)

        def back(g):
            a._accumulate(g * out)
        return self._make(out, (a,), back)

    def log(self):
        a = self

        def back(g):
            a._accumulate(g / a.data)
        return self._make(np.log(a.data), (a,), back)

    def tanh(self):
        a = self
        out = np.tanh(a.data)

        def back(g):
            a._accumulate(g * (1.0 - out * out))
        return self._make(out, (a,), back)

    def sigmoid(self):
        a = self
        out = 0.5 * (1.0 + np.tanh(0.5 * a.data))

        def back(g):
            a._accumulate(g * out * (1.0 - out))
        return self._make(out, (a,), back)

    def relu(self):
        a = self
        mask = a.data > 0

        def back(g):
            a._accumulate(g * mask)
        return self._make(a.data * mask, (a,), back)

    # ------------------------------------------------------------------
    # reductions and shape

    def sum(self, axis=None, keepdims: bool = False):
        a = self

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.shape))
        return self._make(a.data.sum(axis=axis, keepdims=keepdims), (a,), back)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod([self.shape[i] for i in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def reshape(self, *shape):
        a = self
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])

        def back(g):
            a._accumulate(g.reshape(a.shape))
        return self._make(a.data.reshape(shape), (a,), back)

    def transpose(self, *axes):
        a = self
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        axes = axes or tuple(reversed(range(a.ndim)))
        inverse = tuple(np.argsort(axes))

        def back(g):
            a._accumulate(g.transpose(inverse))
        return self._make(a.data.transpose(axes), (a,), back)

    @property
    def T(self):
        return self.transpose()

    def __getitem__(self, index):
        a = self

        def back(g):
            full = np.zeros_like(a.data)
            np.add.at(full, index, g)
            a._accumulate(full)
        return self._make(a.data[index], (a,), back)

    def take_rows(self, ids) -> "Tensor":
        """Row gather ``self[ids]`` for an integer array of any shape (embedding lookup)."""
        a = self
        ids = np.asarray(ids, dtype=np.int64)

        def back(g):
            full = np.zeros_like(a.data)
            np.add.at(full, ids, g)
            a._accumulate(full)
        return self._make(a.data[ids], (a,), back)

    # ------------------------------------------------------------------
    # normalized exponentials

    def softmax(self, axis: int = -1):
        a = self
        shifted = a.data - a.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=axis, keepdims=True)

        def back(g):
            a._accumulate(out * (g - (g * out).sum(axis=axis, keepdims=True)))
        return self._make(out, (a,), back)

    def log_softmax(self, axis: int = -1):
        a = self
        shifted = a.data - a.data.max(axis=axis, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        out = shifted - lse
        probs = np.exp(out)

        def back(g):
            a._accumulate(g - probs * g.sum(axis=axis, keepdims=True))
        return self._make(out, (a,), back)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.stack([t.data for t in tensors], axis=axis)

    def back(g):
        for k, t in enumerate(tensors):
            t._accumulate(np.take(g, k, axis=axis))
    return tensors[0]._make(data, tuple(tensors), back)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        for t, piece in zip(tensors, np.split(g, bounds, axis=axis)):
            t._accumulate(piece)
    return tensors[0]._make(data, tuple(tensors), back)


def where(mask, a, b) -> Tensor:
    """Elementwise select with a constant boolean mask."""
    mask = np.asarray(mask, dtype=bool)
    return as_tensor(a) * mask.astype(np.float64) + as_tensor(b) * (~mask).astype(np.float64)
