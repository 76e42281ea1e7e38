"""Reverse-mode automatic differentiation over numpy arrays.

Eager ops build a DAG of `Tensor` nodes; `backward()` on a scalar root
accumulates dLoss/dX into every tensor created with ``requires_grad``.
Every op checks its result for NaN/Inf unless the guard is disabled.
"""

from __future__ import annotations

import numpy as np

from ..errors import InvalidGraph, NumericGuardTripped, ShapeMismatch

_finite_guard = True


def set_finite_guard(enabled: bool) -> None:
    """Toggle the per-op NaN/Inf check (on by default)."""
    global _finite_guard
    _finite_guard = bool(enabled)


def _check_finite(data: np.ndarray, op: str) -> None:
    if _finite_guard and not np.all(np.isfinite(data)):
        raise NumericGuardTripped(f"non-finite values produced by {op}")


class Tensor:
    """A numpy array plus an optional gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn", "_done")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn = None
        self._done = False

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _wrap(value) -> "Tensor":
        return value if isinstance(value, Tensor) else Tensor(value)

    @staticmethod
    def _from_op(data: np.ndarray, parents: tuple["Tensor", ...], grad_fn, op: str) -> "Tensor":
        _check_finite(data, op)
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = parents if out.requires_grad else ()
        out._grad_fn = grad_fn if out.requires_grad else None
        out._done = False
        return out

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    # -- introspection --------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    # -- backward -------------------------------------------------------------

    def backward(self) -> None:
        """Accumulate gradients of this scalar into all tracked ancestors."""
        if self.data.size != 1:
            raise InvalidGraph("backward requires a scalar root")
        if self._done:
            raise InvalidGraph("backward already ran on this graph root")
        if not self.requires_grad:
            raise InvalidGraph("root does not depend on any tracked tensor")
        self._done = True

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))

        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._grad_fn is not None and node.grad is not None:
                node._grad_fn(node.grad)

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, Tensor._wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, Tensor._wrap(other))

    def __rsub__(self, other):
        return sub(Tensor._wrap(other), self)

    def __mul__(self, other):
        return mul(self, Tensor._wrap(other))

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("divide by a plain scalar; tensor division is unsupported")
        return mul(self, Tensor(1.0 / other))

    def __matmul__(self, other):
        return matmul(self, Tensor._wrap(other))

    def __getitem__(self, idx):
        return getitem(self, idx)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def grad_fn(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return Tensor._from_op(data, (a, b), grad_fn, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def grad_fn(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(-_unbroadcast(g, b.data.shape))

    return Tensor._from_op(data, (a, b), grad_fn, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def grad_fn(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return Tensor._from_op(data, (a, b), grad_fn, "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeMismatch("matmul expects 2-D operands")
    data = a.data @ b.data

    def grad_fn(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return Tensor._from_op(data, (a, b), grad_fn, "matmul")


def square(a: Tensor) -> Tensor:
    data = a.data * a.data

    def grad_fn(g):
        if a.requires_grad:
            a._accumulate(2.0 * a.data * g)

    return Tensor._from_op(data, (a,), grad_fn, "square")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def grad_fn(g):
        if a.requires_grad:
            a._accumulate(g * (1.0 - y * y))

    return Tensor._from_op(y, (a,), grad_fn, "tanh")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)

    def grad_fn(g):
        if a.requires_grad:
            a._accumulate(g * y * (1.0 - y))

    return Tensor._from_op(y, (a,), grad_fn, "sigmoid")


def relu(a: Tensor) -> Tensor:
    y = np.maximum(a.data, 0.0)

    def grad_fn(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > 0.0))

    return Tensor._from_op(y, (a,), grad_fn, "relu")


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.data.shape))
            return
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(gg, a.data.shape))

    return Tensor._from_op(np.asarray(data), (a,), grad_fn, "sum")


def tmean(a: Tensor) -> Tensor:
    return tsum(a) / a.data.size


def frobenius_sq(a: Tensor) -> Tensor:
    """Sum of squared entries."""
    return tsum(square(a))


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def grad_fn(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.data.shape))

    return Tensor._from_op(data, (a,), grad_fn, "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    data = np.transpose(a.data, axes)
    inverse = None if axes is None else np.argsort(axes)

    def grad_fn(g):
        if a.requires_grad:
            a._accumulate(np.transpose(g, inverse))

    return Tensor._from_op(data, (a,), grad_fn, "transpose")


def getitem(a: Tensor, idx) -> Tensor:
    """Basic (slice/int/ellipsis) indexing only: each element selected once."""
    data = a.data[idx]

    def grad_fn(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[idx] += g
            a._accumulate(full)

    return Tensor._from_op(data, (a,), grad_fn, "getitem")


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return Tensor._from_op(data, tuple(tensors), grad_fn, "concat")


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; scale kept units by 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise InvalidGraph(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return a
    keep = (rng.random(a.data.shape) >= rate) / (1.0 - rate)
    data = a.data * keep

    def grad_fn(g):
        if a.requires_grad:
            a._accumulate(g * keep)

    return Tensor._from_op(data, (a,), grad_fn, "dropout")
