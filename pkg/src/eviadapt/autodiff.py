"""Reverse-mode automatic differentiation over float64 numpy arrays.

A Tensor records the operations applied to it on a per-step tape (the graph
is rebuilt on every forward pass). Calling backward() on a scalar result
accumulates gradients into every reachable Tensor created with
requires_grad=True. Tensors with requires_grad=False are constants: no
gradient ever flows into them, which is how frozen model parameters are
excluded from training.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import digamma, expit, gammaln

from .errors import NumericalError

Array = np.ndarray


def _as_f64(value) -> Array:
    return np.asarray(value, dtype=np.float64)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a broadcast gradient back down to the original operand shape."""
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
    """A differentiable float64 array node in the computation record."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_f64(data)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[Array], None] | None = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _result(data: Array, parents: Sequence["Tensor"],
                backward: Callable[[Array], None]) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, grad: Array) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    # -- backward pass --------------------------------------------------------

    def backward(self) -> None:
        """Backpropagate from a scalar output through the recorded graph."""
        if self.size != 1:
            raise ValueError(f"backward() requires a scalar output, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, Array] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            node._backward_into(g, grads)

    def _backward_into(self, grad: Array, grads: dict[int, Array]) -> None:
        # _backward produces one gradient per parent, in parent order
        for parent, pgrad in zip(self._parents, self._backward(grad)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pgrad
            else:
                grads[key] = pgrad

    # -- arithmetic -----------------------------------------------------------

    def _coerce(self, other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    def __add__(self, other):
        other = self._coerce(other)
        data = self.data + other.data
        return Tensor._result(data, (self, other), lambda g: (
            _unbroadcast(g, self.shape), _unbroadcast(g, other.shape)))

    __radd__ = __add__

    def __neg__(self):
        return Tensor._result(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        other = self._coerce(other)
        data = self.data - other.data
        return Tensor._result(data, (self, other), lambda g: (
            _unbroadcast(g, self.shape), _unbroadcast(-g, other.shape)))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        other = self._coerce(other)
        data = self.data * other.data
        return Tensor._result(data, (self, other), lambda g: (
            _unbroadcast(g * other.data, self.shape),
            _unbroadcast(g * self.data, other.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        data = self.data / other.data
        return Tensor._result(data, (self, other), lambda g: (
            _unbroadcast(g / other.data, self.shape),
            _unbroadcast(-g * self.data / other.data ** 2, other.shape)))

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def __matmul__(self, other):
        other = self._coerce(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ValueError(
                f"matmul expects 2-d operands, got {self.shape} @ {other.shape}")
        if self.shape[1] != other.shape[0]:
            raise ValueError(f"matmul shape mismatch: {self.shape} @ {other.shape}")
        data = self.data @ other.data
        return Tensor._result(data, (self, other), lambda g: (
            g @ other.data.T, self.data.T @ g))

    def __getitem__(self, index):
        data = self.data[index]

        def backward(g):
            full = np.zeros_like(self.data)
            np.add.at(full, index, g)
            return (full,)

        return Tensor._result(data, (self,), backward)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        data = self.data.reshape(shape)
        return Tensor._result(data, (self,), lambda g: (g.reshape(self.shape),))

    # -- reductions -----------------------------------------------------------

    def sum(self, axis=None):
        data = self.data.sum(axis=axis)

        def backward(g):
            if axis is None:
                return (np.broadcast_to(g, self.shape).copy(),)
            g_expanded = np.expand_dims(g, axis)
            return (np.broadcast_to(g_expanded, self.shape).copy(),)

        return Tensor._result(data, (self,), backward)

    def mean(self, axis=None):
        n = self.size if axis is None else self.shape[axis]
        return self.sum(axis=axis) / float(n)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


# -- elementwise primitives ---------------------------------------------------

def exp(x: Tensor) -> Tensor:
    data = np.exp(x.data)
    return Tensor._result(data, (x,), lambda g: (g * data,))


def log(x: Tensor) -> Tensor:
    data = np.log(x.data)
    return Tensor._result(data, (x,), lambda g: (g / x.data,))


def log_gamma(x: Tensor) -> Tensor:
    data = gammaln(x.data)
    return Tensor._result(data, (x,), lambda g: (g * digamma(x.data),))


def square(x: Tensor) -> Tensor:
    return Tensor._result(x.data ** 2, (x,), lambda g: (g * 2.0 * x.data,))


def sqrt(x: Tensor) -> Tensor:
    data = np.sqrt(x.data)
    return Tensor._result(data, (x,), lambda g: (g * 0.5 / data,))


def sigmoid(x: Tensor) -> Tensor:
    data = expit(x.data)
    return Tensor._result(data, (x,), lambda g: (g * data * (1.0 - data),))


def tanh(x: Tensor) -> Tensor:
    data = np.tanh(x.data)
    return Tensor._result(data, (x,), lambda g: (g * (1.0 - data ** 2),))


def softplus(x: Tensor) -> Tensor:
    data = np.logaddexp(0.0, x.data)
    return Tensor._result(data, (x,), lambda g: (g * expit(x.data),))


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; at ties the subgradient goes entirely to the first argument."""
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = b if isinstance(b, Tensor) else Tensor(b)
    data = np.maximum(a.data, b.data)
    mask = a.data >= b.data

    def backward(g):
        return (_unbroadcast(g * mask, a.shape),
                _unbroadcast(g * ~mask, b.shape))

    return Tensor._result(data, (a, b), backward)


def concatenate(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(piece)
                     for piece in np.split(g, splits, axis=axis))

    return Tensor._result(data, tuple(tensors), backward)


# -- verification -------------------------------------------------------------

def gradient_check(f: Callable[..., Tensor], points, step: float = 1e-4) -> float:
    """Compare analytic gradients of a scalar function against central differences.

    ``points`` is one Tensor or a sequence of Tensors; each is treated as a
    trainable input of ``f``. Returns the maximum over all coordinates of
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    if isinstance(points, Tensor):
        points = [points]
    points = list(points)
    for p in points:
        p.requires_grad = True
        p.zero_grad()
    out = f(*points)
    if out.size != 1:
        raise ValueError(f"gradient_check needs a scalar function, got shape {out.shape}")
    out.backward()
    worst = 0.0
    for pi, p in enumerate(points):
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for ci in range(flat.size):
            orig = flat[ci]
            flat[ci] = orig + step
            hi = float(f(*points).data)
            flat[ci] = orig - step
            lo = float(f(*points).data)
            flat[ci] = orig
            numeric = (hi - lo) / (2.0 * step)
            ana = float(analytic.reshape(-1)[ci])
            if not np.isfinite(ana) or not np.isfinite(numeric):
                raise NumericalError(
                    f"non-finite gradient at input {pi} coordinate {ci}: "
                    f"analytic={ana}, numeric={numeric}")
            err = abs(ana - numeric) / max(abs(ana), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
