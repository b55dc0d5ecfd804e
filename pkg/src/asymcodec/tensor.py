"""Dense tensors with a reverse-mode gradient tape.

A ``Tensor`` wraps a numpy array. Operations on tensors that require
gradients record a closure mapping the output gradient to the input
gradients; ``Tensor.backward`` replays those closures in reverse
topological order and accumulates into the ``grad`` of leaf tensors.

Working precision is float32. ``precision("float64")`` switches the dtype
used for newly created tensors, which the gradient checks rely on.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterator, Optional, Sequence, Union

import numpy as np
from scipy.special import expit

from .errors import NumericError, UsageError

ArrayLike = Union[np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class _State(threading.local):
    def __init__(self) -> None:
        self.grad_enabled = True
        self.dtype = np.dtype(np.float32)
        self.mac_counter: Optional["MacCounter"] = None


_state = _State()


def default_dtype() -> np.dtype:
    return _state.dtype


@contextmanager
def precision(dtype: Union[str, type, np.dtype]) -> Iterator[None]:
    """Temporarily change the dtype of newly created tensors."""
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise UsageError(f"unsupported precision {dt}")
    old = _state.dtype
    _state.dtype = dt
    try:
        yield
    finally:
        _state.dtype = old


@contextmanager
def no_grad() -> Iterator[None]:
    old = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = old


def grad_enabled() -> bool:
    return _state.grad_enabled


class MacCounter:
    """Accumulates multiply-accumulates reported by the contraction kernels."""

    def __init__(self) -> None:
        self.total = 0

    def add(self, n: int) -> None:
        self.total += int(n)


@contextmanager
def count_macs() -> Iterator[MacCounter]:
    counter = MacCounter()
    old = _state.mac_counter
    _state.mac_counter = counter
    try:
        yield counter
    finally:
        _state.mac_counter = old


def record_macs(n: int) -> None:
    if _state.mac_counter is not None:
        _state.mac_counter.add(n)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __array_priority__ = 100

    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype=None) -> None:
        if isinstance(data, Tensor):
            data = data.data
        target = np.dtype(dtype) if dtype is not None else _state.dtype
        self.data: np.ndarray = np.array(data, dtype=target, copy=True)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardFn] = None

    @classmethod
    def from_op(
        cls,
        data: np.ndarray,
        parents: Sequence["Tensor"],
        backward: BackwardFn,
    ) -> "Tensor":
        """Wrap an op result, recording ``backward`` if any parent needs gradients."""
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        needs = _state.grad_enabled and any(p.requires_grad for p in parents)
        out.requires_grad = needs
        out._parents = tuple(parents) if needs else ()
        out._backward = backward if needs else None
        return out

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    # -- autodiff --------------------------------------------------------
    def backward(self) -> None:
        if self.data.size != 1:
            raise UsageError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not np.isfinite(self.data).all():
            raise NumericError("loss is not finite")
        if not self.requires_grad:
            return

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- arithmetic ------------------------------------------------------
    def __add__(self, other) -> "Tensor":
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other) -> "Tensor":
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        return div(self, other)

    def __rtruediv__(self, other) -> "Tensor":
        return div(other, self)

    def __neg__(self) -> "Tensor":
        return mul(self, -1.0)

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, index) -> "Tensor":
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis, keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


class Parameter(Tensor):
    """A named, trainable leaf tensor. Frozen parameters never receive gradients."""

    def __init__(self, data: ArrayLike, name: str = "", frozen: bool = False) -> None:
        super().__init__(data, requires_grad=not frozen)
        self.name = name
        self._frozen = frozen

    @property
    def frozen(self) -> bool:
        return self._frozen

    @frozen.setter
    def frozen(self, value: bool) -> None:
        self._frozen = bool(value)
        self.requires_grad = not self._frozen
        if self._frozen:
            self.grad = None

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, frozen={self.frozen})"


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


# -- elementwise ---------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor.from_op(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor.from_op(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        a, b = as_tensor(a), float(b)
        return Tensor.from_op(a.data * b, (a,), lambda g: (g * b,))
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor.from_op(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return Tensor.from_op(a.data / b.data, (a, b), backward)


def square(x: Tensor) -> Tensor:
    return Tensor.from_op(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor.from_op(out, (x,), lambda g: (g * out,))


def log2(x: Tensor) -> Tensor:
    return Tensor.from_op(
        np.log2(x.data), (x,), lambda g: (g / (x.data * np.log(2.0)),)
    )


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    pos = x.data > 0
    out = np.where(pos, x.data, x.data * slope)
    return Tensor.from_op(out, (x,), lambda g: (np.where(pos, g, g * slope),))


def softplus(x: Tensor) -> Tensor:
    d = x.data
    out = np.log1p(np.exp(-np.abs(d))) + np.maximum(d, 0)

    def backward(g):
        return (g * expit(d),)

    return Tensor.from_op(out, (x,), backward)


def lower_bound(x: Tensor, bound: float) -> Tensor:
    """``max(x, bound)``; gradients still flow where they push ``x`` upward."""
    d = x.data
    out = np.maximum(d, bound).astype(d.dtype, copy=False)

    def backward(g):
        return (np.where((d >= bound) | (g < 0), g, 0).astype(g.dtype, copy=False),)

    return Tensor.from_op(out, (x,), backward)


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    d = x.data
    out = np.clip(d, lo, hi)
    inside = (d >= lo) & (d <= hi)
    return Tensor.from_op(out, (x,), lambda g: (np.where(inside, g, 0).astype(g.dtype),))


# -- reductions and shape ----------------------------------------------

def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor.from_op(np.asarray(out), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(tsum(x, axis, keepdims), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    return Tensor.from_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return Tensor.from_op(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def getitem(x: Tensor, index) -> Tensor:
    def backward(g):
        out = np.zeros_like(x.data)
        out[index] = g
        return (out,)

    return Tensor.from_op(x.data[index], (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return [
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
            for i in range(len(tensors))
        ]

    return Tensor.from_op(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def roll(x: Tensor, shifts: Sequence[int], axes: Sequence[int]) -> Tensor:
    shifts, axes = tuple(shifts), tuple(axes)
    back = tuple(-s for s in shifts)
    return Tensor.from_op(
        np.roll(x.data, shifts, axes), (x,), lambda g: (np.roll(g, back, axes),)
    )


def take(table: Tensor, index: np.ndarray) -> Tensor:
    """Gather rows of ``table`` along axis 0."""

    def backward(g):
        out = np.zeros_like(table.data)
        np.add.at(out, index, g)
        return (out,)

    return Tensor.from_op(table.data[index], (table,), backward)


# -- contractions ----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = np.matmul(a.data, b.data)
    record_macs(out.size * a.shape[-1])

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor.from_op(out, (a, b), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor.from_op(y, (x,), backward)
