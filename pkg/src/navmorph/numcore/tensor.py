"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations performed while a :class:`Tape` is active are appended to it in
execution order, so walking the tape backwards is a valid reverse
topological order.  Outside a tape every operation is a plain numpy
computation and nothing is recorded.
"""

from __future__ import annotations

import contextlib
import contextvars
from typing import Callable, Iterable, Sequence

import numpy as np

from navmorph.errors import DimensionError, NonFiniteError, UsageError

_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "navmorph_active_tape", default=None
)

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class _Node:
    __slots__ = ("out", "parents", "backward", "op")

    def __init__(self, out, parents, backward, op):
        self.out = out
        self.parents = parents
        self.backward = backward
        self.op = op


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; operations whose inputs require gradients are
    recorded while it is active.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._tokens: list[contextvars.Token] = []

    def __enter__(self) -> "Tape":
        self._tokens.append(_ACTIVE_TAPE.set(self))
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._tokens.pop())

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, output: "Tensor") -> None:
        """Accumulate d(output)/d(leaf) into ``leaf.grad`` for every leaf
        that requires a gradient.  ``output`` must hold a single value."""
        if output.data.size != 1:
            raise UsageError(
                f"backward needs a scalar output, got shape {output.shape}"
            )
        if not output.requires_grad:
            return
        if output._node is None:
            output._accumulate(np.ones_like(output.data))
            return
        pending: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
        for node in reversed(self.nodes):
            g = pending.pop(id(node.out), None)
            if g is None:
                continue
            parent_grads = node.backward(g)
            for parent, pg in zip(node.parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if not np.all(np.isfinite(pg)):
                    raise NonFiniteError(f"non-finite gradient in backward of '{node.op}'")
                if parent._node is None:
                    parent._accumulate(pg)
                else:
                    key = id(parent)
                    prev = pending.get(key)
                    pending[key] = pg if prev is None else prev + pg


def backward(tape: Tape, output: "Tensor") -> None:
    tape.backward(output)


@contextlib.contextmanager
def no_grad():
    """Suspend recording for the enclosed block."""
    token = _ACTIVE_TAPE.set(None)
    try:
        yield
    finally:
        _ACTIVE_TAPE.reset(token)


def active_tape() -> Tape | None:
    return _ACTIVE_TAPE.get()


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _as_tensor(x) -> "Tensor":
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents: tuple, backward: BackwardFn, op: str) -> "Tensor":
    data = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite value produced by '{op}'")
    out = Tensor.__new__(Tensor)
    out.data, out.requires_grad, out.grad, out._node = data, False, None, None
    tape = _ACTIVE_TAPE.get()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._node = _Node(out, parents, backward, op)
        tape.nodes.append(out._node)
    return out


class Tensor:
    """A float64 array that may take part in differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "_node", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._node: _Node | None = None

    # -- basics ---------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        g = _unbroadcast(g, self.data.shape).reshape(self.data.shape)
        self.grad = g.copy() if self.grad is None else self.grad + g

    # -- arithmetic -----------------------------------------------------
    def __add__(self, other):
        other = _as_tensor(other)
        a, b = self.shape, other.shape
        return _result(
            self.data + other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)),
            "add",
        )

    __radd__ = __add__

    def __sub__(self, other):
        other = _as_tensor(other)
        a, b = self.shape, other.shape
        return _result(
            self.data - other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a), -_unbroadcast(g, b)),
            "sub",
        )

    def __rsub__(self, other):
        return _as_tensor(other) - self

    def __mul__(self, other):
        other = _as_tensor(other)
        x, y = self.data, other.data
        return _result(
            x * y,
            (self, other),
            lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)),
            "mul",
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _as_tensor(other)
        x, y = self.data, other.data
        return _result(
            x / y,
            (self, other),
            lambda g: (
                _unbroadcast(g / y, x.shape),
                _unbroadcast(-g * x / (y * y), y.shape),
            ),
            "div",
        )

    def __rtruediv__(self, other):
        return _as_tensor(other) / self

    def __neg__(self):
        return _result(-self.data, (self,), lambda g: (-g,), "neg")

    def __pow__(self, exponent: float):
        if isinstance(exponent, Tensor):
            raise UsageError("only constant exponents are supported")
        x = self.data
        p = float(exponent)
        return _result(x**p, (self,), lambda g: (g * p * x ** (p - 1.0),), "pow")

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        x_shape = self.shape

        def back(g):
            full = np.zeros(x_shape)
            np.add.at(full, index, g)
            return (full,)

        return _result(self.data[index], (self,), back, "getitem")

    # -- reductions -----------------------------------------------------
    def sum(self, axis=None):
        shape = self.shape

        def back(g):
            if axis is not None:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return _result(self.data.sum(axis=axis), (self,), back, "sum")

    def mean(self, axis=None):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)

    # -- elementwise ----------------------------------------------------
    def exp(self):
        y = np.exp(self.data)
        return _result(y, (self,), lambda g: (g * y,), "exp")

    def log(self):
        x = self.data
        with np.errstate(divide="ignore", invalid="ignore"):
            y = np.log(x)
        return _result(y, (self,), lambda g: (g / x,), "log")

    def tanh(self):
        y = np.tanh(self.data)
        return _result(y, (self,), lambda g: (g * (1.0 - y * y),), "tanh")

    def sigmoid(self):
        y = 0.5 * (1.0 + np.tanh(0.5 * self.data))
        return _result(y, (self,), lambda g: (g * y * (1.0 - y),), "sigmoid")

    def softplus(self):
        x = self.data
        y = np.logaddexp(0.0, x)
        return _result(
            y, (self,), lambda g: (g * 0.5 * (1.0 + np.tanh(0.5 * x)),), "softplus"
        )

    def sqrt(self):
        with np.errstate(invalid="ignore"):
            y = np.sqrt(self.data)
        return _result(y, (self,), lambda g: (g * 0.5 / y,), "sqrt")

    def square(self):
        x = self.data
        return _result(x * x, (self,), lambda g: (2.0 * g * x,), "square")

    def norm(self, axis: int = -1):
        """Euclidean norm along ``axis``; the gradient at zero is taken as 0."""
        x = self.data
        n = np.sqrt((x * x).sum(axis=axis))

        def back(g):
            nn = np.expand_dims(n, axis)
            safe = np.where(nn > 0.0, nn, 1.0)
            return (np.where(nn > 0.0, np.expand_dims(g, axis) * x / safe, 0.0),)

        return _result(n, (self,), back, "norm")

    def reshape(self, *shape):
        old = self.shape
        return _result(
            self.data.reshape(*shape), (self,), lambda g: (g.reshape(old),), "reshape"
        )


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")
    x, y = a.data, b.data

    def back(g):
        if y.ndim == 1:
            return np.outer(g, y), x.T @ g
        return g @ y.T, x.T @ g

    return _result(x @ y, (a, b), back, "matmul")


def concat(parts: Iterable, axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(
        np.concatenate([p.data for p in parts], axis=axis), tuple(parts), back, "concat"
    )


def stack(parts: Iterable, axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(parts)))

    return _result(np.stack([p.data for p in parts], axis=axis), tuple(parts), back, "stack")


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(*shape) -> Tensor:
    return Tensor(np.zeros(shape))
