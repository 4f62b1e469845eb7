"""Dense float64 tensors with reverse-mode automatic differentiation.

A small eager engine: every operation computes its value immediately and,
while gradients are enabled, remembers how to push an upstream gradient back
to its inputs. ``Tensor.backward`` replays those closures in reverse
topological order, accumulating gradients on every tensor that requires them.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

__all__ = [
    "Tensor",
    "ComputationRecord",
    "ShapeError",
    "no_grad",
    "matmul",
    "relu",
    "softened_softmax",
    "log_softmax",
    "cross_entropy",
    "gather_cols",
]


class ShapeError(ValueError):
    """Operand shapes cannot be combined, or a scalar was required."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, frozen models)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
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
    """A dense n-dimensional float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def T(self) -> "Tensor":
        return self.permute((1, 0))

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """A view of the same values cut off from the recorded graph."""
        return Tensor(self.data)

    def clear_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- graph construction --------------------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, parents: Sequence["Tensor"], backward: Callable) -> "Tensor":
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @staticmethod
    def _lift(value: Union["Tensor", float, int, np.ndarray]) -> "Tensor":
        return value if isinstance(value, Tensor) else Tensor(value)

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other):
        other = Tensor._lift(other)
        data = self.data + other.data
        return Tensor._from_op(
            data,
            (self, other),
            lambda g: (_unbroadcast(g, self.shape), _unbroadcast(g, other.shape)),
        )

    __radd__ = __add__

    def __neg__(self):
        return Tensor._from_op(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        other = Tensor._lift(other)
        data = self.data - other.data
        return Tensor._from_op(
            data,
            (self, other),
            lambda g: (_unbroadcast(g, self.shape), _unbroadcast(-g, other.shape)),
        )

    def __rsub__(self, other):
        return Tensor._lift(other) - self

    def __mul__(self, other):
        other = Tensor._lift(other)
        data = self.data * other.data
        return Tensor._from_op(
            data,
            (self, other),
            lambda g: (
                _unbroadcast(g * other.data, self.shape),
                _unbroadcast(g * self.data, other.shape),
            ),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._lift(other)
        data = self.data / other.data
        return Tensor._from_op(
            data,
            (self, other),
            lambda g: (
                _unbroadcast(g / other.data, self.shape),
                _unbroadcast(-g * self.data / (other.data * other.data), other.shape),
            ),
        )

    def __rtruediv__(self, other):
        return Tensor._lift(other) / self

    def __pow__(self, exponent: float):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        data = self.data ** exponent
        return Tensor._from_op(
            data,
            (self,),
            lambda g: (g * exponent * self.data ** (exponent - 1),),
        )

    def __matmul__(self, other):
        return matmul(self, other)

    # -- shape manipulation ----------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        original = self.shape
        return Tensor._from_op(
            self.data.reshape(shape),
            (self,),
            lambda g: (g.reshape(original),),
        )

    def permute(self, axes: Sequence[int]) -> "Tensor":
        axes = tuple(axes)
        inverse = tuple(np.argsort(axes))
        return Tensor._from_op(
            self.data.transpose(axes),
            (self,),
            lambda g: (g.transpose(inverse),),
        )

    # -- reductions --------------------------------------------------------------

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        data = self.data.sum(axis=axis, keepdims=keepdims)
        shape = self.shape

        def backward(g):
            if axis is None:
                return (np.broadcast_to(g, shape).copy(),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg, shape).copy(),)

        return Tensor._from_op(data, (self,), backward)

    def mean(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        count = self.data.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def exp(self) -> "Tensor":
        data = np.exp(self.data)
        return Tensor._from_op(data, (self,), lambda g: (g * data,))

    def log(self) -> "Tensor":
        return Tensor._from_op(np.log(self.data), (self,), lambda g: (g / self.data,))

    # -- autodiff -------------------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) onto every reachable requires_grad tensor.

        Repeated calls keep accumulating until grads are cleared explicitly.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        record = ComputationRecord.trace(self)
        adjoint: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        holders: dict[int, Tensor] = {id(self): self}
        for node in reversed(record.ops):
            g = adjoint.get(id(node))
            if g is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in adjoint:
                    adjoint[key] = adjoint[key] + pg
                else:
                    adjoint[key] = pg
                    holders[key] = parent
        for key, g in adjoint.items():
            tensor = holders[key]
            if tensor.requires_grad:
                tensor.grad = g.copy() if tensor.grad is None else tensor.grad + g


@dataclass
class ComputationRecord:
    """The executed primitive ops reachable from one output, oldest first.

    Producers always precede consumers, so a reversed walk visits each op
    exactly once with its full upstream gradient already accumulated.
    """

    ops: list

    @classmethod
    def trace(cls, root: Tensor) -> "ComputationRecord":
        ops: list[Tensor] = []
        visited = {id(root)}
        stack: list[tuple[Tensor, iter]] = [(root, iter(root._parents))]
        while stack:
            node, parents = stack[-1]
            pushed = False
            for parent in parents:
                if parent._backward is not None and id(parent) not in visited:
                    visited.add(id(parent))
                    stack.append((parent, iter(parent._parents)))
                    pushed = True
                    break
            if not pushed:
                stack.pop()
                if node._backward is not None:
                    ops.append(node)
        return cls(ops)


# -- free-function ops ------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two rank-2 tensors."""
    a, b = Tensor._lift(a), Tensor._lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    return Tensor._from_op(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def relu(x: Tensor) -> Tensor:
    """Elementwise max(x, 0); the subgradient at 0 is taken as 0."""
    x = Tensor._lift(x)
    mask = x.data > 0
    return Tensor._from_op(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def _softened(logits: np.ndarray, tau: float) -> np.ndarray:
    z = logits / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softened(logits: np.ndarray, tau: float) -> np.ndarray:
    z = logits / tau
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softened_softmax(logits: Tensor, tau: float) -> Tensor:
    """Temperature softmax along the last axis, max-subtracted for safety."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    logits = Tensor._lift(logits)
    if not np.all(np.isfinite(logits.data)):
        raise ValueError("softened_softmax requires finite logits")
    y = _softened(logits.data, tau)

    def backward(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - inner) / tau,)

    return Tensor._from_op(y, (logits,), backward)


def log_softmax(logits: Tensor, tau: float = 1.0) -> Tensor:
    """Log of the temperature softmax along the last axis."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    logits = Tensor._lift(logits)
    out = _log_softened(logits.data, tau)
    soft = np.exp(out)

    def backward(g):
        return ((g - soft * g.sum(axis=-1, keepdims=True)) / tau,)

    return Tensor._from_op(out, (logits,), backward)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer class labels under the logits."""
    logits = Tensor._lift(logits)
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy expects [batch, classes] logits, got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    b, c = logits.shape
    if labels.shape != (b,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {b}")
    if labels.min() < 0 or labels.max() >= c:
        raise IndexError(f"labels must lie in [0, {c}), got range [{labels.min()}, {labels.max()}]")
    log_probs = _log_softened(logits.data, 1.0)
    value = -log_probs[np.arange(b), labels].mean()

    def backward(g):
        grad = np.exp(log_probs)
        grad[np.arange(b), labels] -= 1.0
        return (grad * (g / b),)

    return Tensor._from_op(np.asarray(value), (logits,), backward)


def gather_cols(x: Tensor, cols) -> Tensor:
    """Select columns of a rank-2 tensor; gradient scatter-adds them back."""
    x = Tensor._lift(x)
    if x.data.ndim != 2:
        raise ShapeError(f"gather_cols expects a rank-2 tensor, got {x.shape}")
    cols = np.asarray(cols, dtype=np.int64)
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, (slice(None), cols), g)
        return (full,)

    return Tensor._from_op(x.data[:, cols], (x,), backward)
