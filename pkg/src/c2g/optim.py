"""Named parameter collections, seeded initialization, and plain SGD."""

from __future__ import annotations

from typing import Iterator, Tuple

import numpy as np

from .tensor import Tensor


class ModelParams:
    """An ordered name -> Tensor mapping for one network's learnable weights."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        tensor = Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self._params.items())

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grad(self) -> None:
        for tensor in self._params.values():
            tensor.clear_grad()

    def freeze(self) -> None:
        """Make every parameter immutable for the optimizer and the tape."""
        for tensor in self._params.values():
            tensor.requires_grad = False

    @property
    def frozen(self) -> bool:
        return all(not t.requires_grad for t in self._params.values())

    def state(self) -> dict[str, np.ndarray]:
        """Copies of the raw arrays, e.g. for checkpointing."""
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, tensor in self._params.items():
            if name not in state:
                raise KeyError(f"missing parameter {name!r} in state")
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != tensor.data.shape:
                raise ValueError(
                    f"parameter {name!r}: stored shape {value.shape} != model shape {tensor.data.shape}"
                )
            tensor.data = value.copy()


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    """Uniform init on [-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))]."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    if shape is None:
        shape = (fan_in, fan_out)
    return rng.uniform(-limit, limit, size=shape)


def sgd_step(params: ModelParams, lr: float) -> None:
    """p <- p - lr * grad for every trainable parameter, then clear grads.

    Frozen parameters are skipped; a trainable parameter without a populated
    gradient is a caller error.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    for name, tensor in params.items():
        if not tensor.requires_grad:
            continue
        if tensor.grad is None:
            raise RuntimeError(f"sgd_step: parameter {name!r} has no gradient")
        tensor.data = tensor.data - lr * tensor.grad
        tensor.clear_grad()
