"""
Tensors and reverse-mode differentiation.

Every op result remembers its parents and a backward function mapping the
output gradient to one gradient per parent. ``backward`` walks the graph in
reverse topological order and accumulates into ``ParameterTensor.grad``.
Recording is skipped inside ``no_grad()``, which is how frozen models are
served from many threads at once.
"""

import math
import threading
from contextlib import contextmanager
from enum import Enum
from typing import Callable, Iterable, Iterator, Optional, Sequence

import numpy as np

from detext.errors import BackwardError

DEFAULT_DTYPE = np.float32

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_grad_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording in the current thread."""
    previous = grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


class ParamGroup(str, Enum):
    BERT = "bert"
    OTHER = "other"


class Tensor:
    """An array plus the recorded computation that produced it."""

    __slots__ = ("data", "parents", "backward_fn", "requires_grad")

    def __init__(
        self,
        data: np.ndarray,
        parents: tuple["Tensor", ...] = (),
        backward_fn: Optional[BackwardFn] = None,
        requires_grad: bool = False,
    ):
        self.data = data
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class ParameterTensor(Tensor):
    """A named, shaped parameter with its accumulated gradient."""

    __slots__ = ("name", "grad", "trainable", "group", "version")

    def __init__(
        self,
        name: str,
        values: np.ndarray,
        trainable: bool = True,
        group: ParamGroup = ParamGroup.OTHER,
    ):
        if any(n <= 0 for n in values.shape):
            raise ValueError(f"{name}: shape {values.shape} must be all positive")
        super().__init__(np.ascontiguousarray(values), requires_grad=trainable)
        self.name = name
        self.trainable = trainable
        self.group = group
        self.grad = np.zeros_like(self.data)
        self.version = 0

    @property
    def values(self) -> np.ndarray:
        return self.data

    @property
    def numel(self) -> int:
        return int(self.data.size)

    def zero_grad(self) -> None:
        self.grad.fill(0)

    def assign(self, values: np.ndarray) -> None:
        if values.shape != self.data.shape:
            raise ValueError(f"{self.name}: cannot assign shape {values.shape} to {self.data.shape}")
        self.data[...] = values
        self.version += 1

    def astype(self, dtype: np.dtype) -> None:
        """Convert values and gradient buffer in place (float64 is used for gradient checks)."""
        self.data = self.data.astype(dtype)
        self.grad = self.grad.astype(dtype)
        self.version += 1

    def bump(self) -> None:
        """Record an in-place update of ``data``."""
        self.version += 1

    def __repr__(self) -> str:
        return f"ParameterTensor({self.name!r}, shape={self.shape}, group={self.group.value})"


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or DEFAULT_DTYPE))


def record(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn: BackwardFn) -> Tensor:
    """Wrap an op result, keeping the graph only when some parent needs gradients."""
    if grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(data, parents, backward_fn, requires_grad=True)
    return Tensor(data)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(param) into every reachable trainable parameter."""
    if not loss.requires_grad:
        raise BackwardError("backward called without a recorded computation")
    if loss.data.size != 1:
        raise BackwardError(f"backward needs a scalar loss, got shape {loss.shape}")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, ParameterTensor):
            if node.trainable:
                node.grad += g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


def zero_grads(params: Iterable[ParameterTensor]) -> None:
    for p in params:
        p.zero_grad()


def cast_parameters(params: Iterable[ParameterTensor], dtype: np.dtype) -> None:
    for p in params:
        p.astype(dtype)


# ============================================================================
# Initializers
# ============================================================================

def uniform(name: str, shape: tuple[int, ...], rng: np.random.Generator, limit: float = 0.05,
            group: ParamGroup = ParamGroup.OTHER) -> ParameterTensor:
    values = rng.uniform(-limit, limit, size=shape).astype(DEFAULT_DTYPE)
    return ParameterTensor(name, values, group=group)


def glorot(name: str, shape: tuple[int, int], rng: np.random.Generator,
           group: ParamGroup = ParamGroup.OTHER) -> ParameterTensor:
    fan_out, fan_in = shape
    return uniform(name, shape, rng, limit=math.sqrt(6.0 / (fan_in + fan_out)), group=group)


def zeros(name: str, shape: tuple[int, ...], group: ParamGroup = ParamGroup.OTHER,
          trainable: bool = True) -> ParameterTensor:
    return ParameterTensor(name, np.zeros(shape, dtype=DEFAULT_DTYPE), trainable=trainable, group=group)


def ones(name: str, shape: tuple[int, ...], group: ParamGroup = ParamGroup.OTHER,
         trainable: bool = True) -> ParameterTensor:
    return ParameterTensor(name, np.ones(shape, dtype=DEFAULT_DTYPE), trainable=trainable, group=group)
