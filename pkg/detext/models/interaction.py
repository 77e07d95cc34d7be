"""
Interaction layer: source/target field embeddings to deep features.

Layout is fixed for checkpoint compatibility: for each source (outer) and
target (inner) pair, the cosine scalar then the Hadamard vector, then, if
concat is enabled, every source embedding followed by every target one.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

from detext.errors import ShapeMismatchError
from detext.nn import ops
from detext.nn.tensor import Tensor, as_tensor


class InteractionMethod(str, Enum):
    COSINE = "cosine"
    HADAMARD = "hadamard"
    CONCAT = "concat"


@dataclass(frozen=True)
class InteractionConfig:
    methods: frozenset[InteractionMethod]

    def __post_init__(self):
        if not self.methods:
            raise ValueError("at least one interaction method must be enabled")

    @classmethod
    def of(cls, names: Iterable[str]) -> "InteractionConfig":
        return cls(frozenset(InteractionMethod(n) for n in names))

    @property
    def cosine(self) -> bool:
        return InteractionMethod.COSINE in self.methods

    @property
    def hadamard(self) -> bool:
        return InteractionMethod.HADAMARD in self.methods

    @property
    def concat(self) -> bool:
        return InteractionMethod.CONCAT in self.methods

    def width(self, num_sources: int, num_targets: int, dim: int) -> int:
        """Length of the deep feature vector."""
        per_pair = int(self.cosine) + dim * int(self.hadamard)
        return num_sources * num_targets * per_pair + (num_sources + num_targets) * dim * int(self.concat)


def _pair(u, v) -> tuple[Tensor, Tensor]:
    u, v = as_tensor(u), as_tensor(v)
    if u.shape != v.shape:
        raise ShapeMismatchError(f"embedding dimensions differ: {u.shape} vs {v.shape}")
    return u, v


def cosine_sim(u, v) -> Tensor:
    """Cosine over the last axis; 0 when either vector has zero norm."""
    return ops.cosine_similarity(*_pair(u, v))


def hadamard(u, v) -> Tensor:
    return ops.mul(*_pair(u, v))


def assemble_deep_features(sources: Sequence, targets: Sequence, config: InteractionConfig) -> Tensor:
    """
    Concatenate interaction features along the last axis.

    Embeddings are (d,) vectors or (n, d) row batches, all of the same shape.
    """
    sources = [as_tensor(s) for s in sources]
    targets = [as_tensor(t) for t in targets]
    shapes = {e.shape for e in sources + targets}
    if len(shapes) != 1:
        raise ShapeMismatchError(f"field embeddings must share one shape, got {sorted(shapes)}")

    parts: list[Tensor] = []
    for u in sources:
        for v in targets:
            if config.cosine:
                c = cosine_sim(u, v)
                parts.append(ops.reshape(c, c.shape + (1,)))
            if config.hadamard:
                parts.append(hadamard(u, v))
    if config.concat:
        parts.extend(sources)
        parts.extend(targets)
    return ops.concat(parts, axis=-1)
