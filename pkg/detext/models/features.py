"""
Traditional feature processing: global standardization then learned rescaling.

    x1 = (x - mu) / sigma      mu, sigma fitted once on training documents
    x2 = w * x1 + b            w, b trained with the rest of the model
"""

import logging
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from sklearn.preprocessing import StandardScaler

from detext.data.schema import RankingExample, iter_documents
from detext.errors import EmptyDatasetError, ShapeMismatchError
from detext.nn import ops
from detext.nn.tensor import DEFAULT_DTYPE, ParameterTensor, Tensor, ones, zeros

logger = logging.getLogger(__name__)


def fit_standardizer(examples: Iterable[RankingExample]) -> tuple[np.ndarray, np.ndarray]:
    """
    Population mean and standard deviation per feature over all documents.

    Zero-variance columns get sigma = 1.
    """
    rows = [doc.traditional_features for doc in iter_documents(examples)]
    if not rows:
        raise EmptyDatasetError("cannot fit feature statistics on an empty training set")
    matrix = np.asarray(rows, dtype=np.float64)
    if matrix.shape[1] == 0:
        return np.zeros(0, dtype=DEFAULT_DTYPE), np.ones(0, dtype=DEFAULT_DTYPE)
    scaler = StandardScaler().fit(matrix)
    logger.debug(f"Fitted feature statistics over {matrix.shape[0]} documents, {matrix.shape[1]} features")
    return scaler.mean_.astype(DEFAULT_DTYPE), scaler.scale_.astype(DEFAULT_DTYPE)


@dataclass
class FeatureProcessor:
    """Fitted mu/sigma (not trainable) and learned w/b."""
    mean: ParameterTensor
    std: ParameterTensor
    weight: ParameterTensor
    shift: ParameterTensor
    normalize: bool = True
    rescale: bool = True

    @classmethod
    def create(
        cls,
        mean: np.ndarray,
        std: np.ndarray,
        normalize: bool = True,
        rescale: bool = True,
        prefix: str = "features",
    ) -> "FeatureProcessor":
        mean = np.asarray(mean, dtype=DEFAULT_DTYPE)
        std = np.asarray(std, dtype=DEFAULT_DTYPE)
        if mean.shape != std.shape or mean.ndim != 1:
            raise ShapeMismatchError(f"feature statistics disagree: mu {mean.shape}, sigma {std.shape}")
        if np.any(std <= 0):
            raise ValueError("feature standard deviations must be positive")
        n = mean.shape[0]
        return cls(
            mean=ParameterTensor(f"{prefix}/mean", mean.copy(), trainable=False),
            std=ParameterTensor(f"{prefix}/std", std.copy(), trainable=False),
            weight=ones(f"{prefix}/weight", (n,), trainable=rescale),
            shift=zeros(f"{prefix}/shift", (n,), trainable=rescale),
            normalize=normalize,
            rescale=rescale,
        )

    @property
    def width(self) -> int:
        return self.mean.shape[0]

    def parameters(self) -> list[ParameterTensor]:
        return [self.mean, self.std, self.weight, self.shift]


def process_features(x, processor: FeatureProcessor) -> Tensor:
    """((x - mu) / sigma) * w + b over the last axis; only w and b receive gradients."""
    x = np.asarray(x.numpy() if isinstance(x, Tensor) else x, dtype=processor.mean.dtype)
    if x.shape[-1:] != (processor.width,):
        raise ShapeMismatchError(f"expected {processor.width} features, got {x.shape[-1:]}")
    if processor.normalize:
        x = (x - processor.mean.data) / processor.std.data
    out = Tensor(x)
    if processor.rescale:
        out = ops.add(ops.mul(out, processor.weight), processor.shift)
    return out
