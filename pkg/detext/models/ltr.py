"""
Learning-to-rank losses over one query's document scores.

    pointwise  mean BCE(sigmoid(s_i), y_i)
    pairwise   mean over y_i > y_j of log(1 + exp(-(s_i - s_j))), optionally |dNDCG|-weighted
    listwise   -sum_i (y_i / sum y) log softmax(s)_i
"""

import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from detext.errors import ConfigError, LossError, NoValidPairsWarning, ShapeMismatchError
from detext.nn import ops
from detext.nn.tensor import Tensor, as_tensor


class LtrMode(str, Enum):
    POINTWISE = "pointwise"
    PAIRWISE = "pairwise"
    LISTWISE = "listwise"


@dataclass(frozen=True)
class LtrConfig:
    mode: LtrMode = LtrMode.LISTWISE
    lambda_rank: bool = False

    def __post_init__(self):
        if self.lambda_rank and self.mode != LtrMode.PAIRWISE:
            raise ConfigError("lambda_rank requires pairwise mode")

    @property
    def needs_positive(self) -> bool:
        """Queries without a positive label carry no signal for this loss."""
        return self.mode != LtrMode.POINTWISE


def _inputs(scores, labels: Sequence[float]) -> tuple[Tensor, np.ndarray]:
    scores = as_tensor(scores)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ShapeMismatchError(f"{scores.shape[0] if scores.ndim else 0} scores vs {labels.size} labels")
    return scores, labels


def pointwise_loss(scores, labels: Sequence[float]) -> Tensor:
    """Mean binary cross-entropy with logits: softplus(s) - y * s."""
    scores, labels = _inputs(scores, labels)
    y = labels.astype(scores.dtype)
    return ops.mean_all(ops.sub(ops.softplus(scores), ops.mul(scores, y)))


# ============================================================================
# Pairwise and LambdaRank
# ============================================================================

def _discounts(n: int) -> np.ndarray:
    return 1.0 / np.log2(np.arange(2, n + 2))


def _ranks(scores: np.ndarray) -> np.ndarray:
    """0-based rank of each document by descending score, ties by index."""
    order = np.lexsort((np.arange(scores.size), -scores))
    ranks = np.empty(scores.size, dtype=np.int64)
    ranks[order] = np.arange(scores.size)
    return ranks


def lambda_weights(scores: np.ndarray, labels: Sequence[float]) -> np.ndarray:
    """
    |delta NDCG| of swapping documents i and j in the current score ranking.

    NDCG is over the full list with gain 2^label - 1; a zero ideal DCG gives
    all-zero weights.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    gains = np.power(2.0, labels) - 1.0
    disc = _discounts(labels.size)
    ideal = float(np.sort(gains)[::-1] @ disc)
    if ideal == 0.0:
        return np.zeros((labels.size, labels.size))
    d = disc[_ranks(scores)]
    return np.abs(np.subtract.outer(gains, gains) * np.subtract.outer(d, d)) / ideal


def pairwise_loss(scores, labels: Sequence[float], lambda_rank: bool = False) -> Tensor:
    """
    Logistic loss averaged over pairs with label_i > label_j.

    No such pair gives a zero loss (still differentiable) and a NoValidPairsWarning.
    """
    scores, labels = _inputs(scores, labels)
    i, j = np.nonzero(np.subtract.outer(labels, labels) > 0)
    if i.size == 0:
        warnings.warn("no (positive, negative) pairs in query; pairwise loss is 0", NoValidPairsWarning,
                      stacklevel=2)
        return ops.scale(ops.sum_all(scores), 0.0)

    margins = ops.sub(ops.take(scores, i), ops.take(scores, j))
    terms = ops.softplus(ops.neg(margins))
    if lambda_rank:
        weights = lambda_weights(scores.numpy(), labels)[i, j]
        terms = ops.mul(terms, weights.astype(scores.dtype))
    return ops.mean_all(terms)


def listwise_loss(scores, labels: Sequence[float]) -> Tensor:
    """Softmax cross-entropy against labels normalized to a distribution."""
    scores, labels = _inputs(scores, labels)
    total = labels.sum()
    if total <= 0:
        raise LossError("listwise loss needs at least one positive label")
    target = (labels / total).astype(scores.dtype)
    return ops.neg(ops.sum_all(ops.mul(ops.log_softmax(scores), target)))


def ranking_loss(scores, labels: Sequence[float], config: LtrConfig) -> Tensor:
    if config.mode == LtrMode.POINTWISE:
        return pointwise_loss(scores, labels)
    if config.mode == LtrMode.PAIRWISE:
        return pairwise_loss(scores, labels, config.lambda_rank)
    return listwise_loss(scores, labels)
