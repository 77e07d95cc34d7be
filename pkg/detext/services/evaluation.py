"""
Offline ranking metrics and evaluation reports.

NDCG@k and MRR@k are averaged per query; AUC is pooled over every document
of every query. A label counts as positive when it is >= 0.5.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from sklearn.metrics import roc_auc_score

from detext.data.schema import RankingExample
from detext.errors import EmptyDatasetError, MetricError, ShapeMismatchError
from detext.models.scoring import DeTextModel, check_fields
from detext.nn.tensor import no_grad

logger = logging.getLogger(__name__)

POSITIVE_THRESHOLD = 0.5
EVAL_BATCH_QUERIES = 256


def _check(scores, labels, k: int) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    if scores.shape != labels.shape:
        raise ShapeMismatchError(f"{scores.size} scores vs {labels.size} labels")
    if k < 1:
        raise ValueError("k must be >= 1")
    return scores, labels


def rank_order(scores: np.ndarray) -> np.ndarray:
    """Indices by descending score, ties by original index."""
    return np.lexsort((np.arange(len(scores)), -np.asarray(scores)))


def ndcg_at_k(scores, labels, k: int) -> float:
    """
    NDCG with gain 2^label - 1 and discount 1/log2(rank + 1).

    Returns 0.0 when the ideal DCG is 0 (no relevant document).
    """
    scores, labels = _check(scores, labels, k)
    gains = np.power(2.0, labels) - 1.0
    cutoff = min(k, labels.size)
    discounts = 1.0 / np.log2(np.arange(2, cutoff + 2))
    ideal = float(np.sort(gains)[::-1][:cutoff] @ discounts)
    if ideal == 0.0:
        return 0.0
    dcg = float(gains[rank_order(scores)][:cutoff] @ discounts)
    return dcg / ideal


def mrr_at_k(scores, labels, k: int) -> float:
    """Reciprocal rank of the first positive, 0 when it falls below k."""
    scores, labels = _check(scores, labels, k)
    ranked = labels[rank_order(scores)][:k]
    hits = np.nonzero(ranked >= POSITIVE_THRESHOLD)[0]
    return 1.0 / (hits[0] + 1) if hits.size else 0.0


def auc(scores, labels) -> float:
    """Fraction of (positive, negative) pairs ordered correctly, ties counting half."""
    scores, labels = _check(scores, labels, 1)
    binary = labels >= POSITIVE_THRESHOLD
    if binary.all() or not binary.any():
        raise MetricError("AUC needs at least one positive and one negative document")
    return float(roc_auc_score(binary, scores))


def percentage_lift(value: float, baseline: float) -> float:
    """Relative change in percent; NaN against a zero baseline."""
    if baseline == 0:
        return math.nan
    return 100.0 * (value - baseline) / baseline


# ============================================================================
# Reports
# ============================================================================

@dataclass
class EvalReport:
    """Per-query means of NDCG@k and MRR@k plus pooled AUC (None for a single-class pool)."""
    k: int
    num_queries: int
    ndcg: float
    mrr: float
    auc: Optional[float]
    per_query: Optional[pd.DataFrame] = field(default=None, repr=False, compare=False)

    def as_dict(self) -> dict:
        return {
            "k": self.k,
            "queries": self.num_queries,
            f"ndcg@{self.k}": self.ndcg,
            f"mrr@{self.k}": self.mrr,
            "auc": self.auc,
        }

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([self.as_dict()])

    def to_csv(self, path: Path | str) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.6f")
        if self.per_query is not None:
            self.per_query.to_csv(Path(path).with_suffix(".per_query.csv"), index=False, float_format="%.6f")

    def to_table(self) -> str:
        return self.to_frame().to_string(index=False, float_format=lambda v: f"{v:.4f}")


def score_dataset(model: DeTextModel, dataset: Sequence[RankingExample],
                  batch_queries: int = EVAL_BATCH_QUERIES) -> list[np.ndarray]:
    """Scores per query, computed in batches without recording gradients."""
    out: list[np.ndarray] = []
    with no_grad():
        for start in range(0, len(dataset), batch_queries):
            chunk = dataset[start:start + batch_queries]
            scores, offsets = model.forward_batch(chunk)
            values = scores.numpy()
            out.extend(values[offsets[i]:offsets[i + 1]].copy() for i in range(len(chunk)))
    return out


def report_from_scores(
    dataset: Sequence[RankingExample],
    scores: Sequence[np.ndarray],
    k: int = 10,
    per_query: bool = False,
) -> EvalReport:
    if not dataset:
        raise EmptyDatasetError("cannot evaluate an empty dataset")
    rows = []
    for example, s in zip(dataset, scores):
        rows.append({
            "query_id": example.query_id,
            "ndcg": ndcg_at_k(s, example.labels, k),
            "mrr": mrr_at_k(s, example.labels, k),
        })
    frame = pd.DataFrame(rows)
    try:
        pooled = auc(np.concatenate(scores), np.concatenate([ex.labels for ex in dataset]))
    except MetricError:
        logger.warning("AUC undefined: evaluation pool has a single class")
        pooled = None
    return EvalReport(
        k=k,
        num_queries=len(dataset),
        ndcg=float(frame["ndcg"].mean()),
        mrr=float(frame["mrr"].mean()),
        auc=pooled,
        per_query=frame if per_query else None,
    )


def evaluate(model: DeTextModel, dataset: Sequence[RankingExample], k: int = 10,
             per_query: bool = False) -> EvalReport:
    check_fields(model.spec, dataset)
    report = report_from_scores(dataset, score_dataset(model, dataset), k, per_query)
    logger.debug(f"Evaluated {report.num_queries} queries: {report.as_dict()}")
    return report
