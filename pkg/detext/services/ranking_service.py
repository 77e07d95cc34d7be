"""
Online ranking paths.

- all-decoding: encode the query and every candidate's target fields live
- precompute: encode the query live, fetch candidate embeddings from the store
- two-pass: a traditional-features MLP ranks everything, the deep model
  rescores its top K

Serving encodes each text on its own, so a stored embedding and a live
one are the same bits and both paths give identical scores.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from config.settings import TWO_PASS_K
from detext.data.schema import RankingExample
from detext.errors import ModelCapabilityError, StaleStoreError
from detext.models.scoring import DeTextModel
from detext.models.spec import EncoderType, ModelSpec
from detext.nn.tensor import no_grad
from detext.services.checkpoint import model_fingerprint
from detext.services.embedding_store import EmbeddingStore, EmbeddingStoreManager
from detext.services.metrics import track_rank_request
from detext.services.trainer import TrainConfig, TrainResult, train

logger = logging.getLogger(__name__)

STAGE_DEEP = "deep"
STAGE_FIRST_PASS = "first_pass"


class RankMode(str, Enum):
    ALL_DECODING = "all-decoding"
    TWO_PASS = "two-pass"
    PRECOMPUTE = "precompute"


@dataclass(frozen=True)
class RankedDocument:
    doc_id: str
    score: float
    stage: str = STAGE_DEEP


def _ranking_order(doc_ids: Sequence[str], scores: np.ndarray) -> list[int]:
    return sorted(range(len(doc_ids)), key=lambda i: (-float(scores[i]), doc_ids[i]))


def order_by_score(doc_ids: Sequence[str], scores: np.ndarray, stage: str = STAGE_DEEP) -> list[RankedDocument]:
    """Descending score, ties by doc_id."""
    order = _ranking_order(doc_ids, scores)
    return [RankedDocument(doc_ids[i], float(scores[i]), stage) for i in order]


def _score(model: DeTextModel, example: RankingExample, targets: Sequence[np.ndarray]) -> np.ndarray:
    n = len(example.documents)
    with no_grad():
        sources = [np.repeat(s[None, :], n, axis=0) for s in model.encode_sources(example)] \
            if model.has_encoder else []
        scores = model.score_embeddings(sources, targets, model.feature_matrix(example.documents))
    return scores.numpy().reshape(n)


def score_all_decoding(model: DeTextModel, example: RankingExample) -> np.ndarray:
    targets: list[np.ndarray] = []
    if model.has_encoder:
        per_doc = [model.encode_document(doc) for doc in example.documents]
        targets = [np.stack([vectors[f] for vectors in per_doc]) for f in range(len(model.spec.target_fields))]
    return _score(model, example, targets)


def score_with_store(model: DeTextModel, example: RankingExample, store: EmbeddingStore,
                     fingerprint: Optional[str] = None) -> np.ndarray:
    if not model.has_encoder:
        raise ModelCapabilityError("store ranking needs a model with a text encoder")
    fingerprint = fingerprint or model_fingerprint(model)
    if store.fingerprint != fingerprint:
        raise StaleStoreError(store.fingerprint, fingerprint)
    if store.field_names != tuple(model.spec.target_fields) or store.dim != model.spec.embedding_dim:
        raise StaleStoreError(store.fingerprint, fingerprint)
    per_doc = store.get_many([doc.doc_id for doc in example.documents])
    targets = [np.stack([vectors[f] for vectors in per_doc]) for f in range(len(store.field_names))]
    return _score(model, example, targets)


@track_rank_request(RankMode.ALL_DECODING.value)
def rank_all_decoding(model: DeTextModel, example: RankingExample) -> list[RankedDocument]:
    """Full on-the-fly ranking of every candidate."""
    return order_by_score([d.doc_id for d in example.documents], score_all_decoding(model, example))


@track_rank_request(RankMode.PRECOMPUTE.value)
def rank_with_store(model: DeTextModel, example: RankingExample, store: EmbeddingStore,
                    fingerprint: Optional[str] = None) -> list[RankedDocument]:
    """
    Rank candidates using stored document embeddings.

    Only the query is encoded. Every candidate id must be in the store and
    the store must have been built by this model.
    """
    return order_by_score([d.doc_id for d in example.documents],
                          score_with_store(model, example, store, fingerprint))


@track_rank_request(RankMode.TWO_PASS.value)
def two_pass_rank(
    first_pass: DeTextModel,
    deep: DeTextModel,
    example: RankingExample,
    k: int = TWO_PASS_K,
    store: Optional[EmbeddingStore] = None,
    fingerprint: Optional[str] = None,
) -> list[RankedDocument]:
    """
    First pass over all N candidates, deep rescoring of the top K.

    Rescored documents come first in deep-score order; the other N - K keep
    their first-pass order. K >= N equals full deep ranking, K = 0 the
    first-pass ranking.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    ids = [d.doc_id for d in example.documents]
    first_scores = _score(first_pass, example, [])
    first = order_by_score(ids, first_scores, STAGE_FIRST_PASS)
    if k == 0:
        return first

    # by position so duplicate doc_ids stay separate candidates; original order keeps K >= N exact
    chosen = sorted(_ranking_order(ids, first_scores)[:k])
    subset = RankingExample(example.query_id, example.source_fields, tuple(example.documents[i] for i in chosen))
    if store is not None:
        deep_scores = score_with_store(deep, subset, store, fingerprint)
    else:
        deep_scores = score_all_decoding(deep, subset)
    rescored = order_by_score([d.doc_id for d in subset.documents], deep_scores)
    return rescored + first[k:]


def first_pass_spec(spec: ModelSpec) -> ModelSpec:
    """MLP over traditional features only, one hidden layer."""
    return spec.model_copy(update={"encoder": EncoderType.MLP, "use_features": True})


def train_first_pass(train_set: Sequence[RankingExample], dev_set: Sequence[RankingExample],
                     config: TrainConfig, spec: ModelSpec) -> TrainResult:
    """Train the two-pass first ranker with the deep model's LTR loss."""
    first_spec = first_pass_spec(spec)
    logger.info("Training first-pass ranker on traditional features")
    return train(train_set, dev_set, config, first_spec)


class RankingService:
    """A frozen deep model plus optional store and first-pass ranker, ready for concurrent requests."""

    def __init__(
        self,
        model: DeTextModel,
        store_manager: Optional[EmbeddingStoreManager] = None,
        first_pass: Optional[DeTextModel] = None,
        k: int = TWO_PASS_K,
    ):
        self.model = model
        self.store_manager = store_manager
        self.first_pass = first_pass
        self.k = k
        self.fingerprint = model_fingerprint(model) if model.has_encoder else None

    def rank(self, example: RankingExample, mode: RankMode) -> list[RankedDocument]:
        mode = RankMode(mode)
        if mode == RankMode.ALL_DECODING:
            return rank_all_decoding(self.model, example)
        if mode == RankMode.PRECOMPUTE:
            if self.store_manager is None:
                raise ModelCapabilityError("precompute mode needs an embedding store")
            return rank_with_store(self.model, example, self.store_manager.current, self.fingerprint)
        if mode == RankMode.TWO_PASS:
            if self.first_pass is None:
                raise ModelCapabilityError("two-pass mode needs a first-pass model")
            store = self.store_manager.current if self.store_manager is not None else None
            return two_pass_rank(self.first_pass, self.model, example, self.k, store, self.fingerprint)
        raise ValueError(f"unknown ranking mode {mode!r}")
