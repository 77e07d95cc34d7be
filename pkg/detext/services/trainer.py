"""
End-to-end training with two Adam optimizers.

Transformer tensors train at ``lr_bert`` and everything else at ``lr``;
both share one backward pass per minibatch and gradients are cleared only
after both updates. Minibatches group whole queries; the loss is the mean
of per-query losses.
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from config.settings import (
    DEFAULT_BATCH_QUERIES,
    DEFAULT_EPOCHS,
    DEFAULT_LR,
    DEFAULT_LR_BERT,
    DEFAULT_MASK_PROB,
    DEFAULT_MAX_SOURCE_LEN,
    DEFAULT_MAX_TARGET_LEN,
    DEFAULT_NUM_MERGES,
    DEFAULT_PRETRAIN_BATCH,
    DEFAULT_PRETRAIN_STEPS,
)
from detext.data.schema import RankingExample
from detext.data.tokenizer import SubwordVocabulary, learn_subword_vocab, tokenize_subwords
from detext.errors import DivergenceError, EmptyDatasetError
from detext.models.ltr import LtrConfig, LtrMode, ranking_loss
from detext.models.scoring import DeTextModel, build_model, check_fields
from detext.models.spec import ModelSpec, TransformerSpec
from detext.models.transformer import TransformerEncoderParams, mask_batch, mlm_loss
from detext.nn import ops
from detext.nn.optim import AdamState, adam_step
from detext.nn.tensor import ParameterTensor, ParamGroup, Tensor, backward, zero_grads
from detext.services.evaluation import evaluate
from detext.services.metrics import track_dev_ndcg, track_skipped_query, track_train_step

logger = logging.getLogger(__name__)

LOG_COLUMNS = ["step", "epoch", "loss", "dev_ndcg10"]


class TrainConfig(BaseModel):
    """Optimization settings for fine-tuning."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    epochs: int = Field(DEFAULT_EPOCHS, ge=1)
    batch_queries: int = Field(DEFAULT_BATCH_QUERIES, ge=1)
    lr: float = Field(DEFAULT_LR, ge=0)
    lr_bert: float = Field(DEFAULT_LR_BERT, ge=0)
    ltr: LtrMode = LtrMode.LISTWISE
    lambda_rank: bool = False
    seed: int = 0
    eval_every: int = Field(0, ge=0)   # steps; 0 evaluates at the end of every epoch only
    eval_k: int = Field(10, ge=1)

    @property
    def ltr_config(self) -> LtrConfig:
        return LtrConfig(self.ltr, self.lambda_rank)


@dataclass
class TrainResult:
    """Best-dev model plus the full training log."""
    model: DeTextModel
    log: pd.DataFrame
    best_dev_ndcg: Optional[float] = None
    best_step: Optional[int] = None
    skipped_queries: int = 0

    def write_log(self, path: Path | str) -> None:
        self.log.to_csv(path, index=False, columns=LOG_COLUMNS, float_format="%.8f", na_rep="")


def dual_lr_partition(model: DeTextModel) -> tuple[list[ParameterTensor], list[ParameterTensor]]:
    """(transformer tensors, everything else) among the trainable tensors."""
    trainable = model.trainable_parameters()
    return (
        [p for p in trainable if p.group == ParamGroup.BERT],
        [p for p in trainable if p.group != ParamGroup.BERT],
    )


def usable_queries(examples: Sequence[RankingExample], ltr: LtrConfig) -> tuple[list[RankingExample], int]:
    """Drop queries the loss cannot learn from (no positive, or no ordered pair)."""
    kept: list[RankingExample] = []
    skipped = 0
    for ex in examples:
        labels = ex.labels
        if ltr.mode == LtrMode.LISTWISE and sum(labels) <= 0:
            skipped += 1
        elif ltr.mode == LtrMode.PAIRWISE and max(labels) == min(labels):
            skipped += 1
        else:
            kept.append(ex)
    return kept, skipped


def batch_loss(model: DeTextModel, batch: Sequence[RankingExample], ltr: LtrConfig) -> Tensor:
    """Mean per-query loss of one minibatch."""
    scores, offsets = model.forward_batch(batch)
    total: Optional[Tensor] = None
    for i, ex in enumerate(batch):
        query_scores = ops.take(scores, np.arange(offsets[i], offsets[i + 1]))
        loss = ranking_loss(query_scores, ex.labels, ltr)
        total = loss if total is None else ops.add(total, loss)
    return ops.scale(total, 1.0 / len(batch))


def _snapshot(model: DeTextModel) -> dict[str, np.ndarray]:
    return {p.name: p.data.copy() for p in model.parameters()}


def _restore(model: DeTextModel, snapshot: dict[str, np.ndarray]) -> None:
    for p in model.parameters():
        p.assign(snapshot[p.name])


def train(
    train_set: Sequence[RankingExample],
    dev_set: Sequence[RankingExample],
    config: TrainConfig,
    spec: ModelSpec,
    model: Optional[DeTextModel] = None,
    transformer: Optional[TransformerEncoderParams] = None,
    subword_vocab: Optional[SubwordVocabulary] = None,
) -> TrainResult:
    """
    Train a model and return the parameters with the best dev NDCG@k.

    Without a dev set the final parameters are returned. A NaN or infinite
    batch loss aborts with DivergenceError.
    """
    if not train_set:
        raise EmptyDatasetError("training set is empty")
    ltr = config.ltr_config
    if model is None:
        model = build_model(spec, train_set, transformer=transformer, subword_vocab=subword_vocab)
    else:
        check_fields(model.spec, train_set)

    usable, skipped = usable_queries(train_set, ltr)
    if skipped:
        logger.warning(f"Skipping {skipped} training queries without a usable label signal for {ltr.mode.value} loss")
        for _ in range(skipped):
            track_skipped_query(reason=f"no_signal_{ltr.mode.value}")
    if not usable:
        raise EmptyDatasetError("no training query carries a usable label signal")

    bert_params, other_params = dual_lr_partition(model)
    all_params = bert_params + other_params
    bert_state, other_state = AdamState(), AdamState()
    encoder = spec.encoder.value
    logger.info(
        f"Training {encoder} model: {len(usable)} queries, epochs={config.epochs}, "
        f"batch={config.batch_queries}, lr={config.lr:g}, lr_bert={config.lr_bert:g}, "
        f"ltr={ltr.mode.value}, lambda_rank={ltr.lambda_rank}, seed={config.seed}"
    )

    rng = np.random.default_rng(config.seed)
    rows: list[dict] = []
    best: Optional[float] = None
    best_step: Optional[int] = None
    best_snapshot = _snapshot(model)
    step = 0

    def run_eval(epoch: int) -> None:
        nonlocal best, best_step, best_snapshot
        if not dev_set:
            return
        ndcg = evaluate(model, dev_set, k=config.eval_k).ndcg
        rows[-1]["dev_ndcg10"] = ndcg
        track_dev_ndcg(encoder, ndcg)
        logger.info(f"step={step} epoch={epoch} loss={rows[-1]['loss']:.6f} dev_ndcg@{config.eval_k}={ndcg:.6f}")
        if best is None or ndcg > best:
            best, best_step, best_snapshot = ndcg, step, _snapshot(model)

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(usable))
        for start in range(0, len(order), config.batch_queries):
            batch = [usable[i] for i in order[start:start + config.batch_queries]]
            started = time.perf_counter()
            loss = batch_loss(model, batch, ltr)
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(step + 1, epoch, [ex.query_id for ex in batch])
            backward(loss)
            if bert_params:
                adam_step(bert_params, bert_state, config.lr_bert, zero_grad=False)
            if other_params:
                adam_step(other_params, other_state, config.lr, zero_grad=False)
            zero_grads(all_params)
            step += 1
            track_train_step(encoder, time.perf_counter() - started)
            rows.append({"step": step, "epoch": epoch, "loss": value, "dev_ndcg10": None})
            if config.eval_every and step % config.eval_every == 0:
                run_eval(epoch)
        if rows and rows[-1]["dev_ndcg10"] is None:
            run_eval(epoch)

    if best is not None:
        _restore(model, best_snapshot)
        logger.info(f"Best dev NDCG@{config.eval_k}={best:.6f} at step {best_step}")
    log = pd.DataFrame(rows, columns=LOG_COLUMNS)
    return TrainResult(model, log, best, best_step, skipped)


# ============================================================================
# Masked-LM pretraining
# ============================================================================

class PretrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    transformer: TransformerSpec = TransformerSpec()
    steps: int = Field(DEFAULT_PRETRAIN_STEPS, ge=0)
    batch_size: int = Field(DEFAULT_PRETRAIN_BATCH, ge=1)
    lr: float = Field(DEFAULT_LR, gt=0)
    mask_prob: float = Field(DEFAULT_MASK_PROB, gt=0, lt=1)
    num_merges: int = Field(DEFAULT_NUM_MERGES, ge=0)
    max_len: int = Field(max(DEFAULT_MAX_SOURCE_LEN, DEFAULT_MAX_TARGET_LEN), ge=2)
    num_sentences: int = Field(2000, ge=1)


@dataclass
class PretrainResult:
    params: TransformerEncoderParams
    vocab: SubwordVocabulary
    losses: list[float] = field(default_factory=list)

    def loss_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"step": np.arange(1, len(self.losses) + 1), "loss": self.losses})


def pretrain_mlm(
    corpus: Sequence[str],
    config: PretrainConfig,
    seed: int,
    vocab: Optional[SubwordVocabulary] = None,
) -> PretrainResult:
    """
    Masked-LM pretraining of a fresh transformer with Adam at ``config.lr``.

    The vocabulary is learned from the corpus unless given. Deterministic
    given the seed; steps=0 returns the initialization.
    """
    if not corpus:
        raise EmptyDatasetError("pretraining corpus is empty")
    vocab = vocab or learn_subword_vocab(corpus, config.num_merges)
    rng = np.random.default_rng(seed)
    params = TransformerEncoderParams.create(config.transformer, len(vocab), config.max_len, rng)
    sequences = [s for s in (tokenize_subwords(t, vocab, config.max_len) for t in corpus) if len(s) > 1]
    if not sequences:
        raise EmptyDatasetError("pretraining corpus has no maskable tokens")

    tensors = params.parameters()
    state = AdamState()
    losses: list[float] = []
    logger.info(
        f"Pretraining transformer ({config.transformer.layers}x{config.transformer.hidden}, "
        f"{config.transformer.heads} heads) on {len(sequences)} sentences, vocab={len(vocab)}, steps={config.steps}"
    )
    for step in range(1, config.steps + 1):
        picked = rng.choice(len(sequences), size=min(config.batch_size, len(sequences)), replace=False)
        batch = None
        while batch is None:
            batch = mask_batch([sequences[i] for i in picked], config.mask_prob, rng, len(vocab),
                               vocab.first_regular_id)
        loss = mlm_loss(params, batch)
        value = loss.item()
        if not np.isfinite(value):
            raise DivergenceError(step, 0, [])
        backward(loss)
        adam_step(tensors, state, config.lr)
        losses.append(value)
        if step % 50 == 0 or step == config.steps:
            logger.info(f"pretrain step={step} mlm_loss={np.mean(losses[-50:]):.4f}")
    return PretrainResult(params, vocab, losses)
