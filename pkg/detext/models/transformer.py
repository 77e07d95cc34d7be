"""
Compact BERT-style encoder with [CLS] pooling and masked-LM pretraining.

Pre-norm layers: x + Attn(LN(x)), then x + FFN(LN(x)), with a final layer
norm. Positions are a learned table. Batches are right-padded with PAD and
padded keys are masked out of attention, so a sequence's [CLS] output does
not depend on what it was batched with beyond float rounding.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from detext.data.tokenizer import CLS_ID, MASK_ID, PAD_ID
from detext.errors import LossError, SequenceLengthError
from detext.models.spec import FieldEmbedding, TransformerSpec
from detext.nn import ops
from detext.nn.tensor import ParameterTensor, ParamGroup, Tensor, glorot, ones, uniform, zeros

logger = logging.getLogger(__name__)

FFN_MULTIPLIER = 4
_MASKED_SCORE = -1e9

# Replacement recipe for selected positions
_MASK_SHARE = 0.8
_RANDOM_SHARE = 0.1

TENSORS_PER_LAYER = 16


@dataclass
class TransformerLayer:
    ln1_gain: ParameterTensor
    ln1_bias: ParameterTensor
    wq: ParameterTensor
    bq: ParameterTensor
    wk: ParameterTensor
    bk: ParameterTensor
    wv: ParameterTensor
    bv: ParameterTensor
    wo: ParameterTensor
    bo: ParameterTensor
    ln2_gain: ParameterTensor
    ln2_bias: ParameterTensor
    w1: ParameterTensor
    b1: ParameterTensor
    w2: ParameterTensor
    b2: ParameterTensor

    @classmethod
    def create(cls, prefix: str, hidden: int, rng: np.random.Generator) -> "TransformerLayer":
        bert = ParamGroup.BERT
        inner = FFN_MULTIPLIER * hidden
        return cls(
            ln1_gain=ones(f"{prefix}/ln1_gain", (hidden,), group=bert),
            ln1_bias=zeros(f"{prefix}/ln1_bias", (hidden,), group=bert),
            wq=glorot(f"{prefix}/wq", (hidden, hidden), rng, group=bert),
            bq=zeros(f"{prefix}/bq", (hidden,), group=bert),
            wk=glorot(f"{prefix}/wk", (hidden, hidden), rng, group=bert),
            bk=zeros(f"{prefix}/bk", (hidden,), group=bert),
            wv=glorot(f"{prefix}/wv", (hidden, hidden), rng, group=bert),
            bv=zeros(f"{prefix}/bv", (hidden,), group=bert),
            wo=glorot(f"{prefix}/wo", (hidden, hidden), rng, group=bert),
            bo=zeros(f"{prefix}/bo", (hidden,), group=bert),
            ln2_gain=ones(f"{prefix}/ln2_gain", (hidden,), group=bert),
            ln2_bias=zeros(f"{prefix}/ln2_bias", (hidden,), group=bert),
            w1=glorot(f"{prefix}/w1", (inner, hidden), rng, group=bert),
            b1=zeros(f"{prefix}/b1", (inner,), group=bert),
            w2=glorot(f"{prefix}/w2", (hidden, inner), rng, group=bert),
            b2=zeros(f"{prefix}/b2", (hidden,), group=bert),
        )

    def parameters(self) -> list[ParameterTensor]:
        return [
            self.ln1_gain, self.ln1_bias,
            self.wq, self.bq, self.wk, self.bk, self.wv, self.bv, self.wo, self.bo,
            self.ln2_gain, self.ln2_bias,
            self.w1, self.b1, self.w2, self.b2,
        ]


@dataclass
class TransformerEncoderParams:
    """Token and position tables, L layers, final norm and the tied MLM output bias."""
    spec: TransformerSpec
    max_len: int
    token_embedding: ParameterTensor      # hidden x V
    position_embedding: ParameterTensor   # max_len x hidden
    layers: list[TransformerLayer]
    final_gain: ParameterTensor
    final_bias: ParameterTensor
    mlm_bias: ParameterTensor

    @classmethod
    def create(
        cls,
        spec: TransformerSpec,
        vocab_size: int,
        max_len: int,
        rng: np.random.Generator,
        prefix: str = "transformer",
    ) -> "TransformerEncoderParams":
        bert = ParamGroup.BERT
        h = spec.hidden
        return cls(
            spec=spec,
            max_len=max_len,
            token_embedding=uniform(f"{prefix}/token_embedding", (h, vocab_size), rng, group=bert),
            position_embedding=uniform(f"{prefix}/position_embedding", (max_len, h), rng, group=bert),
            layers=[TransformerLayer.create(f"{prefix}/layer{i}", h, rng) for i in range(spec.layers)],
            final_gain=ones(f"{prefix}/final_gain", (h,), group=bert),
            final_bias=zeros(f"{prefix}/final_bias", (h,), group=bert),
            mlm_bias=zeros(f"{prefix}/mlm_bias", (vocab_size,), group=bert),
        )

    @property
    def hidden(self) -> int:
        return self.spec.hidden

    @property
    def vocab_size(self) -> int:
        return self.token_embedding.shape[1]

    def parameters(self) -> list[ParameterTensor]:
        params = [self.token_embedding, self.position_embedding]
        for layer in self.layers:
            params.extend(layer.parameters())
        params.extend([self.final_gain, self.final_bias, self.mlm_bias])
        return params


def parameter_census(spec: TransformerSpec) -> int:
    """Number of tensors a transformer of this size owns."""
    return 5 + TENSORS_PER_LAYER * spec.layers


# ============================================================================
# Forward
# ============================================================================

def _check_sequence(params: TransformerEncoderParams, ids: Sequence[int]) -> None:
    if not ids or ids[0] != CLS_ID:
        raise SequenceLengthError("transformer input must start with [CLS]")
    if len(ids) > params.max_len:
        raise SequenceLengthError(f"sequence of {len(ids)} tokens exceeds max length {params.max_len}")


def _pad(sequences: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    width = max(len(s) for s in sequences)
    ids = np.full((len(sequences), width), PAD_ID, dtype=np.int64)
    for row, seq in enumerate(sequences):
        ids[row, :len(seq)] = seq
    lengths = np.array([len(s) for s in sequences], dtype=np.int64)
    return ids, lengths


def _attention(layer: TransformerLayer, x: Tensor, key_bias: np.ndarray, heads: int) -> Tensor:
    batch, length, hidden = x.shape
    head_dim = hidden // heads

    def split(t: Tensor) -> Tensor:
        return ops.transpose(ops.reshape(t, (batch, length, heads, head_dim)), (0, 2, 1, 3))

    q = split(ops.dense(layer.wq, layer.bq, x))                               # (B, H, M, dh)
    k_t = ops.transpose(split(ops.dense(layer.wk, layer.bk, x)), (0, 1, 3, 2))  # (B, H, dh, M)
    v = split(ops.dense(layer.wv, layer.bv, x))

    scores = ops.scale(ops.matmul(q, k_t), 1.0 / math.sqrt(head_dim))
    scores = ops.add(scores, key_bias.astype(scores.dtype))
    context = ops.matmul(ops.softmax(scores, axis=-1), v)                     # (B, H, M, dh)
    merged = ops.reshape(ops.transpose(context, (0, 2, 1, 3)), (batch, length, hidden))
    return ops.dense(layer.wo, layer.bo, merged)


def transformer_hidden_states(params: TransformerEncoderParams, ids: np.ndarray, lengths: np.ndarray) -> Tensor:
    """Final-norm outputs for every position of a padded (B, M) id batch."""
    batch, length = ids.shape
    positions = ops.take(params.position_embedding, np.arange(length), axis=0)   # (M, h)
    x = ops.add(ops.lookup(params.token_embedding, ids), positions)              # (B, M, h)

    key_valid = np.arange(length)[None, :] < lengths[:, None]
    key_bias = np.where(key_valid, 0.0, _MASKED_SCORE)[:, None, None, :]         # (B, 1, 1, M)

    for layer in params.layers:
        x = ops.add(x, _attention(layer, ops.layer_norm(x, layer.ln1_gain, layer.ln1_bias), key_bias,
                                  params.spec.heads))
        ffn_in = ops.layer_norm(x, layer.ln2_gain, layer.ln2_bias)
        x = ops.add(x, ops.dense(layer.w2, layer.b2, ops.gelu(ops.dense(layer.w1, layer.b1, ffn_in))))
    return ops.layer_norm(x, params.final_gain, params.final_bias)


def transformer_encode_batch(params: TransformerEncoderParams, sequences: Sequence[Sequence[int]]) -> Tensor:
    """[CLS] outputs for a batch of subword sequences, shape (batch, hidden)."""
    for seq in sequences:
        _check_sequence(params, seq)
    ids, lengths = _pad(sequences)
    return ops.select(transformer_hidden_states(params, ids, lengths), 0, axis=1)


def transformer_encode(
    params: TransformerEncoderParams, token_ids: Sequence[int], field_name: str = ""
) -> FieldEmbedding:
    return FieldEmbedding(field_name, ops.select(transformer_encode_batch(params, [token_ids]), 0, axis=0))


# ============================================================================
# Masked-LM pretraining
# ============================================================================

@dataclass(frozen=True)
class MaskedSequence:
    ids: tuple[int, ...]
    positions: tuple[int, ...]
    targets: tuple[int, ...]


@dataclass
class MaskedBatch:
    """Padded masked ids plus flat (row, position) -> target triples."""
    ids: np.ndarray
    lengths: np.ndarray
    rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    positions: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    targets: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @classmethod
    def from_sequences(cls, masked: Sequence[MaskedSequence]) -> "MaskedBatch":
        ids, lengths = _pad([m.ids for m in masked])
        rows = [row for row, m in enumerate(masked) for _ in m.positions]
        return cls(
            ids=ids,
            lengths=lengths,
            rows=np.array(rows, dtype=np.int64),
            positions=np.array([p for m in masked for p in m.positions], dtype=np.int64),
            targets=np.array([t for m in masked for t in m.targets], dtype=np.int64),
        )

    @property
    def num_targets(self) -> int:
        return int(self.targets.size)


def mask_tokens(
    ids: Sequence[int],
    mask_prob: float,
    rng_seed: int,
    vocab_size: int,
    first_regular_id: int = MASK_ID + 1,
) -> MaskedSequence:
    """
    Select each non-CLS position with probability mask_prob.

    Selected positions become [MASK] 80% of the time, a random regular
    token 10%, and stay unchanged 10%. The original ids are the targets.
    """
    if not 0.0 < mask_prob < 1.0:
        raise ValueError("mask_prob must be in (0, 1)")
    if not ids or ids[0] != CLS_ID:
        raise SequenceLengthError("masked sequence must start with [CLS]")

    rng = np.random.default_rng(rng_seed)
    out = list(ids)
    candidates = np.arange(1, len(ids))
    chosen = candidates[rng.random(candidates.size) < mask_prob]
    recipe = rng.random(chosen.size)
    replacements = rng.integers(first_regular_id, vocab_size, size=chosen.size)
    for pos, r, token in zip(chosen, recipe, replacements):
        if r < _MASK_SHARE:
            out[pos] = MASK_ID
        elif r < _MASK_SHARE + _RANDOM_SHARE:
            out[pos] = int(token)
    return MaskedSequence(tuple(out), tuple(int(p) for p in chosen), tuple(ids[p] for p in chosen))


def mlm_logits(params: TransformerEncoderParams, batch: MaskedBatch) -> Tensor:
    """(targets, V) logits at masked positions, decoded through the token embedding."""
    hidden = transformer_hidden_states(params, batch.ids, batch.lengths)        # (B, M, h)
    b, m, h = hidden.shape
    picked = ops.take(ops.reshape(hidden, (b * m, h)), batch.rows * m + batch.positions, axis=0)
    decoder = ops.transpose(params.token_embedding, (1, 0))                     # (V, h)
    return ops.dense(decoder, params.mlm_bias, picked)


def mlm_loss(params: TransformerEncoderParams, batch: MaskedBatch) -> Tensor:
    """Mean cross-entropy over masked positions."""
    if batch.num_targets == 0:
        raise LossError("masked batch has no target positions")
    log_probs = ops.log_softmax(mlm_logits(params, batch), axis=-1)
    n, vocab = log_probs.shape
    picked = ops.take(ops.reshape(log_probs, (n * vocab,)), np.arange(n) * vocab + batch.targets, axis=0)
    return ops.neg(ops.mean_all(picked))


def mask_batch(
    sequences: Sequence[Sequence[int]],
    mask_prob: float,
    rng: np.random.Generator,
    vocab_size: int,
    first_regular_id: int = MASK_ID + 1,
) -> Optional[MaskedBatch]:
    """Mask a batch with per-sequence seeds drawn from rng; None when nothing got selected."""
    seeds = rng.integers(0, 2**31 - 1, size=len(sequences))
    masked = [mask_tokens(seq, mask_prob, int(s), vocab_size, first_regular_id)
              for seq, s in zip(sequences, seeds)]
    batch = MaskedBatch.from_sequences(masked)
    return batch if batch.num_targets else None
