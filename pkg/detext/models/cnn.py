"""
Text CNN field encoder.

One filter bank of width-3 windows per field, relu, then max-pool over
window positions. Windows that reach past a sequence's last real token are
zeroed before pooling, so trailing PAD never changes the embedding.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from detext.data.tokenizer import PAD_ID
from detext.models.spec import FieldEmbedding
from detext.nn import ops
from detext.nn.tensor import ParameterTensor, Tensor, glorot, uniform, zeros

WINDOW = 3


@dataclass
class CnnEncoderParams:
    """Word embedding E (d x V), filters (f x 3d) and filter biases (f)."""
    embedding: ParameterTensor
    filters: ParameterTensor
    bias: ParameterTensor

    @classmethod
    def create(
        cls,
        prefix: str,
        vocab_size: int,
        word_dim: int,
        num_filters: int,
        rng: np.random.Generator,
        embedding: Optional[ParameterTensor] = None,
    ) -> "CnnEncoderParams":
        """Fresh encoder; pass `embedding` to share one word table across fields."""
        if embedding is None:
            embedding = uniform(f"{prefix}/embedding", (word_dim, vocab_size), rng)
        return cls(
            embedding=embedding,
            filters=glorot(f"{prefix}/filters", (num_filters, WINDOW * embedding.shape[0]), rng),
            bias=zeros(f"{prefix}/bias", (num_filters,)),
        )

    @property
    def num_filters(self) -> int:
        return self.filters.shape[0]

    @property
    def word_dim(self) -> int:
        return self.embedding.shape[0]

    def parameters(self) -> list[ParameterTensor]:
        return [self.embedding, self.filters, self.bias]


def effective_length(token_ids: Sequence[int]) -> int:
    """Position after the last non-PAD token, never below the window size."""
    last = 0
    for i, tok in enumerate(token_ids):
        if tok != PAD_ID:
            last = i + 1
    return max(last, WINDOW)


def cnn_encode_batch(params: CnnEncoderParams, sequences: Sequence[Sequence[int]]) -> Tensor:
    """Encode a batch of word-id sequences into a (batch, f) tensor."""
    lengths = np.array([effective_length(s) for s in sequences], dtype=np.int64)
    width = int(lengths.max()) if len(sequences) else WINDOW
    ids = np.full((len(sequences), width), PAD_ID, dtype=np.int64)
    for row, seq in enumerate(sequences):
        n = min(len(seq), width)
        ids[row, :n] = seq[:n]

    x = ops.lookup(params.embedding, ids)                      # (B, M, d)
    windows = ops.unfold_windows(x, WINDOW)                    # (B, M-2, 3d)
    activations = ops.relu(ops.dense(params.filters, params.bias, windows))
    valid = np.arange(width - WINDOW + 1)[None, :] < (lengths - WINDOW + 1)[:, None]
    masked = ops.mul(activations, valid[:, :, None].astype(activations.dtype))
    return ops.max_axis(masked, axis=1)


def cnn_encode(params: CnnEncoderParams, token_ids: Sequence[int], field_name: str = "") -> FieldEmbedding:
    """
    Embed one field's word ids.

    Sequences shorter than the window are PAD-padded to length 3, so empty
    text still yields relu(bias) pooled over a single all-PAD window.
    """
    return FieldEmbedding(field_name, ops.select(cnn_encode_batch(params, [token_ids]), 0, axis=0))
