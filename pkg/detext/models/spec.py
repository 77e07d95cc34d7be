"""Model topology descriptors shared by run configs and checkpoints."""

from dataclasses import dataclass
from enum import Enum

from pydantic import BaseModel, ConfigDict, Field, model_validator

from config.settings import (
    DEFAULT_HIDDEN_SIZE,
    DEFAULT_MAX_SOURCE_LEN,
    DEFAULT_MAX_TARGET_LEN,
    DEFAULT_MIN_COUNT,
    DEFAULT_NUM_FILTERS,
    DEFAULT_NUM_MERGES,
    DEFAULT_WORD_DIM,
)
from detext.nn.tensor import Tensor


class EncoderType(str, Enum):
    CNN = "cnn"
    BERT = "bert"
    MLP = "mlp"


class TransformerSpec(BaseModel):
    """Transformer size; defaults are the tiny-LiBERT preset."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    layers: int = Field(2, ge=1)
    hidden: int = Field(64, ge=1)
    heads: int = Field(2, ge=1)

    @model_validator(mode="after")
    def _heads_divide_hidden(self) -> "TransformerSpec":
        if self.hidden % self.heads:
            raise ValueError(f"hidden ({self.hidden}) must be divisible by heads ({self.heads})")
        return self


TINY_LIBERT = TransformerSpec(layers=2, hidden=64, heads=2)
LIBERT = TransformerSpec(layers=6, hidden=512, heads=8)


class ModelSpec(BaseModel):
    """Everything needed to rebuild a DeText model's topology."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    encoder: EncoderType = EncoderType.CNN
    source_fields: tuple[str, ...] = ("query",)
    target_fields: tuple[str, ...] = ("title", "headline")
    interaction: tuple[str, ...] = ("cosine", "hadamard")

    # text embedding
    word_dim: int = Field(DEFAULT_WORD_DIM, ge=1)
    num_filters: int = Field(DEFAULT_NUM_FILTERS, ge=1)
    share_word_embedding: bool = True
    transformer: TransformerSpec = TINY_LIBERT
    max_source_len: int = Field(DEFAULT_MAX_SOURCE_LEN, ge=1)
    max_target_len: int = Field(DEFAULT_MAX_TARGET_LEN, ge=1)
    min_count: int = Field(DEFAULT_MIN_COUNT, ge=1)
    num_merges: int = Field(DEFAULT_NUM_MERGES, ge=0)

    # traditional features
    use_features: bool = True
    normalize_features: bool = True
    rescale_features: bool = True

    # scoring head; 0 means a linear head
    hidden_size: int = Field(DEFAULT_HIDDEN_SIZE, ge=0)

    seed: int = 0

    @model_validator(mode="after")
    def _check_fields(self) -> "ModelSpec":
        if self.encoder != EncoderType.MLP and (not self.source_fields or not self.target_fields):
            raise ValueError("deep encoders need at least one source and one target field")
        if not self.interaction:
            raise ValueError("at least one interaction method must be enabled")
        if self.encoder == EncoderType.MLP and not self.use_features:
            raise ValueError("an MLP-only model needs traditional features")
        return self

    @property
    def has_encoder(self) -> bool:
        return self.encoder != EncoderType.MLP

    @property
    def embedding_dim(self) -> int:
        if self.encoder == EncoderType.CNN:
            return self.num_filters
        if self.encoder == EncoderType.BERT:
            return self.transformer.hidden
        return 0


@dataclass(frozen=True)
class FieldEmbedding:
    """The fixed-size embedding of one text field."""
    field_name: str
    vector: Tensor

    @property
    def dim(self) -> int:
        return self.vector.shape[-1]
