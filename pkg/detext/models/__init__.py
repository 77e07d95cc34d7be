"""Encoders, interaction, feature processing, scoring and ranking losses."""

from detext.models.ltr import LtrConfig, LtrMode, ranking_loss
from detext.models.scoring import DeTextModel, build_model, score_document, score_query
from detext.models.spec import EncoderType, FieldEmbedding, ModelSpec, TransformerSpec

__all__ = [
    "DeTextModel",
    "EncoderType",
    "FieldEmbedding",
    "LtrConfig",
    "LtrMode",
    "ModelSpec",
    "TransformerSpec",
    "build_model",
    "ranking_loss",
    "score_document",
    "score_query",
]
