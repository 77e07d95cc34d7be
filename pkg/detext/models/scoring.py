"""
DeText model: field encoders, interaction, feature processing and the MLP head.

Source fields are encoded once per query and reused for every candidate
document; ``encode_counts`` records how many texts each encoder saw so this
can be checked.
"""

import logging
import threading
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from detext.data.schema import Document, RankingExample
from detext.data.tokenizer import (
    SubwordVocabulary,
    WordVocabulary,
    build_word_vocab,
    learn_subword_vocab,
    tokenize_subwords,
)
from detext.errors import ConfigError, EmptyDatasetError, ShapeMismatchError
from detext.models.cnn import CnnEncoderParams, cnn_encode_batch
from detext.models.features import FeatureProcessor, fit_standardizer, process_features
from detext.models.interaction import InteractionConfig, assemble_deep_features
from detext.models.spec import EncoderType, FieldEmbedding, ModelSpec
from detext.models.transformer import TransformerEncoderParams, transformer_encode_batch
from detext.nn import ops
from detext.nn.tensor import ParameterTensor, Tensor, cast_parameters, glorot, no_grad, uniform, zeros

logger = logging.getLogger(__name__)

SOURCE = "source"
TARGET = "target"


@dataclass
class ScoringHead:
    """One relu hidden layer then a scalar output; hidden_size 0 gives a linear head."""
    hidden_w: Optional[ParameterTensor]
    hidden_b: Optional[ParameterTensor]
    out_w: ParameterTensor
    out_b: ParameterTensor

    @classmethod
    def create(cls, input_width: int, hidden_size: int, rng: np.random.Generator,
               prefix: str = "head") -> "ScoringHead":
        if input_width <= 0:
            raise ConfigError("scoring head has no inputs (no deep features and no traditional features)")
        if hidden_size == 0:
            return cls(None, None, glorot(f"{prefix}/out_w", (1, input_width), rng), zeros(f"{prefix}/out_b", (1,)))
        return cls(
            hidden_w=glorot(f"{prefix}/hidden_w", (hidden_size, input_width), rng),
            hidden_b=zeros(f"{prefix}/hidden_b", (hidden_size,)),
            out_w=glorot(f"{prefix}/out_w", (1, hidden_size), rng),
            out_b=zeros(f"{prefix}/out_b", (1,)),
        )

    @property
    def input_width(self) -> int:
        return (self.hidden_w if self.hidden_w is not None else self.out_w).shape[1]

    def parameters(self) -> list[ParameterTensor]:
        if self.hidden_w is None:
            return [self.out_w, self.out_b]
        return [self.hidden_w, self.hidden_b, self.out_w, self.out_b]

    def forward(self, x: Tensor) -> Tensor:
        """(n, input_width) final features to (n,) scores."""
        if x.shape[-1] != self.input_width:
            raise ShapeMismatchError(f"scoring head expects {self.input_width} inputs, got {x.shape[-1]}")
        if self.hidden_w is not None:
            x = ops.relu(ops.dense(self.hidden_w, self.hidden_b, x))
        out = ops.dense(self.out_w, self.out_b, x)
        return ops.reshape(out, out.shape[:-1])


class DeTextModel:
    """
    One ranking model: encoder choice, interaction, feature processor, scoring head.

    Parameters are created from ``spec.seed`` so the same spec, vocabulary
    and feature width always rebuild the same initial model.
    """

    def __init__(
        self,
        spec: ModelSpec,
        num_features: int,
        word_vocab: Optional[WordVocabulary] = None,
        subword_vocab: Optional[SubwordVocabulary] = None,
        feature_stats: Optional[tuple[np.ndarray, np.ndarray]] = None,
        transformer: Optional[TransformerEncoderParams] = None,
    ):
        self.spec = spec
        self.num_features = num_features
        self.word_vocab = word_vocab
        self.subword_vocab = subword_vocab
        self.interaction = InteractionConfig.of(spec.interaction)
        self.encode_counts: Counter[tuple[str, str]] = Counter()
        self._count_lock = threading.Lock()

        rng = np.random.default_rng(spec.seed)
        self.cnn: dict[tuple[str, str], CnnEncoderParams] = {}
        self.transformer: Optional[TransformerEncoderParams] = None

        if spec.encoder == EncoderType.CNN:
            if word_vocab is None:
                raise ConfigError("a CNN model needs a word vocabulary")
            shared = uniform("cnn/word_embedding", (spec.word_dim, len(word_vocab)), rng) \
                if spec.share_word_embedding else None
            for role, fields in ((SOURCE, spec.source_fields), (TARGET, spec.target_fields)):
                for name in fields:
                    self.cnn[(role, name)] = CnnEncoderParams.create(
                        f"cnn/{role}/{name}", len(word_vocab), spec.word_dim, spec.num_filters, rng, shared
                    )
        elif spec.encoder == EncoderType.BERT:
            if subword_vocab is None:
                raise ConfigError("a BERT model needs a subword vocabulary")
            max_len = max(spec.max_source_len, spec.max_target_len)
            if transformer is None:
                transformer = TransformerEncoderParams.create(spec.transformer, len(subword_vocab), max_len, rng)
            elif (transformer.spec != spec.transformer or transformer.vocab_size != len(subword_vocab)
                  or transformer.max_len < max_len):
                raise ConfigError("pretrained transformer does not match the model spec")
            self.transformer = transformer

        self.features: Optional[FeatureProcessor] = None
        if spec.use_features and num_features > 0:
            mean, std = feature_stats if feature_stats is not None else (
                np.zeros(num_features), np.ones(num_features))
            self.features = FeatureProcessor.create(
                mean, std, normalize=spec.normalize_features, rescale=spec.rescale_features
            )
        elif spec.encoder == EncoderType.MLP:
            raise ConfigError("an MLP-only model needs at least one traditional feature")

        self.deep_width = self.interaction.width(
            len(spec.source_fields), len(spec.target_fields), spec.embedding_dim
        ) if spec.has_encoder else 0
        feature_width = self.features.width if self.features is not None else 0
        self.head = ScoringHead.create(self.deep_width + feature_width, spec.hidden_size, rng)

    # ------------------------------------------------------------------
    # Parameters
    # ------------------------------------------------------------------

    @property
    def has_encoder(self) -> bool:
        return self.spec.has_encoder

    def parameters(self) -> list[ParameterTensor]:
        """Every tensor, each once, in a stable order."""
        params: list[ParameterTensor] = []
        for encoder in self.cnn.values():
            params.extend(encoder.parameters())
        if self.transformer is not None:
            params.extend(self.transformer.parameters())
        if self.features is not None:
            params.extend(self.features.parameters())
        params.extend(self.head.parameters())
        seen: set[int] = set()
        unique = []
        for p in params:
            if id(p) not in seen:
                seen.add(id(p))
                unique.append(p)
        return unique

    def trainable_parameters(self) -> list[ParameterTensor]:
        return [p for p in self.parameters() if p.trainable]

    def named_parameters(self) -> dict[str, ParameterTensor]:
        return {p.name: p for p in self.parameters()}

    def astype(self, dtype) -> "DeTextModel":
        cast_parameters(self.parameters(), dtype)
        return self

    def num_weights(self) -> int:
        return sum(p.numel for p in self.parameters())

    # ------------------------------------------------------------------
    # Encoding
    # ------------------------------------------------------------------

    def token_ids(self, text: str, role: str) -> list[int]:
        max_len = self.spec.max_source_len if role == SOURCE else self.spec.max_target_len
        if self.spec.encoder == EncoderType.CNN:
            return self.word_vocab.encode(text, max_len)
        return tokenize_subwords(text, self.subword_vocab, max_len)

    def encode_texts(self, role: str, field_name: str, texts: Sequence[str]) -> Tensor:
        """Encode texts of one field as a (len(texts), d) batch."""
        with self._count_lock:
            self.encode_counts[(role, field_name)] += len(texts)
        ids = [self.token_ids(t, role) for t in texts]
        if self.spec.encoder == EncoderType.CNN:
            return cnn_encode_batch(self.cnn[(role, field_name)], ids)
        if self.transformer is not None:
            return transformer_encode_batch(self.transformer, ids)
        raise ConfigError("an MLP-only model has no text encoder")

    def encode_field(self, role: str, field_name: str, text: str) -> FieldEmbedding:
        """Encode one text alone; serving uses this so results never depend on batching."""
        return FieldEmbedding(field_name, ops.select(self.encode_texts(role, field_name, [text]), 0, axis=0))

    def encode_document(self, document: Document) -> list[np.ndarray]:
        """Per-target-field embeddings of one document, as stored by precompute."""
        with no_grad():
            return [self.encode_field(TARGET, f, document.field(f)).vector.numpy()
                    for f in self.spec.target_fields]

    def encode_sources(self, example: RankingExample) -> list[np.ndarray]:
        with no_grad():
            return [self.encode_field(SOURCE, f, example.field(f)).vector.numpy()
                    for f in self.spec.source_fields]

    # ------------------------------------------------------------------
    # Scoring
    # ------------------------------------------------------------------

    def score_embeddings(
        self,
        sources: Sequence,
        targets: Sequence,
        features: np.ndarray,
    ) -> Tensor:
        """
        Scores for n documents from precomputed pieces.

        sources/targets hold one (n, d) block per field; features is (n, F).
        """
        parts: list[Tensor] = []
        if self.has_encoder:
            parts.append(assemble_deep_features(sources, targets, self.interaction))
        if self.features is not None:
            parts.append(process_features(features, self.features))
        final = parts[0] if len(parts) == 1 else ops.concat(parts, axis=-1)
        return self.head.forward(final)

    def forward_batch(self, examples: Sequence[RankingExample]) -> tuple[Tensor, list[int]]:
        """
        Scores of every document of every query, concatenated in order.

        Returns the (N,) score tensor and query offsets (len(examples) + 1).
        """
        counts = [len(ex.documents) for ex in examples]
        offsets = [0] + list(np.cumsum(counts, dtype=np.int64).tolist())
        docs = [doc for ex in examples for doc in ex.documents]

        sources: list[Tensor] = []
        targets: list[Tensor] = []
        if self.has_encoder:
            owner = np.repeat(np.arange(len(examples)), counts)
            for f in self.spec.source_fields:
                per_query = self.encode_texts(SOURCE, f, [ex.field(f) for ex in examples])
                sources.append(ops.take(per_query, owner, axis=0))
            for f in self.spec.target_fields:
                targets.append(self.encode_texts(TARGET, f, [doc.field(f) for doc in docs]))
        return self.score_embeddings(sources, targets, self.feature_matrix(docs)), offsets

    def feature_matrix(self, docs: Sequence[Document]) -> np.ndarray:
        if self.features is None:
            return np.zeros((len(docs), 0))
        matrix = np.asarray([doc.traditional_features for doc in docs], dtype=np.float64)
        return matrix.reshape(len(docs), -1)

    def describe(self) -> dict:
        return {
            "encoder": self.spec.encoder.value,
            "tensors": len(self.parameters()),
            "weights": self.num_weights(),
            "deep_width": self.deep_width,
            "features": self.features.width if self.features is not None else 0,
        }


def score_document(model: DeTextModel, source_embs: Sequence, document: Document) -> float:
    """
    Score one document given the query's source embeddings (one per source field).

    Target fields are encoded on the fly.
    """
    with no_grad():
        sources = [np.asarray(e.vector.numpy() if isinstance(e, FieldEmbedding) else
                              e.numpy() if isinstance(e, Tensor) else e).reshape(1, -1)
                   for e in source_embs]
        targets = [t.reshape(1, -1) for t in model.encode_document(document)] if model.has_encoder else []
        score = model.score_embeddings(sources, targets, model.feature_matrix([document]))
    return float(score.numpy()[0])


def score_query(model: DeTextModel, example: RankingExample) -> np.ndarray:
    """One score per document, in document order; sources encoded once."""
    with no_grad():
        scores, _ = model.forward_batch([example])
    return scores.numpy().copy()


def check_fields(spec: ModelSpec, examples: Sequence[RankingExample]) -> None:
    """Raise ConfigError when a text field named by the model spec is missing from the data."""
    if not spec.has_encoder or not examples:
        return
    first = examples[0]
    sources = {f.field_name for f in first.source_fields}
    targets = set(first.documents[0].field_names) if first.documents else set()
    missing = [f"source:{name}" for name in spec.source_fields if name not in sources]
    missing += [f"target:{name}" for name in spec.target_fields if name not in targets]
    if missing:
        raise ConfigError(
            f"model spec reads fields absent from the data ({first.query_id})",
            [", ".join(missing), f"available: source={sorted(sources)} target={sorted(targets)}"],
        )


def build_model(
    spec: ModelSpec,
    train: Sequence[RankingExample],
    transformer: Optional[TransformerEncoderParams] = None,
    subword_vocab: Optional[SubwordVocabulary] = None,
) -> DeTextModel:
    """
    Fresh model for a training set: vocabulary from its texts, feature statistics from its documents.

    A pretrained transformer must come with the subword vocabulary it was trained on.
    """
    if not train:
        raise EmptyDatasetError("training set is empty")
    num_features = len(train[0].documents[0].traditional_features)
    check_fields(spec, train)

    word_vocab = None
    if spec.encoder == EncoderType.CNN:
        word_vocab = build_word_vocab(_field_texts(train, spec), spec.min_count)
    elif spec.encoder == EncoderType.BERT and subword_vocab is None:
        if transformer is not None:
            raise ConfigError("a pretrained transformer needs its subword vocabulary")
        subword_vocab = learn_subword_vocab(_field_texts(train, spec), spec.num_merges)

    stats = fit_standardizer(train) if spec.use_features and num_features else None
    model = DeTextModel(spec, num_features, word_vocab, subword_vocab, stats, transformer)
    logger.info(f"Built model: {model.describe()}")
    return model


def _field_texts(examples: Iterable[RankingExample], spec: ModelSpec) -> Iterable[str]:
    """Texts of the fields the model reads (vocabulary input)."""
    for ex in examples:
        for f in spec.source_fields:
            yield ex.field(f)
        for doc in ex.documents:
            for f in spec.target_fields:
                yield doc.field(f)
