"""
Paired offline comparisons.

Each suite trains a list of model variants on the same data with the same
optimization settings and reports dev metrics plus the relative lift of
every variant over the suite's first (baseline) variant.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from detext.data.dataset import corpus_texts
from detext.data.schema import RankingExample
from detext.errors import ConfigError, EmptyDatasetError
from detext.models.spec import EncoderType, ModelSpec
from detext.models.transformer import TransformerEncoderParams
from detext.services.evaluation import evaluate, percentage_lift
from detext.services.trainer import PretrainConfig, TrainConfig, pretrain_mlm, train

logger = logging.getLogger(__name__)

RESULT_COLUMNS = ["suite", "variant", "encoder", "weights", "dev_ndcg10", "dev_mrr10", "dev_auc", "lift_pct"]


class Suite(str, Enum):
    ENCODERS = "encoders"
    PRETRAINING = "pretraining"
    INTERACTION = "interaction"
    FEATURES = "features"
    FIELDS = "fields"
    FILTERS = "filters"


@dataclass(frozen=True)
class Variant:
    name: str
    spec: ModelSpec
    pretrained: bool = False


def _derive(base: ModelSpec, **update) -> ModelSpec:
    try:
        return ModelSpec.model_validate({**base.model_dump(), **update})
    except ValueError as e:
        raise ConfigError(f"invalid ablation variant {update}", [str(e)]) from e


def suite_variants(suite: Suite | str, base: ModelSpec) -> list[Variant]:
    """Variants of a suite, baseline first."""
    suite = Suite(suite)
    if suite == Suite.ENCODERS:
        return [
            Variant("mlp", _derive(base, encoder=EncoderType.MLP)),
            Variant("cnn", _derive(base, encoder=EncoderType.CNN)),
            Variant("bert-pretrained", _derive(base, encoder=EncoderType.BERT), pretrained=True),
        ]
    if suite == Suite.PRETRAINING:
        bert = _derive(base, encoder=EncoderType.BERT)
        return [Variant("bert-random-init", bert), Variant("bert-pretrained", bert, pretrained=True)]
    if suite == Suite.INTERACTION:
        return [
            Variant("cosine", _derive(base, interaction=("cosine",))),
            Variant("cosine+hadamard", _derive(base, interaction=("cosine", "hadamard"))),
            Variant("cosine+hadamard+concat", _derive(base, interaction=("cosine", "hadamard", "concat"))),
        ]
    if suite == Suite.FEATURES:
        variants = [
            Variant("raw", _derive(base, use_features=True, normalize_features=False, rescale_features=False)),
            Variant("normalized", _derive(base, use_features=True, normalize_features=True,
                                          rescale_features=False)),
            Variant("normalized+rescaled", _derive(base, use_features=True, normalize_features=True,
                                                   rescale_features=True)),
        ]
        if base.has_encoder:
            variants.append(Variant("no-features", _derive(base, use_features=False)))
        return variants
    if suite == Suite.FIELDS:
        if len(base.target_fields) < 2:
            raise ConfigError("the fields suite needs at least two target fields in the model spec")
        return [
            Variant(f"single:{base.target_fields[0]}", _derive(base, target_fields=base.target_fields[:1])),
            Variant("multiple:" + "+".join(base.target_fields), base),
        ]
    counts = sorted({max(1, base.num_filters // 2), base.num_filters, base.num_filters * 2})
    return [Variant(f"filters={base.num_filters}", _derive(base, encoder=EncoderType.CNN))] + [
        Variant(f"filters={n}", _derive(base, encoder=EncoderType.CNN, num_filters=n))
        for n in counts if n != base.num_filters
    ]


def run_variants(
    variants: Sequence[Variant],
    train_set: Sequence[RankingExample],
    dev_set: Sequence[RankingExample],
    config: TrainConfig,
    pretrain: Optional[PretrainConfig] = None,
    suite: str = "custom",
    k: int = 10,
) -> pd.DataFrame:
    """Train every variant and tabulate dev metrics; lift is against the first row."""
    if not variants:
        raise ConfigError("an ablation needs at least one variant")
    if not dev_set:
        raise EmptyDatasetError("ablations need a dev set")

    encoder_cache: dict = {}
    rows = []
    for variant in variants:
        transformer = vocab = None
        if variant.pretrained:
            pre = (pretrain or PretrainConfig()).model_copy(update={
                "transformer": variant.spec.transformer,
                "max_len": max(variant.spec.max_source_len, variant.spec.max_target_len),
            })
            key = pre.model_dump_json()
            if key not in encoder_cache:
                result = pretrain_mlm(list(corpus_texts(train_set)), pre, seed=config.seed)
                encoder_cache[key] = (result.params, result.vocab)
            # each variant fine-tunes its own copy of the pretrained tensors
            params, vocab = encoder_cache[key]
            transformer = _copy_encoder(params)

        logger.info(f"Ablation {suite}: training variant {variant.name}")
        trained = train(train_set, dev_set, config, variant.spec, transformer=transformer, subword_vocab=vocab)
        report = evaluate(trained.model, dev_set, k=k)
        rows.append({
            "suite": suite,
            "variant": variant.name,
            "encoder": variant.spec.encoder.value,
            "weights": trained.model.num_weights(),
            "dev_ndcg10": report.ndcg,
            "dev_mrr10": report.mrr,
            "dev_auc": report.auc,
        })

    frame = pd.DataFrame(rows)
    baseline = frame["dev_ndcg10"].iloc[0]
    frame["lift_pct"] = [percentage_lift(v, baseline) for v in frame["dev_ndcg10"]]
    return frame[RESULT_COLUMNS]


def run_suite(
    suite: Suite | str,
    base: ModelSpec,
    train_set: Sequence[RankingExample],
    dev_set: Sequence[RankingExample],
    config: TrainConfig,
    pretrain: Optional[PretrainConfig] = None,
) -> pd.DataFrame:
    suite = Suite(suite)
    return run_variants(suite_variants(suite, base), train_set, dev_set, config, pretrain, suite.value,
                        k=config.eval_k)


def _copy_encoder(params: TransformerEncoderParams) -> TransformerEncoderParams:
    fresh = TransformerEncoderParams.create(params.spec, params.vocab_size, params.max_len, np.random.default_rng(0))
    for target, source in zip(fresh.parameters(), params.parameters()):
        target.assign(source.data.copy())
    return fresh
