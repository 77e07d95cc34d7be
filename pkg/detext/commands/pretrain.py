"""pretrain: masked-LM pretraining of a transformer encoder."""

import argparse
import logging
from pathlib import Path

from detext.commands.common import ensure_out_dir, load_split
from detext.data.dataset import corpus_texts
from detext.errors import DataError
from detext.run_config import ENCODER_FILE, PRETRAIN_LOG_FILE, RunConfig
from detext.services.checkpoint import save_encoder
from detext.services.trainer import pretrain_mlm

logger = logging.getLogger(__name__)

NAME = "pretrain"


def register(subparsers) -> None:
    parser = subparsers.add_parser(NAME, help="masked-LM pretraining of the transformer encoder")
    parser.add_argument("--steps", type=int)
    parser.add_argument("--corpus", help="text file, one sentence per line (default: training texts)")


def _corpus(config: RunConfig, given: str | None) -> list[str]:
    path = given or config.data.pretrain_corpus
    if path is None:
        return [t for t in corpus_texts(load_split(config, "train")) if t]
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DataError(f"cannot read pretraining corpus {path}: {e}") from e
    return [line for line in lines if line.strip()]


def run(args: argparse.Namespace, config: RunConfig) -> int:
    config = config.override(
        "pretrain",
        steps=args.steps,
        transformer=config.model.transformer.model_dump(),
        max_len=max(config.model.max_source_len, config.model.max_target_len),
    )
    corpus = _corpus(config, args.corpus)
    result = pretrain_mlm(corpus, config.pretrain, seed=config.seed)

    out = ensure_out_dir(config)
    save_encoder(result.params, result.vocab, out / ENCODER_FILE)
    result.loss_frame().to_csv(out / PRETRAIN_LOG_FILE, index=False, float_format="%.8f")
    if result.losses:
        logger.info(f"Pretraining done: final mlm_loss={result.losses[-1]:.4f}")
    return 0
