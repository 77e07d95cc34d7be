"""train: fit a ranking model, optionally with the two-pass first ranker."""

import argparse
import logging

from detext.commands.common import ensure_out_dir, load_optional_split, load_split
from detext.models.spec import EncoderType
from detext.run_config import (
    CHECKPOINT_FILE,
    FIRST_PASS_FILE,
    FIRST_PASS_LOG_FILE,
    TRAIN_LOG_FILE,
    RunConfig,
)
from detext.services.checkpoint import load_encoder, save_checkpoint
from detext.services.ranking_service import train_first_pass
from detext.services.trainer import train

logger = logging.getLogger(__name__)

NAME = "train"


def register(subparsers) -> None:
    parser = subparsers.add_parser(NAME, help="train a ranking model")
    parser.add_argument("--encoder", choices=[e.value for e in EncoderType])
    parser.add_argument("--filters", type=int, help="CNN filter count")
    parser.add_argument("--hidden-size", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--lr-bert", type=float)
    parser.add_argument("--ltr", choices=["pointwise", "pairwise", "listwise"])
    parser.add_argument("--lambda-rank", action="store_true", default=None)
    parser.add_argument("--pretrained", help="encoder checkpoint written by the pretrain command")
    parser.add_argument("--first-pass", action="store_true", help="also train the two-pass first ranker")


def run(args: argparse.Namespace, config: RunConfig) -> int:
    config = config.override("model", encoder=args.encoder, num_filters=args.filters,
                             hidden_size=args.hidden_size)
    config = config.override("train", epochs=args.epochs, lr=args.lr, lr_bert=args.lr_bert,
                             ltr=args.ltr, lambda_rank=args.lambda_rank)
    train_set = load_split(config, "train")
    dev_set = load_optional_split(config, "dev")

    transformer = vocab = None
    if args.pretrained:
        transformer, vocab = load_encoder(args.pretrained)
        logger.info(f"Fine-tuning pretrained encoder from {args.pretrained}")

    logger.info(f"Train config: {config.train.model_dump(mode='json')}")
    logger.info(f"Model spec: {config.model.model_dump(mode='json')}")
    result = train(train_set, dev_set, config.train, config.model,
                   transformer=transformer, subword_vocab=vocab)

    out = ensure_out_dir(config)
    save_checkpoint(result.model, out / CHECKPOINT_FILE)
    result.write_log(out / TRAIN_LOG_FILE)

    if args.first_pass and config.model.encoder != EncoderType.MLP:
        first = train_first_pass(train_set, dev_set, config.train, config.model)
        save_checkpoint(first.model, out / FIRST_PASS_FILE)
        first.write_log(out / FIRST_PASS_LOG_FILE)
    return 0
