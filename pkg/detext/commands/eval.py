"""eval: offline metrics of a checkpoint on one split."""

import argparse
import json
import logging

from detext.commands.common import ensure_out_dir, load_model, load_split
from detext.run_config import EVAL_FILE, SPLITS, RunConfig
from detext.services.evaluation import evaluate

logger = logging.getLogger(__name__)

NAME = "eval"


def register(subparsers) -> None:
    parser = subparsers.add_parser(NAME, help="evaluate a checkpoint")
    parser.add_argument("--checkpoint")
    parser.add_argument("--split", choices=SPLITS, default="test")
    parser.add_argument("--k", type=int, default=10)
    parser.add_argument("--per-query", action="store_true")


def run(args: argparse.Namespace, config: RunConfig) -> int:
    model = load_model(config, args.checkpoint)
    report = evaluate(model, load_split(config, args.split), k=args.k, per_query=args.per_query)
    out = ensure_out_dir(config)
    report.to_csv(out / EVAL_FILE)
    print(report.to_table())
    logger.info(f"Eval {args.split}: {json.dumps(report.as_dict())}")
    return 0
