"""gen: write a synthetic clickthrough corpus as JSON-lines splits."""

import argparse
import logging
from pathlib import Path

from detext.data.dataset import write_dataset
from detext.data.synthetic import generate_pretraining_corpus, generate_synthetic_corpus
from detext.run_config import SPLITS, RunConfig

logger = logging.getLogger(__name__)

NAME = "gen"
PRETRAIN_CORPUS_FILE = "pretrain.txt"


def register(subparsers) -> None:
    parser = subparsers.add_parser(NAME, help="generate a synthetic corpus")
    parser.add_argument("--train-queries", type=int)
    parser.add_argument("--dev-queries", type=int)
    parser.add_argument("--test-queries", type=int)
    parser.add_argument("--docs-per-query", type=int)
    parser.add_argument("--noise", type=float)


def run(args: argparse.Namespace, config: RunConfig) -> int:
    config = config.override(
        "synthetic",
        train_queries=args.train_queries,
        dev_queries=args.dev_queries,
        test_queries=args.test_queries,
        docs_per_query=args.docs_per_query,
        noise=args.noise,
    )
    # an explicit --out redirects the corpus; otherwise it lands in the data dir
    target = Path(args.out) if args.out else Path(config.data.dir)
    target.mkdir(parents=True, exist_ok=True)

    spec = config.synthetic.to_spec()
    splits = generate_synthetic_corpus(spec, config.seed)
    for split, examples in zip(SPLITS, splits):
        path = target / getattr(config.data, split)
        count = write_dataset(examples, path)
        logger.info(f"Wrote {count} {split} queries to {path}")

    if config.synthetic.pretrain_sentences:
        sentences = generate_pretraining_corpus(spec, config.seed, config.synthetic.pretrain_sentences)
        path = target / PRETRAIN_CORPUS_FILE
        path.write_text("\n".join(sentences) + "\n", encoding="utf-8")
        logger.info(f"Wrote {len(sentences)} pretraining sentences to {path}")
    return 0
