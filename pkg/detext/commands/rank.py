"""rank: rank the queries of a split and print JSON-lines."""

import argparse
import json
import logging
from pathlib import Path
from typing import Optional

from detext.commands.common import load_model, load_split
from detext.errors import DataError
from detext.models.scoring import DeTextModel
from detext.run_config import FIRST_PASS_FILE, SPLITS, STORE_FILE, RunConfig
from detext.services.checkpoint import load_checkpoint
from detext.services.embedding_store import EmbeddingStoreManager
from detext.services.ranking_service import RankingService, RankMode

logger = logging.getLogger(__name__)

NAME = "rank"


def register(subparsers) -> None:
    parser = subparsers.add_parser(NAME, help="rank candidates with a trained model")
    parser.add_argument("--checkpoint")
    parser.add_argument("--split", choices=SPLITS, default="test")
    parser.add_argument("--mode", choices=[m.value for m in RankMode])
    parser.add_argument("--k", type=int, help="two-pass rescoring depth")
    parser.add_argument("--store", help=f"embedding store (default: <out>/{STORE_FILE})")
    parser.add_argument("--first-pass", help=f"first-pass checkpoint (default: <out>/{FIRST_PASS_FILE})")
    parser.add_argument("--query-id", action="append", help="rank only these queries")
    parser.add_argument("--limit", type=int, help="rank at most this many queries")


def build_service(config: RunConfig, mode: RankMode, checkpoint: Optional[str] = None,
                  store: Optional[str] = None, first_pass: Optional[str] = None) -> RankingService:
    """Load what the ranking mode needs; the store is also used by two-pass when it exists."""
    model = load_model(config, checkpoint)
    store_path = Path(store) if store else config.artifact(STORE_FILE)
    manager = None
    if mode == RankMode.PRECOMPUTE or (mode == RankMode.TWO_PASS and store_path.exists()):
        manager = EmbeddingStoreManager(store_path)
    first: Optional[DeTextModel] = None
    if mode == RankMode.TWO_PASS:
        first = load_checkpoint(first_pass or config.artifact(FIRST_PASS_FILE))
    return RankingService(model, manager, first, config.serving.two_pass_k)


def run(args: argparse.Namespace, config: RunConfig) -> int:
    config = config.override("serving", mode=args.mode, two_pass_k=args.k)
    mode = config.serving.mode
    service = build_service(config, mode, args.checkpoint, args.store, args.first_pass)

    examples = load_split(config, args.split)
    if args.query_id:
        wanted = set(args.query_id)
        examples = [ex for ex in examples if ex.query_id in wanted]
        if not examples:
            raise DataError(f"none of the queries {sorted(wanted)} are in the {args.split} split")
    if args.limit is not None:
        examples = examples[:args.limit]

    for example in examples:
        for position, ranked in enumerate(service.rank(example, mode), start=1):
            print(json.dumps({
                "query_id": example.query_id,
                "rank": position,
                "doc_id": ranked.doc_id,
                "score": ranked.score,
                "stage": ranked.stage,
            }))
    logger.info(f"Ranked {len(examples)} queries with mode {mode.value}")
    return 0
