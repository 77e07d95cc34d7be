"""precompute: build or refresh the document-embedding store."""

import argparse
import logging

from detext.commands.common import all_documents, ensure_out_dir, load_model
from detext.run_config import STORE_FILE, RunConfig
from detext.services.embedding_store import EmbeddingStoreManager

logger = logging.getLogger(__name__)

NAME = "precompute"


def register(subparsers) -> None:
    parser = subparsers.add_parser(NAME, help="precompute document embeddings")
    parser.add_argument("--checkpoint")
    parser.add_argument("--store", help=f"store path (default: <out>/{STORE_FILE})")


def run(args: argparse.Namespace, config: RunConfig) -> int:
    model = load_model(config, args.checkpoint)
    path = args.store or ensure_out_dir(config) / STORE_FILE
    with EmbeddingStoreManager(path) as manager:
        store = manager.refresh(model, all_documents(config))
        print(f"{len(store)} documents -> {store.path} (fingerprint {store.fingerprint[:12]})")
    return 0
