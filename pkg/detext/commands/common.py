"""Helpers shared by the command handlers."""

import logging
from pathlib import Path
from typing import Optional

from detext.data.dataset import load_dataset
from detext.data.schema import Document, RankingExample
from detext.errors import DataError
from detext.models.scoring import DeTextModel
from detext.run_config import CHECKPOINT_FILE, SPLITS, RunConfig
from detext.services.checkpoint import load_checkpoint
from detext.services.embedding_store import collect_documents

logger = logging.getLogger(__name__)


def load_split(config: RunConfig, split: str) -> list[RankingExample]:
    path = config.data.split_path(split)
    try:
        return load_dataset(path)
    except OSError as e:
        raise DataError(f"cannot read {split} split {path}: {e}") from e


def load_optional_split(config: RunConfig, split: str) -> list[RankingExample]:
    """The split's examples, or [] when its file does not exist."""
    if not config.data.split_path(split).exists():
        logger.warning(f"No {split} split at {config.data.split_path(split)}")
        return []
    return load_split(config, split)


def all_documents(config: RunConfig) -> list[Document]:
    """Unique documents across every split present on disk."""
    examples: list[RankingExample] = []
    for split in SPLITS:
        examples.extend(load_optional_split(config, split))
    return collect_documents(examples)


def checkpoint_path(config: RunConfig, given: Optional[str]) -> Path:
    return Path(given) if given else config.artifact(CHECKPOINT_FILE)


def load_model(config: RunConfig, given: Optional[str] = None) -> DeTextModel:
    return load_checkpoint(checkpoint_path(config, given))


def ensure_out_dir(config: RunConfig) -> Path:
    config.out_dir.mkdir(parents=True, exist_ok=True)
    return config.out_dir
