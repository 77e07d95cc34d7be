"""
Error hierarchy for the DeText ranker.

Every error carries a machine-readable ``code`` and the process
``exit_code`` the CLI returns for it: 2 config, 3 data, 4 runtime.
"""

from typing import Iterable, Optional


class DeTextError(Exception):
    """Base exception for all ranker errors."""

    exit_code = 4
    default_code = "DETEXT_ERROR"

    def __init__(self, message: str, code: Optional[str] = None):
        self.message = message
        self.code = code or self.default_code
        super().__init__(message)


# ============================================================================
# Configuration (exit 2)
# ============================================================================

class ConfigError(DeTextError):
    """Run configuration failed validation."""

    exit_code = 2
    default_code = "CONFIG_ERROR"

    def __init__(self, message: str, problems: Optional[list[str]] = None):
        self.problems = problems or []
        if self.problems:
            message = f"{message}: " + "; ".join(self.problems)
        super().__init__(message)


# ============================================================================
# Data (exit 3)
# ============================================================================

class DataError(DeTextError):
    """Problem with input data."""

    exit_code = 3
    default_code = "DATA_ERROR"


class DatasetParseError(DataError):
    """A dataset line could not be parsed."""

    default_code = "DATASET_PARSE"

    def __init__(self, line_number: int, reason: str):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {reason}")


class InvariantViolation(DataError):
    """A RankingExample broke one of its invariants."""

    default_code = "INVARIANT_VIOLATION"

    def __init__(self, query_id: str, rule: str):
        self.query_id = query_id
        self.rule = rule
        super().__init__(f"query {query_id!r} violates {rule}")


class EmptyDatasetError(DataError):
    """An operation needs at least one example."""

    default_code = "EMPTY_DATASET"


class SyntheticSpecError(DataError):
    """Synthetic corpus parameters are invalid."""

    default_code = "INVALID_SYNTHETIC_SPEC"


class VocabularyError(DataError):
    """Vocabulary file is malformed."""

    default_code = "VOCABULARY_ERROR"


# ============================================================================
# Runtime (exit 4)
# ============================================================================

class RuntimeFailure(DeTextError):
    """Failure while computing, training or serving."""

    exit_code = 4
    default_code = "RUNTIME_ERROR"


class ShapeMismatchError(RuntimeFailure):
    """Operand shapes do not agree."""

    default_code = "SHAPE_MISMATCH"


class TokenRangeError(RuntimeFailure):
    """A token id is outside the embedding table."""

    default_code = "TOKEN_OUT_OF_RANGE"


class SequenceLengthError(RuntimeFailure):
    """Sequence is too long or malformed for the encoder."""

    default_code = "BAD_SEQUENCE"


class BackwardError(RuntimeFailure):
    """Backward pass requested without a recorded computation."""

    default_code = "NO_GRAPH"


class LossError(RuntimeFailure):
    """Loss is undefined for the given labels."""

    default_code = "LOSS_UNDEFINED"


class MetricError(RuntimeFailure):
    """Metric is undefined for the given inputs."""

    default_code = "METRIC_UNDEFINED"


class DivergenceError(RuntimeFailure):
    """Training loss became NaN or infinite."""

    default_code = "DIVERGED"

    def __init__(self, step: int, epoch: int, query_ids: Iterable[str]):
        self.step = step
        self.epoch = epoch
        self.query_ids = list(query_ids)
        preview = ", ".join(self.query_ids[:5])
        super().__init__(
            f"loss is not finite at step {step} (epoch {epoch}); batch starts with [{preview}]"
        )


class ModelCapabilityError(RuntimeFailure):
    """The model lacks a component the operation needs."""

    default_code = "MODEL_CAPABILITY"


class CheckpointError(RuntimeFailure):
    """Checkpoint could not be written or read."""

    default_code = "CHECKPOINT_ERROR"


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version is not supported."""

    default_code = "CHECKPOINT_VERSION"

    def __init__(self, found: int, expected: int):
        self.found = found
        self.expected = expected
        super().__init__(f"checkpoint version {found} is not supported (expected {expected})")


class CheckpointCorruptError(CheckpointError):
    """Checkpoint bytes are truncated or inconsistent."""

    default_code = "CHECKPOINT_CORRUPT"


class StoreError(RuntimeFailure):
    """Embedding store could not be written or read."""

    default_code = "STORE_ERROR"


class StaleStoreError(StoreError):
    """Store was built by a different model."""

    default_code = "STALE_STORE"

    def __init__(self, store_fingerprint: str, model_fingerprint: str):
        self.store_fingerprint = store_fingerprint
        self.model_fingerprint = model_fingerprint
        super().__init__(
            f"store fingerprint {store_fingerprint[:12]} does not match model {model_fingerprint[:12]}"
        )


class MissingDocumentsError(StoreError):
    """Candidate ids are absent from the store."""

    default_code = "MISSING_DOCUMENTS"

    def __init__(self, doc_ids: Iterable[str]):
        self.doc_ids = sorted(doc_ids)
        super().__init__(f"{len(self.doc_ids)} candidate(s) missing from store: {self.doc_ids}")


# ============================================================================
# Warnings
# ============================================================================

class NoValidPairsWarning(UserWarning):
    """Pairwise loss saw no (positive, negative) pair; loss defined as 0."""
