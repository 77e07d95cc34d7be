"""
Checkpoint container.

Layout (all integers little-endian u32):

    b"DTXT" | version | len(topology) | topology JSON (UTF-8)
    | tensor count | per tensor: len(name) | name | rank | dims... | float32 data

A model checkpoint's topology holds the model spec, the feature width,
both vocabularies' token lists and the tensor manifest (name, shape,
trainable, group). Feature statistics are ordinary non-trainable tensors
in the table. Pretrained encoders use the same container with
``kind = "transformer"``.
"""

import hashlib
import json
import logging
import os
import struct
import weakref
from pathlib import Path
from typing import Sequence

import numpy as np

from detext.data.tokenizer import SubwordVocabulary, WordVocabulary
from detext.errors import CheckpointCorruptError, CheckpointError, CheckpointVersionError
from detext.models.scoring import DeTextModel
from detext.models.spec import ModelSpec, TransformerSpec
from detext.models.transformer import TransformerEncoderParams
from detext.nn.tensor import ParameterTensor

logger = logging.getLogger(__name__)

MAGIC = b"DTXT"
VERSION = 1

KIND_MODEL = "model"
KIND_TRANSFORMER = "transformer"

_fingerprints: "weakref.WeakKeyDictionary[DeTextModel, tuple[tuple, str]]" = weakref.WeakKeyDictionary()

_U32 = struct.Struct("<I")
_FLOAT = np.dtype("<f4")


# ============================================================================
# Container
# ============================================================================

def _manifest(params: Sequence[ParameterTensor]) -> list[dict]:
    return [
        {"name": p.name, "shape": list(p.shape), "trainable": p.trainable, "group": p.group.value}
        for p in params
    ]


def pack(topo: dict, params: Sequence[ParameterTensor]) -> bytes:
    """Serialize a topology plus tensors; identical inputs always give identical bytes."""
    header = json.dumps(topo, sort_keys=True, ensure_ascii=False).encode("utf-8")
    chunks = [MAGIC, _U32.pack(VERSION), _U32.pack(len(header)), header, _U32.pack(len(params))]
    for p in params:
        name = p.name.encode("utf-8")
        chunks.append(_U32.pack(len(name)))
        chunks.append(name)
        chunks.append(_U32.pack(len(p.shape)))
        chunks.extend(_U32.pack(n) for n in p.shape)
        chunks.append(np.ascontiguousarray(p.data, dtype=_FLOAT).tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise CheckpointCorruptError(f"checkpoint truncated at byte {self.pos} (wanted {n} more)")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(_U32.size))[0]


def unpack(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    """Parse a container into its topology and float32 tensors by name."""
    reader = _Reader(data)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointCorruptError("not a DeText checkpoint (bad magic)")
    version = reader.u32()
    if version != VERSION:
        raise CheckpointVersionError(version, VERSION)
    try:
        topo = json.loads(reader.take(reader.u32()).decode("utf-8"))
        manifest = {t["name"]: tuple(t["shape"]) for t in topo["tensors"]}
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointCorruptError(f"checkpoint topology unreadable: {e}") from e

    values: dict[str, np.ndarray] = {}
    for _ in range(reader.u32()):
        name = reader.take(reader.u32()).decode("utf-8", errors="replace")
        shape = tuple(reader.u32() for _ in range(reader.u32()))
        if manifest.get(name) != shape:
            raise CheckpointCorruptError(
                f"tensor {name!r} shape {shape} disagrees with topology {manifest.get(name)}"
            )
        count = int(np.prod(shape))
        values[name] = np.frombuffer(reader.take(count * _FLOAT.itemsize), dtype=_FLOAT).reshape(shape)
    if reader.pos != len(data):
        raise CheckpointCorruptError(f"{len(data) - reader.pos} trailing bytes after tensor table")
    if set(values) != set(manifest):
        raise CheckpointCorruptError("tensor table does not match the topology manifest")
    return topo, values


def _restore(params: Sequence[ParameterTensor], values: dict[str, np.ndarray]) -> None:
    named = {p.name: p for p in params}
    if set(named) != set(values):
        diff = sorted(set(named) ^ set(values))
        raise CheckpointCorruptError(f"tensor table does not match the model: {diff[:5]}")
    for name, p in named.items():
        if p.shape != values[name].shape:
            raise CheckpointCorruptError(f"tensor {name!r} has shape {values[name].shape}, model wants {p.shape}")
        p.assign(values[name].astype(p.dtype))


def _write(path: Path | str, data: bytes) -> Path:
    """Write atomically (temp file then rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_bytes(data)
        os.replace(tmp, path)
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {path}: {e}") from e
    return path


def _read(path: Path | str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e


def _expect_kind(topo: dict, kind: str) -> None:
    found = topo.get("kind", KIND_MODEL)
    if found != kind:
        raise CheckpointCorruptError(f"expected a {kind} checkpoint, found {found}")


# ============================================================================
# Models
# ============================================================================

def topology(model: DeTextModel) -> dict:
    return {
        "kind": KIND_MODEL,
        "model_spec": model.spec.model_dump(mode="json"),
        "num_features": model.num_features,
        "word_vocab": list(model.word_vocab.tokens[len(WordVocabulary.reserved):])
        if model.word_vocab is not None else None,
        "subword_vocab": list(model.subword_vocab.tokens[len(SubwordVocabulary.reserved):])
        if model.subword_vocab is not None else None,
        "tensors": _manifest(model.parameters()),
    }


def checkpoint_bytes(model: DeTextModel) -> bytes:
    return pack(topology(model), model.parameters())


def _weights_key(model: DeTextModel) -> tuple:
    return tuple((id(p), p.version) for p in model.parameters())


def model_fingerprint(model: DeTextModel) -> str:
    """
    sha256 of the serialized checkpoint.

    Cached per model until a parameter changes through ``assign``, ``astype``
    or an optimizer step.
    """
    key = _weights_key(model)
    cached = _fingerprints.get(model)
    if cached is not None and cached[0] == key:
        return cached[1]
    digest = hashlib.sha256(checkpoint_bytes(model)).hexdigest()
    _fingerprints[model] = (key, digest)
    return digest


def model_from_bytes(data: bytes) -> DeTextModel:
    topo, values = unpack(data)
    _expect_kind(topo, KIND_MODEL)
    try:
        spec = ModelSpec.model_validate(topo["model_spec"])
        words = topo.get("word_vocab")
        subwords = topo.get("subword_vocab")
        num_features = int(topo["num_features"])
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointCorruptError(f"checkpoint model spec unreadable: {e}") from e

    model = DeTextModel(
        spec,
        num_features,
        WordVocabulary(WordVocabulary.reserved + tuple(words)) if words is not None else None,
        SubwordVocabulary(SubwordVocabulary.reserved + tuple(subwords)) if subwords is not None else None,
    )
    _restore(model.parameters(), values)
    return model


def save_checkpoint(model: DeTextModel, path: Path | str) -> Path:
    path = _write(path, checkpoint_bytes(model))
    logger.info(f"Saved checkpoint {path} ({path.stat().st_size} bytes)")
    return path


def load_checkpoint(path: Path | str) -> DeTextModel:
    model = model_from_bytes(_read(path))
    logger.info(f"Loaded checkpoint {path}: {model.describe()}")
    return model


# ============================================================================
# Pretrained encoders
# ============================================================================

def save_encoder(params: TransformerEncoderParams, vocab: SubwordVocabulary, path: Path | str) -> Path:
    topo = {
        "kind": KIND_TRANSFORMER,
        "transformer_spec": params.spec.model_dump(mode="json"),
        "max_len": params.max_len,
        "subword_vocab": list(vocab.tokens[len(SubwordVocabulary.reserved):]),
        "tensors": _manifest(params.parameters()),
    }
    path = _write(path, pack(topo, params.parameters()))
    logger.info(f"Saved pretrained encoder {path}")
    return path


def load_encoder(path: Path | str) -> tuple[TransformerEncoderParams, SubwordVocabulary]:
    topo, values = unpack(_read(path))
    _expect_kind(topo, KIND_TRANSFORMER)
    try:
        spec = TransformerSpec.model_validate(topo["transformer_spec"])
        vocab = SubwordVocabulary(SubwordVocabulary.reserved + tuple(topo["subword_vocab"]))
        max_len = int(topo["max_len"])
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointCorruptError(f"encoder topology unreadable: {e}") from e
    params = TransformerEncoderParams.create(spec, len(vocab), max_len, np.random.default_rng(0))
    _restore(params.parameters(), values)
    return params, vocab
