"""
Document-embedding store: doc_id -> per-target-field float32 vectors.

File layout (little-endian):

    b"DTES" | u32 version | 64-byte hex model fingerprint
    | u32 field count | per field: u32 len | UTF-8 name
    | u32 dim | u32 count
    | index: count x (u32 key offset, u32 key length), sorted by doc_id bytes
    | u32 key blob length | key blob
    | payload: count x fields x dim float32

Readers mmap the file and binary-search the index, so opening is cheap
and nothing but the touched rows is read. Build metadata (timestamp,
document count) goes to ``<store>.meta.json`` so identical inputs always
produce identical store bytes.
"""

import json
import logging
import mmap
import os
import struct
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from detext.data.schema import Document, RankingExample
from detext.errors import MissingDocumentsError, ModelCapabilityError, StoreError
from detext.models.scoring import DeTextModel
from detext.services.checkpoint import model_fingerprint
from detext.services.metrics import track_store_lookup, track_store_refresh

logger = logging.getLogger(__name__)

MAGIC = b"DTES"
VERSION = 1
FINGERPRINT_BYTES = 64

_U32 = struct.Struct("<I")
_ENTRY = struct.Struct("<II")
_FLOAT = np.dtype("<f4")


def meta_path(path: Path | str) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def collect_documents(examples: Iterable[RankingExample]) -> list[Document]:
    """Unique documents by doc_id, first occurrence wins."""
    seen: dict[str, Document] = {}
    for example in examples:
        for doc in example.documents:
            seen.setdefault(doc.doc_id, doc)
    return list(seen.values())


# ============================================================================
# Writing
# ============================================================================

def store_bytes(fingerprint: str, field_names: Sequence[str], dim: int,
                rows: dict[str, list[np.ndarray]]) -> bytes:
    if len(fingerprint) != FINGERPRINT_BYTES:
        raise StoreError(f"fingerprint must be {FINGERPRINT_BYTES} hex characters")
    keys = sorted(rows, key=lambda k: k.encode("utf-8"))
    encoded = [k.encode("utf-8") for k in keys]

    chunks = [MAGIC, _U32.pack(VERSION), fingerprint.encode("ascii"), _U32.pack(len(field_names))]
    for name in field_names:
        raw = name.encode("utf-8")
        chunks.extend([_U32.pack(len(raw)), raw])
    chunks.extend([_U32.pack(dim), _U32.pack(len(keys))])

    offset = 0
    for raw in encoded:
        chunks.append(_ENTRY.pack(offset, len(raw)))
        offset += len(raw)
    blob = b"".join(encoded)
    chunks.extend([_U32.pack(len(blob)), blob])

    for key in keys:
        vectors = rows[key]
        if len(vectors) != len(field_names) or any(v.shape != (dim,) for v in vectors):
            raise StoreError(f"embeddings of {key!r} do not match {len(field_names)} x {dim}")
        chunks.append(np.concatenate(vectors).astype(_FLOAT).tobytes())
    return b"".join(chunks)


def precompute_embeddings(
    model: DeTextModel,
    documents: Iterable[Document],
    path: Path | str,
    fingerprint: Optional[str] = None,
) -> "EmbeddingStore":
    """
    Encode every document's target fields once and write the store atomically.

    Rebuilding with the same model and documents yields identical bytes.
    """
    if not model.has_encoder:
        raise ModelCapabilityError("precompute needs a model with a text encoder")
    path = Path(path)
    fingerprint = fingerprint or model_fingerprint(model)
    rows: dict[str, list[np.ndarray]] = {}
    for doc in documents:
        if doc.doc_id not in rows:
            rows[doc.doc_id] = model.encode_document(doc)

    data = store_bytes(fingerprint, model.spec.target_fields, model.spec.embedding_dim, rows)
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_bytes(data)
        os.replace(tmp, path)
        meta_path(path).write_text(json.dumps({
            "built_at": datetime.now(timezone.utc).isoformat(),
            "documents": len(rows),
            "fingerprint": fingerprint,
            "model": model.describe(),
        }, indent=2))
    except OSError as e:
        raise StoreError(f"cannot write embedding store {path}: {e}") from e
    logger.info(f"Precomputed {len(rows)} document embeddings into {path}")
    return EmbeddingStore.open(path)


# ============================================================================
# Reading
# ============================================================================

@dataclass
class _Layout:
    fingerprint: str
    field_names: tuple[str, ...]
    dim: int
    count: int
    index_start: int
    blob_start: int
    payload_start: int


def _parse_header(buf) -> _Layout:
    def u32(at: int) -> int:
        if at + 4 > len(buf):
            raise StoreError("embedding store truncated in header")
        return _U32.unpack_from(buf, at)[0]

    if bytes(buf[:4]) != MAGIC:
        raise StoreError("not an embedding store (bad magic)")
    if u32(4) != VERSION:
        raise StoreError(f"embedding store version {u32(4)} not supported")
    pos = 8
    try:
        fingerprint = bytes(buf[pos:pos + FINGERPRINT_BYTES]).decode("ascii")
        pos += FINGERPRINT_BYTES
        names = []
        n_fields = u32(pos)
        pos += 4
        for _ in range(n_fields):
            size = u32(pos)
            names.append(bytes(buf[pos + 4:pos + 4 + size]).decode("utf-8"))
            pos += 4 + size
    except UnicodeDecodeError as e:
        raise StoreError(f"embedding store header is not valid text at byte {pos + e.start}") from e
    dim, count = u32(pos), u32(pos + 4)
    index_start = pos + 8
    blob_len_at = index_start + count * _ENTRY.size
    blob_start = blob_len_at + 4
    payload_start = blob_start + u32(blob_len_at)
    expected = payload_start + count * n_fields * dim * _FLOAT.itemsize
    if len(buf) != expected:
        raise StoreError(f"embedding store size {len(buf)} does not match its header ({expected})")
    return _Layout(fingerprint, tuple(names), dim, count, index_start, blob_start, payload_start)


class EmbeddingStore:
    """Read-only, thread-safe view over a store file."""

    def __init__(self, path: Path, buf, layout: _Layout, handle=None):
        self.path = path
        self._buf = buf
        self._layout = layout
        self._handle = handle

    @classmethod
    def open(cls, path: Path | str) -> "EmbeddingStore":
        path = Path(path)
        try:
            handle = open(path, "rb")
            buf = mmap.mmap(handle.fileno(), 0, access=mmap.ACCESS_READ)
        except (OSError, ValueError) as e:
            raise StoreError(f"cannot open embedding store {path}: {e}") from e
        try:
            layout = _parse_header(buf)
        except StoreError:
            buf.close()
            handle.close()
            raise
        return cls(path, buf, layout, handle)

    @property
    def fingerprint(self) -> str:
        return self._layout.fingerprint

    @property
    def field_names(self) -> tuple[str, ...]:
        return self._layout.field_names

    @property
    def dim(self) -> int:
        return self._layout.dim

    def __len__(self) -> int:
        return self._layout.count

    def build_info(self) -> dict:
        try:
            return json.loads(meta_path(self.path).read_text())
        except (OSError, ValueError):
            return {}

    def _key(self, i: int) -> bytes:
        offset, size = _ENTRY.unpack_from(self._buf, self._layout.index_start + i * _ENTRY.size)
        start = self._layout.blob_start + offset
        return self._buf[start:start + size]

    def _find(self, doc_id: str) -> Optional[int]:
        target = doc_id.encode("utf-8")
        lo, hi = 0, self._layout.count
        while lo < hi:
            mid = (lo + hi) // 2
            if self._key(mid) < target:
                lo = mid + 1
            else:
                hi = mid
        if lo < self._layout.count and self._key(lo) == target:
            return lo
        return None

    def __contains__(self, doc_id: str) -> bool:
        return self._find(doc_id) is not None

    def lookup(self, doc_id: str) -> Optional[list[np.ndarray]]:
        """Per-field vectors exactly as written, or None."""
        i = self._find(doc_id)
        if i is None:
            return None
        n_fields, dim = len(self._layout.field_names), self._layout.dim
        row = np.frombuffer(
            self._buf, dtype=_FLOAT, count=n_fields * dim,
            offset=self._layout.payload_start + i * n_fields * dim * _FLOAT.itemsize,
        ).astype(np.float32)
        return [row[f * dim:(f + 1) * dim] for f in range(n_fields)]

    def get_many(self, doc_ids: Sequence[str]) -> list[list[np.ndarray]]:
        """Vectors for every id, in order; raises MissingDocumentsError naming all absent ids."""
        found = [self.lookup(d) for d in doc_ids]
        missing = [d for d, v in zip(doc_ids, found) if v is None]
        track_store_lookup(len(doc_ids) - len(missing), len(missing))
        if missing:
            raise MissingDocumentsError(missing)
        return found

    def doc_ids(self) -> list[str]:
        return [self._key(i).decode("utf-8") for i in range(self._layout.count)]

    def close(self) -> None:
        self._buf.close()
        if self._handle is not None:
            self._handle.close()


class EmbeddingStoreManager:
    """
    Holds the active store and swaps it on refresh.

    Readers call ``current`` and keep using the store they got; a refresh
    writes the new file, renames it over the old one and swaps the reference.
    The replaced mapping stays valid until ``close``, which unmaps every
    store this manager has opened.
    """

    def __init__(self, path: Path | str):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._store: Optional[EmbeddingStore] = EmbeddingStore.open(self.path) if self.path.exists() else None
        self._retired: list[EmbeddingStore] = []

    @property
    def current(self) -> EmbeddingStore:
        with self._lock:
            if self._store is None:
                raise StoreError(f"no embedding store at {self.path}")
            return self._store

    def refresh(self, model: DeTextModel, documents: Iterable[Document],
                fingerprint: Optional[str] = None) -> EmbeddingStore:
        store = precompute_embeddings(model, documents, self.path, fingerprint)
        with self._lock:
            if self._store is not None:
                self._retired.append(self._store)
            self._store = store
        track_store_refresh()
        logger.info(f"Embedding store refreshed: {len(store)} documents")
        return store

    def close(self) -> None:
        with self._lock:
            stores = self._retired + ([self._store] if self._store is not None else [])
            self._retired, self._store = [], None
        for store in stores:
            store.close()

    def __enter__(self) -> "EmbeddingStoreManager":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
