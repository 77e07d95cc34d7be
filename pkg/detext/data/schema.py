"""
Corpus records: text fields, documents and per-query ranking examples.

All records are frozen dataclasses holding tuples, so they are hashable,
comparable and safe to share between threads.
"""

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

from detext.errors import InvariantViolation


@dataclass(frozen=True)
class FieldText:
    """One named text field of a query or document."""
    field_name: str
    text: str

    def __post_init__(self):
        if not self.field_name:
            raise ValueError("field_name must be non-empty")


@dataclass(frozen=True)
class Document:
    """A candidate document with its target fields, features and click label."""
    doc_id: str
    target_fields: tuple[FieldText, ...]
    traditional_features: tuple[float, ...]
    label: float

    def field(self, name: str) -> str:
        for f in self.target_fields:
            if f.field_name == name:
                return f.text
        return ""

    @property
    def field_names(self) -> tuple[str, ...]:
        return tuple(f.field_name for f in self.target_fields)


@dataclass(frozen=True)
class RankingExample:
    """One query: its source fields and the candidate documents to rank."""
    query_id: str
    source_fields: tuple[FieldText, ...]
    documents: tuple[Document, ...]

    def field(self, name: str) -> str:
        for f in self.source_fields:
            if f.field_name == name:
                return f.text
        return ""

    @property
    def labels(self) -> list[float]:
        return [d.label for d in self.documents]

    def validate(self) -> "RankingExample":
        """Check the example invariants, raising InvariantViolation on the first failure."""
        if not self.source_fields:
            raise InvariantViolation(self.query_id, "at least one source field")
        if not self.documents:
            raise InvariantViolation(self.query_id, "at least one document")

        names = self.documents[0].field_names
        width = len(self.documents[0].traditional_features)
        for doc in self.documents:
            if set(doc.field_names) != set(names):
                raise InvariantViolation(self.query_id, "documents share the same target field names")
            if len(doc.traditional_features) != width:
                raise InvariantViolation(self.query_id, "documents share the same traditional-feature count")
            if not math.isfinite(doc.label) or not 0.0 <= doc.label <= 1.0:
                raise InvariantViolation(self.query_id, f"label of {doc.doc_id!r} is finite and in [0, 1]")
            if not all(math.isfinite(x) for x in doc.traditional_features):
                raise InvariantViolation(self.query_id, f"features of {doc.doc_id!r} are finite")
        return self


def make_fields(mapping: Mapping[str, str]) -> tuple[FieldText, ...]:
    """Build ordered FieldText tuple from a name -> text mapping."""
    return tuple(FieldText(name, text) for name, text in mapping.items())


def feature_width(examples: Iterable[RankingExample]) -> int:
    """Traditional-feature count shared by a dataset (0 for an empty one)."""
    for example in examples:
        return len(example.documents[0].traditional_features)
    return 0


def iter_documents(examples: Iterable[RankingExample]) -> Iterable[Document]:
    for example in examples:
        yield from example.documents
