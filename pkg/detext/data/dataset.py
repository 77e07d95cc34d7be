"""
JSON-lines dataset reader and writer.

One object per line:
    {"query_id": str, "source": {field: text}, "docs": [
        {"doc_id": str, "target": {field: text}, "features": [num], "label": num}]}
"""

import json
import logging
from pathlib import Path
from typing import Iterable

from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

from detext.data.schema import Document, RankingExample, make_fields
from detext.errors import DatasetParseError, InvariantViolation

logger = logging.getLogger(__name__)


def _require_field_names(fields: dict[str, str]) -> dict[str, str]:
    if any(not name for name in fields):
        raise ValueError("field names must be non-empty")
    return fields


class DocumentRecord(BaseModel):
    """Wire form of one candidate document."""
    model_config = ConfigDict(extra="forbid")

    doc_id: str
    target: dict[str, str]
    features: list[float]
    label: float

    @field_validator("target")
    @classmethod
    def named_fields(cls, fields: dict[str, str]) -> dict[str, str]:
        return _require_field_names(fields)


class ExampleRecord(BaseModel):
    """Wire form of one query line."""
    model_config = ConfigDict(extra="forbid")

    query_id: str
    source: dict[str, str]
    docs: list[DocumentRecord]

    @field_validator("source")
    @classmethod
    def named_fields(cls, fields: dict[str, str]) -> dict[str, str]:
        return _require_field_names(fields)

    def to_example(self) -> RankingExample:
        return RankingExample(
            query_id=self.query_id,
            source_fields=make_fields(self.source),
            documents=tuple(
                Document(
                    doc_id=d.doc_id,
                    target_fields=make_fields(d.target),
                    traditional_features=tuple(d.features),
                    label=d.label,
                )
                for d in self.docs
            ),
        )

    @classmethod
    def from_example(cls, example: RankingExample) -> "ExampleRecord":
        return cls(
            query_id=example.query_id,
            source={f.field_name: f.text for f in example.source_fields},
            docs=[
                DocumentRecord(
                    doc_id=d.doc_id,
                    target={f.field_name: f.text for f in d.target_fields},
                    features=list(d.traditional_features),
                    label=d.label,
                )
                for d in example.documents
            ],
        )


def decode_line(raw: bytes, line_number: int) -> str:
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise DatasetParseError(line_number, f"invalid UTF-8 at byte {e.start}") from e


def parse_line(line: str, line_number: int) -> RankingExample:
    try:
        record = ExampleRecord.model_validate_json(line)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first["loc"]) or "line"
        raise DatasetParseError(line_number, f"{where}: {first['msg']}") from e
    return record.to_example().validate()


def load_dataset(path: Path | str) -> list[RankingExample]:
    """Read and validate a JSON-lines dataset."""
    examples: list[RankingExample] = []
    width = None
    with open(path, "rb") as fh:
        for line_number, raw in enumerate(fh, start=1):
            line = decode_line(raw, line_number)
            if not line.strip():
                continue
            example = parse_line(line, line_number)
            n = len(example.documents[0].traditional_features)
            if width is None:
                width = n
            elif n != width:
                raise InvariantViolation(
                    example.query_id,
                    f"traditional-feature count constant within dataset ({n} != {width})",
                )
            examples.append(example)
    logger.info(f"Loaded {len(examples)} queries from {path}")
    return examples


def dump_example(example: RankingExample) -> str:
    return json.dumps(ExampleRecord.from_example(example).model_dump(), ensure_ascii=False)


def write_dataset(examples: Iterable[RankingExample], path: Path | str) -> int:
    """Write examples as JSON-lines; returns the number of lines written."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for example in examples:
            fh.write(dump_example(example) + "\n")
            count += 1
    return count


def corpus_texts(examples: Iterable[RankingExample]) -> Iterable[str]:
    """Every source and target text, in dataset order (vocabulary input)."""
    for example in examples:
        for f in example.source_fields:
            yield f.text
        for doc in example.documents:
            for f in doc.target_fields:
                yield f.text
