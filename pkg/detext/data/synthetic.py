"""
Synthetic clickthrough corpus.

Stands in for search logs: each query has exactly one clicked document,
which (with probability 1 - noise) is the document sharing the most query
terms in its target fields. Traditional features carry one noisy
label-correlated signal on a large raw scale plus random columns of mixed
scales, so feature processing matters.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from detext.data.schema import Document, FieldText, RankingExample
from detext.errors import SyntheticSpecError

logger = logging.getLogger(__name__)

SOURCE_FIELD_NAMES = ("query", "user_headline", "user_skills")
TARGET_FIELD_NAMES = ("title", "headline", "summary", "skills")

_CONSONANTS = "bcdfghjklmnprstvz"
_VOWELS = "aeiou"
_VOCAB_SEED = 20200801


@dataclass(frozen=True)
class SyntheticSpec:
    """Sizes and noise of a synthetic clickthrough corpus."""
    vocab_size: int = 1000
    train_queries: int = 2000
    dev_queries: int = 200
    test_queries: int = 200
    docs_per_query: int = 10
    num_source_fields: int = 1
    num_target_fields: int = 2
    num_features: int = 5
    noise: float = 0.1
    min_query_terms: int = 2
    max_query_terms: int = 4
    min_field_len: int = 4
    max_field_len: int = 12

    def validate(self) -> "SyntheticSpec":
        positive = {
            "vocab_size": self.vocab_size,
            "train_queries": self.train_queries,
            "dev_queries": self.dev_queries,
            "test_queries": self.test_queries,
            "docs_per_query": self.docs_per_query,
            "num_source_fields": self.num_source_fields,
            "num_target_fields": self.num_target_fields,
            "num_features": self.num_features,
            "min_query_terms": self.min_query_terms,
            "min_field_len": self.min_field_len,
        }
        bad = [name for name, value in positive.items() if value <= 0]
        if bad:
            raise SyntheticSpecError(f"non-positive sizes: {', '.join(bad)}")
        if not 0.0 <= self.noise < 1.0:
            raise SyntheticSpecError("noise must be in [0, 1)")
        if self.max_query_terms < self.min_query_terms or self.max_field_len < self.min_field_len:
            raise SyntheticSpecError("max lengths must be >= min lengths")
        if self.vocab_size < 4 * self.max_query_terms + self.max_field_len:
            raise SyntheticSpecError("vocab_size too small for the requested lengths")
        return self

    @property
    def split_sizes(self) -> dict[str, int]:
        return {"train": self.train_queries, "dev": self.dev_queries, "test": self.test_queries}


def synthetic_vocabulary(size: int) -> list[str]:
    """Pronounceable pseudo-words; depends only on size so every seed shares them."""
    rng = np.random.default_rng(_VOCAB_SEED)
    words: list[str] = []
    seen: set[str] = set()
    while len(words) < size:
        syllables = int(rng.integers(2, 4))
        word = "".join(
            _CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))]
            for _ in range(syllables)
        )
        if word not in seen:
            seen.add(word)
            words.append(word)
    return words


def _zipf_weights(size: int) -> np.ndarray:
    weights = 1.0 / (np.arange(size) + 10.0)
    return weights / weights.sum()


def _field_names(names: tuple[str, ...], count: int) -> list[str]:
    return [names[i] if i < len(names) else f"field_{i}" for i in range(count)]


def _feature_scales(num_features: int) -> tuple[np.ndarray, np.ndarray]:
    # label-correlated column on a large raw scale, the rest spread over decades
    scales = np.array([100.0] + [10.0 ** ((j % 5) - 2) for j in range(1, num_features)])
    offsets = 5.0 * scales
    return scales, offsets


class _SplitGenerator:
    """Generates the queries of one split from its own random stream."""

    def __init__(self, spec: SyntheticSpec, vocab: list[str], rng: np.random.Generator, split: str):
        self.spec = spec
        self.vocab = vocab
        self.rng = rng
        self.split = split
        self.weights = _zipf_weights(len(vocab))
        self.source_names = _field_names(SOURCE_FIELD_NAMES, spec.num_source_fields)
        self.target_names = _field_names(TARGET_FIELD_NAMES, spec.num_target_fields)
        self.scales, self.offsets = _feature_scales(spec.num_features)

    def _sample_words(self, count: int, exclude: set[int]) -> list[int]:
        out: list[int] = []
        while len(out) < count:
            draw = self.rng.choice(len(self.vocab), size=count + len(exclude), p=self.weights)
            out.extend(int(i) for i in draw if int(i) not in exclude)
        return out[:count]

    def _field_length(self) -> int:
        return int(self.rng.integers(self.spec.min_field_len, self.spec.max_field_len + 1))

    def _document_texts(self, terms: list[int], overlap: int) -> list[str]:
        exclude = set(terms)
        fields = [self._sample_words(self._field_length(), exclude) for _ in self.target_names]
        shared = self.rng.permutation(terms)[:overlap]
        for term in shared:
            target = fields[int(self.rng.integers(len(fields)))]
            target.insert(int(self.rng.integers(len(target) + 1)), int(term))
        return [" ".join(self.vocab[i] for i in f) for f in fields]

    def example(self, i: int) -> RankingExample:
        spec = self.spec
        query_id = f"{self.split}-{i:06d}"
        n_terms = int(self.rng.integers(spec.min_query_terms, spec.max_query_terms + 1))
        terms = list(self.rng.choice(len(self.vocab), size=n_terms, replace=False, p=self.weights))
        terms = [int(t) for t in terms]

        sources = [FieldText(self.source_names[0], " ".join(self.vocab[t] for t in terms))]
        for name in self.source_names[1:]:
            words = self._sample_words(self._field_length(), set())
            sources.append(FieldText(name, " ".join(self.vocab[w] for w in words)))

        n_docs = spec.docs_per_query
        best = int(self.rng.integers(n_docs))
        best_overlap = int(self.rng.integers(1, n_terms + 1))
        overlaps = [
            best_overlap if j == best else int(self.rng.integers(0, best_overlap))
            for j in range(n_docs)
        ]

        clicked = best
        if n_docs > 1 and self.rng.random() < spec.noise:
            others = [j for j in range(n_docs) if j != best]
            clicked = others[int(self.rng.integers(len(others)))]

        documents = []
        for j in range(n_docs):
            texts = self._document_texts(terms, overlaps[j])
            label = 1.0 if j == clicked else 0.0
            z = self.rng.normal(size=spec.num_features)
            z[0] = z[0] * 1.5 + 2.0 * label
            raw = self.offsets + self.scales * z
            documents.append(
                Document(
                    doc_id=f"{query_id}-d{j:03d}",
                    target_fields=tuple(FieldText(n, t) for n, t in zip(self.target_names, texts)),
                    traditional_features=tuple(round(float(x), 6) for x in raw),
                    label=label,
                )
            )
        return RankingExample(query_id, tuple(sources), tuple(documents))


def generate_synthetic_corpus(
    spec: SyntheticSpec, seed: int
) -> tuple[list[RankingExample], list[RankingExample], list[RankingExample]]:
    """Deterministic (train, dev, test) splits for a seed."""
    spec.validate()
    vocab = synthetic_vocabulary(spec.vocab_size)
    splits = []
    for split_index, (split, size) in enumerate(spec.split_sizes.items()):
        gen = _SplitGenerator(spec, vocab, np.random.default_rng([seed, split_index]), split)
        splits.append([gen.example(i) for i in range(size)])
    logger.info(
        f"Generated synthetic corpus seed={seed}: "
        f"{len(splits[0])}/{len(splits[1])}/{len(splits[2])} queries"
    )
    return splits[0], splits[1], splits[2]


def generate_pretraining_corpus(
    spec: SyntheticSpec, seed: int, num_sentences: int, length: Optional[int] = None
) -> list[str]:
    """Unlabeled sentences from the same word distribution, for masked-LM pretraining."""
    spec.validate()
    vocab = synthetic_vocabulary(spec.vocab_size)
    weights = _zipf_weights(len(vocab))
    rng = np.random.default_rng([seed, 99])
    sentences = []
    for _ in range(num_sentences):
        n = length or int(rng.integers(spec.min_field_len, spec.max_field_len + 1))
        idx = rng.choice(len(vocab), size=n, p=weights)
        sentences.append(" ".join(vocab[i] for i in idx))
    return sentences


def query_term_overlap(example: RankingExample, doc: Document) -> int:
    """Distinct query-field words present in any target field of a document."""
    query = set(example.source_fields[0].text.split())
    seen: set[str] = set()
    for f in doc.target_fields:
        seen.update(f.text.split())
    return len(query & seen)
