"""Corpus records, tokenization, dataset I/O and synthetic data."""

from detext.data.dataset import load_dataset, write_dataset
from detext.data.schema import Document, FieldText, RankingExample
from detext.data.synthetic import SyntheticSpec, generate_synthetic_corpus
from detext.data.tokenizer import (
    SubwordVocabulary,
    WordVocabulary,
    build_word_vocab,
    learn_subword_vocab,
    tokenize_subwords,
    tokenize_words,
)

__all__ = [
    "Document",
    "FieldText",
    "RankingExample",
    "SubwordVocabulary",
    "SyntheticSpec",
    "WordVocabulary",
    "build_word_vocab",
    "generate_synthetic_corpus",
    "learn_subword_vocab",
    "load_dataset",
    "tokenize_subwords",
    "tokenize_words",
    "write_dataset",
]
