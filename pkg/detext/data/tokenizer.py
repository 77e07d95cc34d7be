"""
Word and subword tokenization.

Words feed the CNN encoder, byte-pair-encoded subwords feed the
transformer. Both vocabularies reserve their low ids for special tokens.
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import regex

from detext.errors import VocabularyError

logger = logging.getLogger(__name__)

_WORD_PATTERN = regex.compile(r"[\p{L}\p{M}\p{N}]+")

PAD_TOKEN = "[PAD]"
UNK_TOKEN = "[UNK]"
CLS_TOKEN = "[CLS]"
MASK_TOKEN = "[MASK]"

PAD_ID = 0
UNK_ID = 1
CLS_ID = 2
MASK_ID = 3


def tokenize_words(text: str) -> list[str]:
    """
    Lowercase and split on whitespace and punctuation; punctuation is dropped.

    Examples:
        "Cloud Computing" → ["cloud", "computing"]
        "" → []
    """
    return _WORD_PATTERN.findall(text.lower())


# ============================================================================
# Word vocabulary
# ============================================================================

@dataclass(frozen=True)
class WordVocabulary:
    """Token <-> id bijection with PAD=0 and UNK=1."""
    tokens: tuple[str, ...]
    index: dict[str, int] = field(default_factory=dict, compare=False, repr=False)

    reserved = (PAD_TOKEN, UNK_TOKEN)

    def __post_init__(self):
        if self.tokens[: len(self.reserved)] != self.reserved:
            raise VocabularyError("word vocabulary must start with PAD, UNK")
        if len(set(self.tokens)) != len(self.tokens):
            raise VocabularyError("word vocabulary has duplicate tokens")
        self.index.update({tok: i for i, tok in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id_of(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def encode(self, text: str, max_len: Optional[int] = None) -> list[int]:
        """Word ids for a text, truncated from the right to max_len."""
        ids = [self.id_of(tok) for tok in tokenize_words(text)]
        return ids[:max_len] if max_len is not None else ids

    def save(self, path: Path | str) -> None:
        _write_tokens(path, self.tokens[len(self.reserved):])

    @classmethod
    def load(cls, path: Path | str) -> "WordVocabulary":
        return cls(cls.reserved + _read_tokens(path))


def build_word_vocab(corpus: Iterable[str], min_count: int = 1) -> WordVocabulary:
    """
    Vocabulary of every word seen at least min_count times.

    Ids follow descending frequency, ties broken lexicographically.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts: Counter[str] = Counter()
    for text in corpus:
        counts.update(tokenize_words(text))
    kept = sorted((tok for tok, n in counts.items() if n >= min_count), key=lambda t: (-counts[t], t))
    logger.debug(f"Word vocabulary: {len(kept)} of {len(counts)} distinct words kept")
    return WordVocabulary(WordVocabulary.reserved + tuple(kept))


# ============================================================================
# Subword vocabulary (byte-pair encoding)
# ============================================================================

@dataclass(frozen=True)
class SubwordVocabulary:
    """
    Merge-ranked subword inventory.

    Ids: PAD=0, UNK=1, CLS=2, MASK=3, then single characters (sorted),
    then merged units in the order they were learned.
    """
    tokens: tuple[str, ...]
    index: dict[str, int] = field(default_factory=dict, compare=False, repr=False)
    max_piece_len: int = field(default=1, compare=False, repr=False)

    reserved = (PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, MASK_TOKEN)

    def __post_init__(self):
        if self.tokens[: len(self.reserved)] != self.reserved:
            raise VocabularyError("subword vocabulary must start with PAD, UNK, CLS, MASK")
        if len(set(self.tokens)) != len(self.tokens):
            raise VocabularyError("subword vocabulary has duplicate tokens")
        self.index.update({tok: i for i, tok in enumerate(self.tokens)})
        pieces = self.tokens[len(self.reserved):]
        object.__setattr__(self, "max_piece_len", max((len(p) for p in pieces), default=1))

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def first_regular_id(self) -> int:
        return len(self.reserved)

    def segment(self, word: str) -> list[int]:
        """Greedy longest-match segmentation; unknown characters map to UNK."""
        ids: list[int] = []
        pos = 0
        while pos < len(word):
            for size in range(min(self.max_piece_len, len(word) - pos), 0, -1):
                piece_id = self.index.get(word[pos:pos + size])
                if piece_id is not None and piece_id >= self.first_regular_id:
                    ids.append(piece_id)
                    pos += size
                    break
            else:
                ids.append(UNK_ID)
                pos += 1
        return ids

    def surface(self, token_id: int) -> str:
        return self.tokens[token_id]

    def save(self, path: Path | str) -> None:
        _write_tokens(path, self.tokens[len(self.reserved):])

    @classmethod
    def load(cls, path: Path | str) -> "SubwordVocabulary":
        return cls(cls.reserved + _read_tokens(path))


def learn_subword_vocab(corpus: Iterable[str], num_merges: int) -> SubwordVocabulary:
    """
    Learn byte-pair-encoding merges over word-internal character pairs.

    Each round merges the most frequent adjacent pair, ties going to the
    lexicographically smallest pair. Learning stops early when no pair is
    left to merge.
    """
    if num_merges < 0:
        raise ValueError("num_merges must be >= 0")

    word_counts: Counter[str] = Counter()
    for text in corpus:
        word_counts.update(tokenize_words(text))

    alphabet = sorted({ch for word in word_counts for ch in word})
    words = {tuple(word): n for word, n in word_counts.items()}
    merged_units: list[str] = []
    known = set(alphabet)

    for _ in range(num_merges):
        pairs: Counter[tuple[str, str]] = Counter()
        for symbols, n in words.items():
            for a, b in zip(symbols, symbols[1:]):
                pairs[(a, b)] += n
        if not pairs:
            break
        best = min(pairs, key=lambda p: (-pairs[p], p))
        unit = best[0] + best[1]
        if unit not in known:
            known.add(unit)
            merged_units.append(unit)
        words = {_merge_pair(symbols, best, unit): n for symbols, n in words.items()}

    logger.debug(f"Subword vocabulary: {len(alphabet)} characters, {len(merged_units)} merges")
    return SubwordVocabulary(SubwordVocabulary.reserved + tuple(alphabet) + tuple(merged_units))


def _merge_pair(symbols: tuple[str, ...], pair: tuple[str, str], unit: str) -> tuple[str, ...]:
    out: list[str] = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and (symbols[i], symbols[i + 1]) == pair:
            out.append(unit)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def tokenize_subwords(text: str, vocab: SubwordVocabulary, max_len: Optional[int] = None) -> list[int]:
    """
    CLS followed by the greedy segmentation of every word.

    max_len counts the CLS token; longer outputs are truncated from the right.
    """
    ids = [CLS_ID]
    for word in tokenize_words(text):
        ids.extend(vocab.segment(word))
    return ids[:max_len] if max_len is not None else ids


# ============================================================================
# Vocabulary files
# ============================================================================

def _write_tokens(path: Path | str, tokens: Iterable[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tok in tokens:
            fh.write(tok + "\n")


def _read_tokens(path: Path | str) -> tuple[str, ...]:
    try:
        with open(path, encoding="utf-8") as fh:
            return tuple(line.rstrip("\n") for line in fh if line.rstrip("\n"))
    except OSError as e:
        raise VocabularyError(f"cannot read vocabulary {path}: {e}") from e
