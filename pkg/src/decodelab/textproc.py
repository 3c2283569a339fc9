"""Sentence segmentation, referent substitution and n-gram diversity counts."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from ._kernels import distinct_window_count
from .errors import ConfigurationError, InputError
from .lm import TERMINAL_TOKENS

VERIFIABLE_MAX_TOKENS = 50

SENTENCE_INITIAL_PRONOUNS = ("He", "She", "It", "They")


@dataclass(frozen=True)
class SentenceRecord:
    """One sentence of a generation: token span, text and verifiability flag."""

    index: int
    span: tuple[int, int]
    tokens: tuple[str, ...]
    processed_text: str
    verifiable: bool


def segment_sentences(tokens: Sequence[str]) -> list[SentenceRecord]:
    """Split a token stream into sentences after each terminal-punctuation token.

    A trailing fragment without terminal punctuation forms a final sentence.
    Concatenating the spans reproduces the input exactly.
    """
    records: list[SentenceRecord] = []
    start = 0
    for pos, token in enumerate(tokens):
        if token in TERMINAL_TOKENS:
            records.append(_make_record(len(records), tokens, start, pos + 1))
            start = pos + 1
    if start < len(tokens):
        records.append(_make_record(len(records), tokens, start, len(tokens)))
    return records


def _make_record(index: int, tokens: Sequence[str], start: int, end: int) -> SentenceRecord:
    span_tokens = tuple(tokens[start:end])
    return SentenceRecord(
        index=index,
        span=(start, end),
        tokens=span_tokens,
        processed_text=" ".join(span_tokens),
        verifiable=len(span_tokens) <= VERIFIABLE_MAX_TOKENS,
    )


def first_k_sentences(sentences: Sequence[SentenceRecord], k: int) -> list[SentenceRecord]:
    if k < 1:
        raise ConfigurationError("k must be >= 1")
    return list(sentences[:k])


def substitute_referents(sentence_text: str, title: str) -> str:
    """Replace a sentence-initial pronoun, or a sentence-initial "The" plus the
    following token, with the entity title. At most one substitution is made.
    """
    if not title:
        raise InputError("title must be nonempty")
    words = sentence_text.split()
    if not words:
        return sentence_text
    if words[0] in SENTENCE_INITIAL_PRONOUNS:
        return " ".join([title] + words[1:])
    if words[0] == "The" and len(words) >= 2:
        return " ".join([title] + words[2:])
    return sentence_text


def is_verifiable(sentence: SentenceRecord) -> bool:
    return len(sentence.tokens) <= VERIFIABLE_MAX_TOKENS


def distinct_ngrams(tokens: Sequence, n: int) -> int:
    """Number of distinct contiguous n-token windows; 0 when the input is
    shorter than n. Integer token-id sequences go through the array kernel."""
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    items = np.asarray(tokens)
    if items.shape[0] < n:
        return 0
    if np.issubdtype(items.dtype, np.integer):
        return distinct_window_count(items, n, int(items.max()) + 1)
    seq = tuple(tokens)
    return len({seq[i : i + n] for i in range(len(seq) - n + 1)})


def process_generation(tokens: Sequence[str], title: str, k: int) -> list[SentenceRecord]:
    """Segment, keep the first k sentences, and apply referent substitution."""
    head = first_k_sentences(segment_sentences(tokens), k)
    return [
        replace(rec, processed_text=substitute_referents(rec.processed_text, title))
        for rec in head
    ]
