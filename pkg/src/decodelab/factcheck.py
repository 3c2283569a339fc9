"""Deterministic fact checking against a local knowledge base.

The checker mirrors a retrieval-then-entailment pipeline in miniature:
tf-idf cosine retrieval selects candidate documents, then content-word
Jaccard overlap against the facts of those documents decides the label.
A sentence matching an asserting fact at or above the threshold is
Supported, one matching a contradicting fact is Refuted, anything else is
NotEnoughInfo. The checker sits behind the small ``FactChecker`` protocol so
an external system can be dropped in.
"""

from __future__ import annotations

import json
import math
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

from .errors import ConfigurationError, ParseError, ValidationError

SUPPORTED = "Supported"
REFUTED = "Refuted"
NOT_ENOUGH_INFO = "NotEnoughInfo"

ASSERTS = "asserts"
CONTRADICTS = "contradicts"

DEFAULT_TAU = 0.8
DEFAULT_TOP_M = 3

# Fixed list of 50 English function words dropped before overlap scoring.
STOPWORDS = frozenset(
    """
    a an the and or but if then of at by for with about into through during
    before after above below to from up down in out on off over under is are
    was were be been being has have had do does did as it this that these
    those not no so than too very
    """.split()
)

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_tokens(text: str) -> list[str]:
    """Lowercase, strip punctuation characters, split on whitespace."""
    return text.lower().translate(_PUNCT_TABLE).split()


def content_words(text: str) -> frozenset[str]:
    return frozenset(t for t in normalize_tokens(text) if t not in STOPWORDS)


@dataclass(frozen=True)
class FactStatement:
    fact_id: str
    canonical_text: str
    polarity: str
    source_doc_id: str

    def __post_init__(self):
        if self.polarity not in (ASSERTS, CONTRADICTS):
            raise ValidationError(f"unknown polarity {self.polarity!r}")
        if not self.canonical_text:
            raise ValidationError(f"fact {self.fact_id!r} has empty text")


@dataclass(frozen=True)
class Verdict:
    label: str
    evidence: frozenset[str]
    match_score: float
    sentence_ref: str = ""

    def __post_init__(self):
        if self.label in (SUPPORTED, REFUTED) and not self.evidence:
            raise ValidationError("Supported/Refuted verdicts need evidence")
        if self.label == NOT_ENOUGH_INFO and self.evidence:
            raise ValidationError("NotEnoughInfo verdicts carry no evidence")


class KnowledgeBase:
    """Fact statements plus the retrieval corpus they are grounded in."""

    def __init__(self, facts: Sequence[FactStatement], documents: Mapping[str, str]):
        seen: set[str] = set()
        for fact in facts:
            if fact.fact_id in seen:
                raise ValidationError(f"duplicate fact id {fact.fact_id!r}")
            seen.add(fact.fact_id)
            if fact.source_doc_id not in documents:
                raise ValidationError(
                    f"fact {fact.fact_id!r} references unknown document {fact.source_doc_id!r}"
                )
        self.facts = tuple(facts)
        self.documents = dict(documents)
        self._facts_by_doc: dict[str, list[FactStatement]] = {}
        for fact in sorted(self.facts, key=lambda f: f.fact_id):
            self._facts_by_doc.setdefault(fact.source_doc_id, []).append(fact)
        self._fact_words = {f.fact_id: content_words(f.canonical_text) for f in self.facts}
        self._build_index()

    def _build_index(self) -> None:
        doc_tokens = {doc_id: normalize_tokens(text) for doc_id, text in self.documents.items()}
        df: dict[str, int] = {}
        for tokens in doc_tokens.values():
            for term in set(tokens):
                df[term] = df.get(term, 0) + 1
        n_docs = len(self.documents)
        self._idf = {
            term: math.log((1 + n_docs) / (1 + count)) + 1.0 for term, count in df.items()
        }
        self._doc_vectors = {
            doc_id: _vectorize(tokens, self._idf) for doc_id, tokens in doc_tokens.items()
        }

    def __len__(self) -> int:
        return len(self.documents)

    def facts_for(self, doc_id: str) -> list[FactStatement]:
        return self._facts_by_doc.get(doc_id, [])

    def fact_content_words(self, fact_id: str) -> frozenset[str]:
        return self._fact_words[fact_id]

    def vectorize(self, text: str) -> dict[str, float]:
        return _vectorize(normalize_tokens(text), self._idf)

    @classmethod
    def load(cls, facts_path: str | Path, docs_path: str | Path) -> "KnowledgeBase":
        documents: dict[str, str] = {}
        for lineno, row in _read_jsonl(docs_path):
            doc_id = _require(row, "doc_id", docs_path, lineno)
            if doc_id in documents:
                raise ValidationError(f"duplicate doc id {doc_id!r}")
            documents[doc_id] = _require(row, "text", docs_path, lineno)
        facts = []
        for lineno, row in _read_jsonl(facts_path):
            facts.append(
                FactStatement(
                    fact_id=_require(row, "fact_id", facts_path, lineno),
                    canonical_text=_require(row, "text", facts_path, lineno),
                    polarity=_require(row, "polarity", facts_path, lineno),
                    source_doc_id=_require(row, "source_doc_id", facts_path, lineno),
                )
            )
        return cls(facts, documents)


def _read_jsonl(path: str | Path):
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            yield lineno, json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}", line=lineno) from None


def _require(row: dict, key: str, path, lineno: int):
    if key not in row:
        raise ParseError(f"{path}: missing key {key!r}", line=lineno)
    return row[key]


def _vectorize(tokens: Iterable[str], idf: Mapping[str, float]) -> dict[str, float]:
    counts: dict[str, int] = {}
    for token in tokens:
        if token in idf:
            counts[token] = counts.get(token, 0) + 1
    return {term: count * idf[term] for term, count in counts.items()}


def _cosine(a: Mapping[str, float], b: Mapping[str, float]) -> float:
    if not a or not b:
        return 0.0
    if len(b) < len(a):
        a, b = b, a
    dot = sum(weight * b.get(term, 0.0) for term, weight in a.items())
    if dot == 0.0:
        return 0.0
    norm_a = math.sqrt(sum(w * w for w in a.values()))
    norm_b = math.sqrt(sum(w * w for w in b.values()))
    return dot / (norm_a * norm_b)


def retrieve_tfidf(query_text: str, kb: KnowledgeBase, top_m: int) -> list[tuple[str, float]]:
    """Documents ranked by tf-idf cosine similarity to the query, descending,
    ties broken by ascending doc id."""
    if top_m < 1:
        raise ConfigurationError("top_m must be >= 1")
    if len(kb) == 0:
        raise ConfigurationError("knowledge base has no documents")
    query = kb.vectorize(query_text)
    if not normalize_tokens(query_text):
        return []
    scored = [(doc_id, _cosine(query, vec)) for doc_id, vec in kb._doc_vectors.items()]
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored[:top_m]


def tfidf_relevance(text: str, doc_text: str, kb: KnowledgeBase) -> float:
    """Cosine similarity of two texts under the knowledge-base idf table."""
    return _cosine(kb.vectorize(text), kb.vectorize(doc_text))


def _jaccard(a: frozenset[str], b: frozenset[str]) -> float:
    if not a or not b:
        return 0.0
    return len(a & b) / len(a | b)


def check_sentence(
    sentence: str,
    kb: KnowledgeBase,
    tau: float = DEFAULT_TAU,
    top_m: int = DEFAULT_TOP_M,
    sentence_ref: str = "",
) -> Verdict:
    """Label one sentence against the knowledge base.

    Retrieval narrows the candidate facts to those of the ``top_m`` most
    similar documents; the best content-word Jaccard overlap decides the
    label. On exact score ties all tied facts of the winning label become
    evidence, with Refuted taking precedence over Supported.
    """
    if len(kb) == 0 or not kb.facts:
        return Verdict(NOT_ENOUGH_INFO, frozenset(), 0.0, sentence_ref)
    ranked = retrieve_tfidf(sentence, kb, top_m)
    if not ranked:
        return Verdict(NOT_ENOUGH_INFO, frozenset(), 0.0, sentence_ref)
    words = content_words(sentence)
    candidates: list[FactStatement] = []
    for doc_id, _score in ranked:
        candidates.extend(kb.facts_for(doc_id))
    candidates.sort(key=lambda f: f.fact_id)

    best_score = 0.0
    best_facts: list[FactStatement] = []
    for fact in candidates:
        score = _jaccard(words, kb.fact_content_words(fact.fact_id))
        if score > best_score:
            best_score = score
            best_facts = [fact]
        elif score == best_score and score > 0.0:
            best_facts.append(fact)

    if best_score < tau or not best_facts:
        return Verdict(NOT_ENOUGH_INFO, frozenset(), best_score, sentence_ref)
    refuting = frozenset(f.fact_id for f in best_facts if f.polarity == CONTRADICTS)
    if refuting:
        return Verdict(REFUTED, refuting, best_score, sentence_ref)
    supporting = frozenset(f.fact_id for f in best_facts if f.polarity == ASSERTS)
    return Verdict(SUPPORTED, supporting, best_score, sentence_ref)


class FactChecker(Protocol):
    def check(self, sentence_text: str, sentence_ref: str = "") -> Verdict: ...


@dataclass
class KnowledgeBaseChecker:
    """Reference ``FactChecker`` backed by the local knowledge base."""

    kb: KnowledgeBase
    tau: float = DEFAULT_TAU
    top_m: int = DEFAULT_TOP_M

    def check(self, sentence_text: str, sentence_ref: str = "") -> Verdict:
        return check_sentence(sentence_text, self.kb, self.tau, self.top_m, sentence_ref)
