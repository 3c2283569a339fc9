"""Autoregressive next-token model contract and a smoothed n-gram implementation.

The decoding code only relies on the ``LanguageModel`` protocol: a vocabulary
plus ``next_distribution(context)`` returning normalized log-probabilities
over that vocabulary. ``NGramLM`` is the shipped reference model: count-based,
trainable from a plain-text corpus in seconds, and fully deterministic so
that every decoding strategy can be tested against exact expectations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence, Union

import numpy as np

from .errors import ConfigurationError, InputError

TERMINAL_TOKENS = (".", "!", "?")

NORMALIZATION_TOL = 1e-9

FORMAT_TAG = "decodelab-ngram/v1"

_DIST_CACHE_LIMIT = 32768


def tokenize(text: str) -> list[str]:
    """Whitespace tokenization with terminal punctuation split off.

    Trailing ``.``, ``!`` and ``?`` characters become standalone tokens so
    sentence boundaries are visible in the token stream:
    ``"It won."`` -> ``["It", "won", "."]``.
    """
    out: list[str] = []
    for raw in text.split():
        pending: list[str] = []
        while len(raw) > 1 and raw[-1] in TERMINAL_TOKENS:
            pending.append(raw[-1])
            raw = raw[:-1]
        out.append(raw)
        out.extend(reversed(pending))
    return out


def render_tokens(tokens: Iterable[str]) -> str:
    return " ".join(tokens)


class Vocabulary:
    """Bijective mapping between token strings and dense ids 0..|V|-1."""

    def __init__(self, tokens: Sequence[str]):
        tokens = tuple(tokens)
        if len(set(tokens)) != len(tokens):
            raise ConfigurationError("vocabulary contains duplicate tokens")
        if len(tokens) < 2:
            raise ConfigurationError("vocabulary needs at least 2 tokens")
        self._tokens = tokens
        self._ids = {tok: i for i, tok in enumerate(tokens)}

    @classmethod
    def from_corpus(cls, corpus: Iterable[str]) -> "Vocabulary":
        """Vocabulary in first-appearance order of the corpus tokens."""
        return cls(tuple(dict.fromkeys(corpus)))

    @property
    def tokens(self) -> tuple[str, ...]:
        return self._tokens

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id_of(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise InputError(f"token {token!r} not in vocabulary") from None

    def token_of(self, token_id: int) -> str:
        if not 0 <= token_id < len(self._tokens):
            raise InputError(f"token id {token_id} out of range")
        return self._tokens[token_id]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.id_of(t) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.token_of(i) for i in ids]

    def terminal_ids(self) -> frozenset[int]:
        return frozenset(self._ids[t] for t in TERMINAL_TOKENS if t in self._ids)


@dataclass(frozen=True)
class TokenDistribution:
    """Normalized natural-log probabilities over the vocabulary for one step."""

    logprobs: np.ndarray

    @classmethod
    def from_probs(cls, probs: Sequence[float]) -> "TokenDistribution":
        arr = np.asarray(probs, dtype=np.float64)
        with np.errstate(divide="ignore"):
            return cls(np.log(arr / arr.sum()))

    def validate(self) -> None:
        lp = self.logprobs
        if lp.ndim != 1:
            raise InputError("logprobs must be a vector")
        if np.isnan(lp).any() or (lp == np.inf).any():
            raise InputError("logprobs must be finite or -inf")
        finite = lp[np.isfinite(lp)]
        if finite.size == 0:
            raise InputError("distribution has no support")
        total = np.exp(lp).sum()
        if abs(np.log(total)) > NORMALIZATION_TOL:
            raise InputError(f"distribution not normalized: sum={total!r}")

    def probs(self) -> np.ndarray:
        return np.exp(self.logprobs)

    def __len__(self) -> int:
        return int(self.logprobs.shape[0])


Context = Sequence[int]


class LanguageModel(Protocol):
    @property
    def vocabulary(self) -> Vocabulary: ...

    def next_distribution(self, context: Context) -> TokenDistribution: ...


@dataclass(frozen=True)
class AddKSmoothing:
    """Additive smoothing: p(w|c) = (count(c,w) + k) / (count(c) + k|V|).

    An order-m history with zero observations backs off to the longest seen
    suffix history, down to the always-available unigram level.
    """

    k: float = 1.0

    def __post_init__(self):
        if not self.k > 0:
            raise ConfigurationError("add-k constant must be > 0")

    def to_json(self) -> dict:
        return {"kind": "add_k", "k": self.k}


@dataclass(frozen=True)
class InterpolationSmoothing:
    """Fixed-weight mixture of add-k conditionals of orders 1..len(lambdas)."""

    lambdas: tuple[float, ...]
    k: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "lambdas", tuple(float(x) for x in self.lambdas))
        if any(x < 0 for x in self.lambdas):
            raise ConfigurationError("interpolation weights must be >= 0")
        if abs(sum(self.lambdas) - 1.0) > 1e-9:
            raise ConfigurationError("interpolation weights must sum to 1")
        if not self.k > 0:
            raise ConfigurationError("add-k constant must be > 0")

    def to_json(self) -> dict:
        return {"kind": "interpolation", "lambdas": list(self.lambdas), "k": self.k}


Smoothing = Union[AddKSmoothing, InterpolationSmoothing]


def _smoothing_from_json(obj: dict) -> Smoothing:
    if obj["kind"] == "add_k":
        return AddKSmoothing(k=obj["k"])
    if obj["kind"] == "interpolation":
        return InterpolationSmoothing(lambdas=tuple(obj["lambdas"]), k=obj["k"])
    raise ConfigurationError(f"unknown smoothing kind {obj['kind']!r}")


class _ContextCounts:
    """Sparse continuation counts for one history."""

    __slots__ = ("ids", "counts", "total")

    def __init__(self, ids: np.ndarray, counts: np.ndarray):
        self.ids = ids
        self.counts = counts
        self.total = int(counts.sum())


class NGramLM:
    """Order-n count model with add-k or interpolated smoothing.

    Immutable after training; distributions depend only on the last
    ``order - 1`` context tokens and are cached per suffix.
    """

    def __init__(
        self,
        order: int,
        vocabulary: Vocabulary,
        smoothing: Smoothing,
        levels: Sequence[dict[tuple[int, ...], _ContextCounts]],
    ):
        if order < 1:
            raise ConfigurationError("order must be >= 1")
        if isinstance(smoothing, InterpolationSmoothing) and len(smoothing.lambdas) != order:
            raise ConfigurationError("need one interpolation weight per order level")
        self.order = order
        self._vocab = vocabulary
        self.smoothing = smoothing
        self._levels = tuple(levels)
        self._dist_cache: dict[tuple[int, ...], np.ndarray] = {}

    @property
    def vocabulary(self) -> Vocabulary:
        return self._vocab

    # -- training ----------------------------------------------------------

    @classmethod
    def train(
        cls,
        corpus: Sequence[str],
        order: int,
        smoothing: Smoothing | None = None,
        vocabulary: Vocabulary | None = None,
    ) -> "NGramLM":
        if order < 1:
            raise ConfigurationError("order must be >= 1")
        corpus = list(corpus)
        if not corpus:
            raise ConfigurationError("cannot train on an empty corpus")
        if len(corpus) < order:
            raise ConfigurationError(f"corpus shorter than order ({len(corpus)} < {order})")
        vocab = vocabulary if vocabulary is not None else Vocabulary.from_corpus(corpus)
        ids = vocab.encode(corpus)
        smoothing = smoothing if smoothing is not None else AddKSmoothing(1.0)

        raw: list[dict[tuple[int, ...], dict[int, int]]] = [{} for _ in range(order)]
        for t, nxt in enumerate(ids):
            for m in range(order):
                if t < m:
                    break
                key = tuple(ids[t - m : t])
                bucket = raw[m].setdefault(key, {})
                bucket[nxt] = bucket.get(nxt, 0) + 1

        levels = [
            {key: _freeze_counts(bucket) for key, bucket in level.items()} for level in raw
        ]
        return cls(order, vocab, smoothing, levels)

    # -- scoring -----------------------------------------------------------

    def _check_context(self, context: Context) -> tuple[int, ...]:
        size = len(self._vocab)
        ids = tuple(int(i) for i in context)
        for i in ids:
            if not 0 <= i < size:
                raise InputError(f"token id {i} out of range for |V|={size}")
        return ids

    def _addk_vector(self, level: int, key: tuple[int, ...], k: float) -> np.ndarray:
        dense = np.zeros(len(self._vocab), dtype=np.float64)
        entry = self._levels[level].get(key)
        total = 0
        if entry is not None:
            dense[entry.ids] = entry.counts
            total = entry.total
        return np.log(dense + k) - np.log(total + k * len(self._vocab))

    def _compute_vector(self, suffix: tuple[int, ...]) -> np.ndarray:
        if isinstance(self.smoothing, AddKSmoothing):
            for m in range(len(suffix), -1, -1):
                key = suffix[len(suffix) - m :]
                if key in self._levels[m]:
                    return self._addk_vector(m, key, self.smoothing.k)
            return self._addk_vector(0, (), self.smoothing.k)
        probs = np.zeros(len(self._vocab), dtype=np.float64)
        for m in range(self.order):
            weight = self.smoothing.lambdas[m]
            if weight == 0.0:
                continue
            take = min(m, len(suffix))
            key = suffix[len(suffix) - take :]
            probs += weight * np.exp(self._addk_vector(take, key, self.smoothing.k))
        return np.log(probs)

    def next_distribution(self, context: Context) -> TokenDistribution:
        ids = self._check_context(context)
        keep = min(self.order - 1, len(ids))
        suffix = ids[len(ids) - keep :]
        vec = self._dist_cache.get(suffix)
        if vec is None:
            if len(self._dist_cache) >= _DIST_CACHE_LIMIT:
                self._dist_cache.clear()
            vec = self._compute_vector(suffix)
            vec.setflags(write=False)
            self._dist_cache[suffix] = vec
        return TokenDistribution(vec)

    # -- persistence -------------------------------------------------------

    def save(self, path: str | Path) -> None:
        payload = {
            "format": FORMAT_TAG,
            "order": self.order,
            "smoothing": self.smoothing.to_json(),
            "vocabulary": list(self._vocab.tokens),
            "levels": [
                [
                    [list(key), entry.ids.tolist(), entry.counts.tolist()]
                    for key, entry in sorted(level.items())
                ]
                for level in self._levels
            ],
        }
        Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "NGramLM":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("format") != FORMAT_TAG:
            raise ConfigurationError(f"unsupported model format {payload.get('format')!r}")
        levels = [
            {
                tuple(key): _ContextCounts(
                    np.asarray(ids, dtype=np.int64), np.asarray(counts, dtype=np.int64)
                )
                for key, ids, counts in level
            }
            for level in payload["levels"]
        ]
        return cls(
            payload["order"],
            Vocabulary(payload["vocabulary"]),
            _smoothing_from_json(payload["smoothing"]),
            levels,
        )


def _freeze_counts(bucket: dict[int, int]) -> _ContextCounts:
    ids = np.array(sorted(bucket), dtype=np.int64)
    counts = np.array([bucket[i] for i in ids], dtype=np.int64)
    return _ContextCounts(ids, counts)


def train_ngram(
    corpus: Sequence[str],
    order: int,
    smoothing: Smoothing | None = None,
    vocabulary: Vocabulary | None = None,
) -> NGramLM:
    return NGramLM.train(corpus, order, smoothing, vocabulary)


def next_distribution(model: LanguageModel, context: Context) -> TokenDistribution:
    return model.next_distribution(context)


def sequence_logprob(model: LanguageModel, prefix: Context, continuation: Context) -> float:
    """Chain-rule log-probability of ``continuation`` after ``prefix``."""
    if len(continuation) == 0:
        raise InputError("continuation must be nonempty")
    ctx = list(prefix)
    total = 0.0
    for token in continuation:
        lp = model.next_distribution(ctx).logprobs[int(token)]
        total += float(lp)
        ctx.append(int(token))
    return total


def perplexity(model: LanguageModel, corpus: Sequence[str] | Sequence[int]) -> float:
    """exp of the average per-token negative log-likelihood of ``corpus``.

    A zero-probability token yields +inf rather than an exception.
    """
    items = list(corpus)
    if not items:
        raise ConfigurationError("perplexity of an empty corpus is undefined")
    if isinstance(items[0], str):
        items = model.vocabulary.encode(items)  # type: ignore[arg-type]
    total = 0.0
    ctx: list[int] = []
    for token in items:
        lp = float(model.next_distribution(ctx).logprobs[int(token)])
        if lp == -np.inf:
            return float("inf")
        total += lp
        ctx.append(int(token))
    return float(np.exp(-total / len(items)))
