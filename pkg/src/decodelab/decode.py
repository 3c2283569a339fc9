"""Decoding strategies over the language-model contract.

Seven strategies are implemented: greedy, top-k sampling, nucleus (top-p)
sampling, beam search, group-diverse beam search, sibling-diverse beam search
and delayed beam search (per-sentence alternation of sampling and beam
search). Any strategy can additionally carry an n-gram blocking order that
forbids candidates completing an already-generated n-gram.

Determinism contract:
  * likelihood-based strategies never touch the RNG;
  * sampling draws exactly one uniform per emitted token from a counter-based
    Philox stream derived from (global seed, prefix id, replicate), so results
    are independent of scheduling;
  * all probability ties break toward the ascending token id, and final beam
    ties toward the lexicographically smallest token-id sequence.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace
from typing import Sequence, Union

import numpy as np

from ._kernels import blocked_mask, top_indices
from .errors import ConfigurationError, InputError
from .lm import Context, LanguageModel, TokenDistribution

RNG_SCHEME = "philox-sha256/v1"

NUCLEUS_TOL = 1e-12


# ---------------------------------------------------------------------------
# strategy configuration


@dataclass(frozen=True)
class Greedy:
    kind = "greedy"


@dataclass(frozen=True)
class TopK:
    k: int = 2
    kind = "top_k"

    def __post_init__(self):
        if self.k < 1:
            raise ConfigurationError("top-k needs k >= 1")


@dataclass(frozen=True)
class TopP:
    p: float = 0.4
    kind = "top_p"

    def __post_init__(self):
        if not 0 < self.p <= 1:
            raise ConfigurationError("top-p needs 0 < p <= 1")


@dataclass(frozen=True)
class Beam:
    beam_size: int = 15
    kind = "beam"

    def __post_init__(self):
        if self.beam_size < 1:
            raise ConfigurationError("beam size must be >= 1")


@dataclass(frozen=True)
class GroupBS:
    beam_size: int = 16
    groups: int = 2
    diversity_penalty: float = 0.2
    kind = "group_bs"

    def __post_init__(self):
        if self.beam_size < 1 or self.groups < 1:
            raise ConfigurationError("beam size and group count must be >= 1")
        if self.beam_size % self.groups != 0:
            raise ConfigurationError("group count must divide the beam size")
        if self.diversity_penalty < 0:
            raise ConfigurationError("diversity penalty must be >= 0")


@dataclass(frozen=True)
class SiblingBS:
    beam_size: int = 15
    rank_penalty: float = 0.1
    kind = "sibling_bs"

    def __post_init__(self):
        if self.beam_size < 1:
            raise ConfigurationError("beam size must be >= 1")
        if self.rank_penalty < 0:
            raise ConfigurationError("rank penalty must be >= 0")


@dataclass(frozen=True)
class DelayedBS:
    k: int = 100
    beam_size: int = 6
    delay: int = 1
    kind = "delayed_bs"

    def __post_init__(self):
        if self.k < 1 or self.beam_size < 1:
            raise ConfigurationError("top-k width and beam size must be >= 1")
        if self.delay < 0:
            raise ConfigurationError("delay length must be >= 0")


Strategy = Union[Greedy, TopK, TopP, Beam, GroupBS, SiblingBS, DelayedBS]

_STRATEGY_KINDS = {cls.kind: cls for cls in (Greedy, TopK, TopP, Beam, GroupBS, SiblingBS, DelayedBS)}


@dataclass(frozen=True)
class StrategyConfig:
    strategy: Strategy
    blocking_order: int | None = None
    max_tokens: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ConfigurationError("max_tokens must be >= 1")
        if self.blocking_order is not None and self.blocking_order < 2:
            raise ConfigurationError("blocking order must be >= 2")

    @property
    def stochastic(self) -> bool:
        return isinstance(self.strategy, (TopK, TopP, DelayedBS))

    def params(self) -> dict:
        return {f.name: getattr(self.strategy, f.name) for f in fields(self.strategy)}

    def label(self) -> str:
        parts = [self.strategy.kind]
        parts += [f"{name}{value}" for name, value in sorted(self.params().items())]
        if self.blocking_order is not None:
            parts.append(f"block{self.blocking_order}")
        return "_".join(parts)

    def to_json(self) -> dict:
        return {
            "strategy": self.strategy.kind,
            "params": self.params(),
            "blocking_order": self.blocking_order,
            "max_tokens": self.max_tokens,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "StrategyConfig":
        kind = obj["strategy"]
        if kind not in _STRATEGY_KINDS:
            raise ConfigurationError(f"unknown strategy {kind!r}")
        strategy = _STRATEGY_KINDS[kind](**obj.get("params", {}))
        return cls(
            strategy=strategy,
            blocking_order=obj.get("blocking_order"),
            max_tokens=obj.get("max_tokens", 256),
            seed=obj.get("seed", 0),
        )


def default_strategies(max_tokens: int = 256) -> list[StrategyConfig]:
    """The benchmark strategy set with its tuned default parameters."""
    return [
        StrategyConfig(TopK(k=2), max_tokens=max_tokens),
        StrategyConfig(TopP(p=0.4), max_tokens=max_tokens),
        StrategyConfig(Greedy(), max_tokens=max_tokens),
        StrategyConfig(Beam(beam_size=15), max_tokens=max_tokens),
        StrategyConfig(GroupBS(beam_size=16, groups=2, diversity_penalty=0.2), max_tokens=max_tokens),
        StrategyConfig(SiblingBS(beam_size=15, rank_penalty=0.1), max_tokens=max_tokens),
        StrategyConfig(DelayedBS(k=100, beam_size=6, delay=1), max_tokens=max_tokens),
        StrategyConfig(Beam(beam_size=15), blocking_order=20, max_tokens=max_tokens),
    ]


# ---------------------------------------------------------------------------
# hypotheses and records


@dataclass(frozen=True)
class BeamHypothesis:
    token_ids: tuple[int, ...]
    cumulative_logprob: float


@dataclass(frozen=True)
class GenerationRecord:
    prefix_id: str
    strategy: StrategyConfig
    seed: int
    token_ids: tuple[int, ...]
    per_token_logprob: tuple[float, ...]
    rendered_text: str
    deadend_warnings: int = 0

    @property
    def cumulative_logprob(self) -> float:
        return float(sum(self.per_token_logprob))


# ---------------------------------------------------------------------------
# RNG streams


def derive_seed(global_seed: int, prefix_id: str, replicate: int) -> int:
    """Stable 64-bit task seed for one (prefix, replicate) decoding task."""
    msg = f"{RNG_SCHEME}|{global_seed}|{prefix_id}|{replicate}".encode("utf-8")
    return int.from_bytes(hashlib.sha256(msg).digest()[:8], "little")


def rng_from_seed(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.uint64(seed)))


# ---------------------------------------------------------------------------
# samplers


def _draw(idx: np.ndarray, probs: np.ndarray, rng: np.random.Generator) -> int:
    cum = np.cumsum(probs)
    u = rng.random() * cum[-1]
    j = int(np.searchsorted(cum, u, side="right"))
    return int(idx[min(j, len(idx) - 1)])


def _sample_top_k_vec(logprobs: np.ndarray, k: int, rng: np.random.Generator) -> int:
    if not 1 <= k <= logprobs.shape[0]:
        raise ConfigurationError(f"top-k k={k} out of range for |V|={logprobs.shape[0]}")
    idx = top_indices(logprobs, k)
    return _draw(idx, np.exp(logprobs[idx]), rng)


def _sample_top_p_vec(logprobs: np.ndarray, p: float, rng: np.random.Generator) -> int:
    if not 0 < p <= 1:
        raise ConfigurationError(f"top-p p={p} must lie in (0, 1]")
    order = top_indices(logprobs, logprobs.shape[0])
    probs = np.exp(logprobs[order])
    cum = np.cumsum(probs)
    cut = int(np.searchsorted(cum, p - NUCLEUS_TOL, side="left"))
    cut = min(cut, len(order) - 1)
    nucleus = order[: cut + 1]
    return _draw(nucleus, probs[: cut + 1], rng)


def sample_top_k(dist: TokenDistribution, k: int, rng: np.random.Generator) -> int:
    """Sample among the k most probable tokens, renormalized over that set."""
    return _sample_top_k_vec(dist.logprobs, k, rng)


def sample_top_p(dist: TokenDistribution, p: float, rng: np.random.Generator) -> int:
    """Sample from the smallest descending-probability set with mass >= p."""
    return _sample_top_p_vec(dist.logprobs, p, rng)


# ---------------------------------------------------------------------------
# n-gram blocking


def apply_ngram_block(history: Sequence[int], candidate: int, n: int) -> bool:
    """True iff appending ``candidate`` does not repeat an n-gram of ``history``."""
    if n < 2:
        raise ConfigurationError("blocking order must be >= 2")
    h = [int(x) for x in history]
    if len(h) < n:
        return True
    m = n - 1
    tail = h[len(h) - m :]
    for j in range(len(h) - n + 1):
        if h[j : j + m] == tail and h[j + m] == int(candidate):
            return False
    return True


class _Hyp:
    __slots__ = ("tokens", "logprobs", "score")

    def __init__(self, tokens: list[int], logprobs: list[float], score: float):
        self.tokens = tokens
        self.logprobs = logprobs
        self.score = score

    def extend(self, token: int, logprob: float) -> "_Hyp":
        return _Hyp(self.tokens + [token], self.logprobs + [logprob], self.score + logprob)


class _Decoder:
    """Shared machinery: masked distributions, candidate pools, dead-end rule."""

    def __init__(self, model: LanguageModel, prefix_ids: list[int], blocking_order: int | None):
        self.model = model
        self.prefix = prefix_ids
        self.blocking_order = blocking_order
        self.vocab_size = len(model.vocabulary)
        self.deadends = 0

    def step_vectors(self, generated: list[int]) -> tuple[np.ndarray, np.ndarray]:
        """(model logprobs, selection logprobs after blocking) for one history."""
        history = self.prefix + generated
        logprobs = self.model.next_distribution(history).logprobs
        if self.blocking_order is None:
            return logprobs, logprobs
        mask = blocked_mask(np.asarray(history, dtype=np.int64), self.blocking_order, self.vocab_size)
        masked = np.where(mask, -np.inf, logprobs)
        return logprobs, masked

    def pick_greedy(self, generated: list[int]) -> tuple[int, float]:
        logprobs, masked = self.step_vectors(generated)
        if not np.isfinite(masked).any():
            self.deadends += 1
            token = int(top_indices(logprobs, 1)[0])
        else:
            token = int(top_indices(masked, 1)[0])
        return token, float(logprobs[token])

    def pick_sampled(self, generated: list[int], sampler, rng) -> tuple[int, float]:
        logprobs, masked = self.step_vectors(generated)
        if not np.isfinite(masked).any():
            self.deadends += 1
            token = int(top_indices(logprobs, 1)[0])
        else:
            token = sampler(masked, rng)
        return token, float(logprobs[token])

    def candidates(self, generated: list[int], width: int) -> list[tuple[int, float]]:
        """Top ``width`` legal extensions of a history as (token, step logprob)."""
        logprobs, masked = self.step_vectors(generated)
        if not np.isfinite(masked).any():
            self.deadends += 1
            token = int(top_indices(logprobs, 1)[0])
            return [(token, float(logprobs[token]))]
        idx = top_indices(masked, min(width, self.vocab_size))
        return [(int(i), float(logprobs[i])) for i in idx if np.isfinite(masked[i])]


def _best(hyps: Sequence[_Hyp]) -> _Hyp:
    return min(hyps, key=lambda h: (-h.score, h.tokens))


def _beam_select(pool: list[tuple[float, int, int, float]], width: int) -> list[tuple[float, int, int, float]]:
    """Pick the ``width`` best (selection_score, parent, token, step_logprob)."""
    pool.sort(key=lambda c: (-c[0], c[1], c[2]))
    return pool[:width]


# ---------------------------------------------------------------------------
# decoding strategies


def _record(
    prefix_id: str,
    cfg: StrategyConfig,
    model: LanguageModel,
    tokens: list[int],
    logprobs: list[float],
    deadends: int,
) -> GenerationRecord:
    text = " ".join(model.vocabulary.decode(tokens))
    return GenerationRecord(
        prefix_id=prefix_id,
        strategy=cfg,
        seed=cfg.seed,
        token_ids=tuple(tokens),
        per_token_logprob=tuple(logprobs),
        rendered_text=text,
        deadend_warnings=deadends,
    )


def _check_prefix(model: LanguageModel, prefix: Context) -> list[int]:
    size = len(model.vocabulary)
    ids = [int(i) for i in prefix]
    for i in ids:
        if not 0 <= i < size:
            raise InputError(f"prefix token id {i} out of range for |V|={size}")
    return ids


def decode_greedy(
    model: LanguageModel, prefix: Context, cfg: StrategyConfig, prefix_id: str = ""
) -> GenerationRecord:
    dec = _Decoder(model, _check_prefix(model, prefix), cfg.blocking_order)
    tokens: list[int] = []
    logprobs: list[float] = []
    for _ in range(cfg.max_tokens):
        token, lp = dec.pick_greedy(tokens)
        tokens.append(token)
        logprobs.append(lp)
    return _record(prefix_id, cfg, model, tokens, logprobs, dec.deadends)


def _decode_sampling(
    model: LanguageModel,
    prefix: Context,
    cfg: StrategyConfig,
    prefix_id: str,
    rng: np.random.Generator,
) -> GenerationRecord:
    strategy = cfg.strategy
    if isinstance(strategy, TopK):
        sampler = lambda vec, r: _sample_top_k_vec(vec, strategy.k, r)  # noqa: E731
    else:
        sampler = lambda vec, r: _sample_top_p_vec(vec, strategy.p, r)  # noqa: E731
    dec = _Decoder(model, _check_prefix(model, prefix), cfg.blocking_order)
    tokens: list[int] = []
    logprobs: list[float] = []
    for _ in range(cfg.max_tokens):
        token, lp = dec.pick_sampled(tokens, sampler, rng)
        tokens.append(token)
        logprobs.append(lp)
    return _record(prefix_id, cfg, model, tokens, logprobs, dec.deadends)


def _run_beam(dec: _Decoder, beam_size: int, steps: int) -> _Hyp:
    beam = [_Hyp([], [], 0.0)]
    for _ in range(steps):
        pool: list[tuple[float, int, int, float]] = []
        for pi, hyp in enumerate(beam):
            for token, lp in dec.candidates(hyp.tokens, beam_size):
                pool.append((hyp.score + lp, pi, token, lp))
        chosen = _beam_select(pool, beam_size)
        beam = [beam[pi].extend(token, lp) for _, pi, token, lp in chosen]
    return _best(beam)


def decode_beam(
    model: LanguageModel, prefix: Context, cfg: StrategyConfig, prefix_id: str = ""
) -> GenerationRecord:
    if not isinstance(cfg.strategy, Beam):
        raise ConfigurationError("decode_beam requires a Beam strategy")
    dec = _Decoder(model, _check_prefix(model, prefix), cfg.blocking_order)
    best = _run_beam(dec, cfg.strategy.beam_size, cfg.max_tokens)
    return _record(prefix_id, cfg, model, best.tokens, best.logprobs, dec.deadends)


def decode_group_bs(
    model: LanguageModel, prefix: Context, cfg: StrategyConfig, prefix_id: str = ""
) -> GenerationRecord:
    """Beam search whose per-step selection is split into group rounds.

    Round g takes the next ``beam_size / groups`` best candidates from the
    shared pool, where a candidate token's selection score is discounted by
    ``penalty`` times the number of times earlier rounds selected that token
    at this step. One round, or a zero penalty, is plain beam search.
    """
    strategy = cfg.strategy
    if not isinstance(strategy, GroupBS):
        raise ConfigurationError("decode_group_bs requires a GroupBS strategy")
    beam_size, groups, penalty = strategy.beam_size, strategy.groups, strategy.diversity_penalty
    group_width = beam_size // groups

    dec = _Decoder(model, _check_prefix(model, prefix), cfg.blocking_order)
    beam = [_Hyp([], [], 0.0)]
    for _ in range(cfg.max_tokens):
        pool: list[tuple[float, int, int, float]] = []
        for pi, hyp in enumerate(beam):
            for token, lp in dec.candidates(hyp.tokens, beam_size):
                pool.append((hyp.score + lp, pi, token, lp))
        token_uses = np.zeros(dec.vocab_size, dtype=np.float64)
        taken: set[int] = set()
        new_beam: list[_Hyp] = []
        for _g in range(groups):
            ranked = sorted(
                (ci for ci in range(len(pool)) if ci not in taken),
                key=lambda ci: (
                    -(pool[ci][0] - penalty * token_uses[pool[ci][2]]),
                    pool[ci][1],
                    pool[ci][2],
                ),
            )
            chosen = ranked[:group_width]
            for ci in chosen:
                _, pi, token, lp = pool[ci]
                new_beam.append(beam[pi].extend(token, lp))
                taken.add(ci)
            for ci in chosen:
                token_uses[pool[ci][2]] += 1.0
        beam = new_beam
    best = _best(beam)
    return _record(prefix_id, cfg, model, best.tokens, best.logprobs, dec.deadends)


def decode_sibling_bs(
    model: LanguageModel, prefix: Context, cfg: StrategyConfig, prefix_id: str = ""
) -> GenerationRecord:
    """Beam search with a per-parent rank penalty on candidate extensions.

    Each hypothesis ranks its candidate extensions by step log-probability
    (rank 0, 1, 2, ...); a candidate's selection score is its cumulative
    log-probability minus ``penalty * rank``. Stored scores stay unpenalized.
    """
    strategy = cfg.strategy
    if not isinstance(strategy, SiblingBS):
        raise ConfigurationError("decode_sibling_bs requires a SiblingBS strategy")
    beam_size, penalty = strategy.beam_size, strategy.rank_penalty

    dec = _Decoder(model, _check_prefix(model, prefix), cfg.blocking_order)
    beam = [_Hyp([], [], 0.0)]
    for _ in range(cfg.max_tokens):
        pool: list[tuple[float, int, int, float]] = []
        for pi, hyp in enumerate(beam):
            for rank, (token, lp) in enumerate(dec.candidates(hyp.tokens, beam_size)):
                pool.append((hyp.score + lp - penalty * rank, pi, token, lp))
        chosen = _beam_select(pool, beam_size)
        beam = [beam[pi].extend(token, lp) for _, pi, token, lp in chosen]
    best = _best(beam)
    return _record(prefix_id, cfg, model, best.tokens, best.logprobs, dec.deadends)


def _beam_sentence(
    dec: _Decoder,
    committed: list[int],
    beam_size: int,
    budget: int,
    terminal_ids: frozenset[int],
) -> _Hyp:
    """Beam-search one sentence continuation of ``committed``.

    Hypotheses freeze once they emit a terminal token. The phase commits as
    soon as the best frozen hypothesis outranks every active one (extension
    log-probabilities are <= 0, so active scores cannot recover), or when the
    token budget is exhausted.
    """
    active = [_Hyp([], [], 0.0)]
    finished: _Hyp | None = None
    for _ in range(budget):
        pool: list[tuple[float, int, int, float]] = []
        for pi, hyp in enumerate(active):
            for token, lp in dec.candidates(committed + hyp.tokens, beam_size):
                pool.append((hyp.score + lp, pi, token, lp))
        chosen = _beam_select(pool, beam_size)
        next_active: list[_Hyp] = []
        for _, pi, token, lp in chosen:
            hyp = active[pi].extend(token, lp)
            if token in terminal_ids:
                if finished is None or (-hyp.score, hyp.tokens) < (-finished.score, finished.tokens):
                    finished = hyp
            else:
                next_active.append(hyp)
        active = next_active
        if not active:
            break
        if finished is not None and (-finished.score, finished.tokens) <= (
            -active[0].score,
            active[0].tokens,
        ):
            return finished
    contenders = active + ([finished] if finished is not None else [])
    return _best(contenders)


def decode_delayed_bs(
    model: LanguageModel, prefix: Context, cfg: StrategyConfig, prefix_id: str = "", rng=None
) -> GenerationRecord:
    """Sample the first ``delay`` tokens of each sentence with top-k, then
    finish the sentence with beam search and collapse to the best hypothesis.

    ``delay=0`` degenerates to plain beam search; a delay at or beyond the
    token budget degenerates to pure top-k sampling.
    """
    strategy = cfg.strategy
    if not isinstance(strategy, DelayedBS):
        raise ConfigurationError("decode_delayed_bs requires a DelayedBS strategy")
    if strategy.delay == 0:
        beam_cfg = replace(cfg, strategy=Beam(beam_size=strategy.beam_size))
        rec = decode_beam(model, prefix, beam_cfg, prefix_id)
        return replace(rec, strategy=cfg)

    if rng is None:
        rng = rng_from_seed(cfg.seed)
    prefix_ids = _check_prefix(model, prefix)
    if strategy.k > len(model.vocabulary):
        raise ConfigurationError(
            f"top-k k={strategy.k} exceeds |V|={len(model.vocabulary)}"
        )
    terminal_ids = model.vocabulary.terminal_ids()
    dec = _Decoder(model, prefix_ids, cfg.blocking_order)
    sampler = lambda vec, r: _sample_top_k_vec(vec, strategy.k, r)  # noqa: E731

    tokens: list[int] = []
    logprobs: list[float] = []
    sentence_pos = 0
    while len(tokens) < cfg.max_tokens:
        if sentence_pos < strategy.delay:
            token, lp = dec.pick_sampled(tokens, sampler, rng)
            tokens.append(token)
            logprobs.append(lp)
            sentence_pos = 0 if token in terminal_ids else sentence_pos + 1
        else:
            budget = cfg.max_tokens - len(tokens)
            best = _beam_sentence(dec, tokens, strategy.beam_size, budget, terminal_ids)
            tokens.extend(best.tokens)
            logprobs.extend(best.logprobs)
            sentence_pos = 0
    return _record(prefix_id, cfg, model, tokens, logprobs, dec.deadends)


def generate(
    model: LanguageModel,
    prefix: Context,
    cfg: StrategyConfig,
    prefix_id: str = "",
    rng: np.random.Generator | None = None,
) -> GenerationRecord:
    """Decode one fixed-length continuation with the configured strategy."""
    strategy = cfg.strategy
    if isinstance(strategy, Greedy):
        return decode_greedy(model, prefix, cfg, prefix_id)
    if isinstance(strategy, (TopK, TopP)):
        if rng is None:
            rng = rng_from_seed(cfg.seed)
        return _decode_sampling(model, prefix, cfg, prefix_id, rng)
    if isinstance(strategy, Beam):
        return decode_beam(model, prefix, cfg, prefix_id)
    if isinstance(strategy, GroupBS):
        return decode_group_bs(model, prefix, cfg, prefix_id)
    if isinstance(strategy, SiblingBS):
        return decode_sibling_bs(model, prefix, cfg, prefix_id)
    if isinstance(strategy, DelayedBS):
        return decode_delayed_bs(model, prefix, cfg, prefix_id, rng)
    raise ConfigurationError(f"unrecognized strategy {strategy!r}")
