"""Beam-search decoding with prefix-entailment guidance.

Three regimes share one beam loop:

* vanilla — standard beam search over nucleus-selected candidates;
* prefix-guided — each kept candidate's extended prefix is scored for
  entailment against the source, and low-scoring candidates are penalized by
  a rectified log-odds term before beams are ranked;
* lookahead — the baseline that greedily completes each candidate to a full
  temporary output and scores that completion instead of the prefix itself.

Adjusted logits are renormalized to log-probabilities over the kept candidate
set before accumulation, so cumulative beam scores stay comparable across
beams; that choice is isolated in :func:`adjusted_logprobs` for easy revision.
Every generator and scorer invocation is counted in the trace.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

from .errors import EmptyCandidates, MissingScore
from .gateway import GenerationContext, Generator, Scorer
from .types import (
    MASKED_LOGIT,
    DecodeMode,
    DecodingConfig,
    Premise,
    TokenCandidate,
    is_masked,
)

PUNCTUATION_BOUNDARY = (".", ",", ";", ":", "!", "?")


def rectified_log_odds(logit: float, prob: float, penalty_scale: float, threshold: float) -> float:
    """Apply the scaled log-odds penalty to one logit.

    Probabilities at or above the threshold pass through unchanged; below it
    the logit receives ``penalty_scale * ln(p / (1 - p))``, which is negative
    and grows in magnitude as ``p`` falls.  A probability of exactly zero
    masks the candidate outright (even at zero scale), and a probability of
    one can never reach the penalty branch.
    """
    if prob == 0.0:
        return MASKED_LOGIT
    if prob < threshold:
        return logit + penalty_scale * math.log(prob / (1.0 - prob))
    return logit


def adjust_logits(
    candidates: Sequence[TokenCandidate], penalty_scale: float, threshold: float
) -> list[TokenCandidate]:
    """Rectified log-odds adjustment over a scored candidate list, order preserved."""
    if penalty_scale < 0:
        raise ValueError("penalty_scale must be nonnegative")
    out = []
    for cand in candidates:
        if cand.entail_prob is None:
            raise MissingScore(f"candidate {cand.token_id} has no entailment probability")
        out.append(
            replace(
                cand,
                logit=rectified_log_odds(cand.logit, cand.entail_prob, penalty_scale, threshold),
            )
        )
    return out


def select_nucleus(
    candidates: Sequence[TokenCandidate], nucleus_mass: float, candidate_cap: int
) -> tuple[list[TokenCandidate], list[TokenCandidate]]:
    """Split candidates into the kept top-p set and the masked remainder.

    The softmax is taken over the provided logits; the kept set is the
    smallest prefix of the (already descending) list whose cumulative mass
    reaches ``nucleus_mass``, truncated to ``candidate_cap``.  Masked
    candidates come back with the sentinel logit.
    """
    if not candidates:
        raise EmptyCandidates("select_nucleus needs at least one candidate")
    if not 0.0 < nucleus_mass <= 1.0:
        raise ValueError("nucleus_mass must lie in (0, 1]")
    if candidate_cap < 1:
        raise ValueError("candidate_cap must be positive")
    logits = [c.logit for c in candidates]
    if any(b > a for a, b in zip(logits, logits[1:])):
        raise ValueError("candidates must be sorted by logit descending")

    peak = logits[0]
    weights = [math.exp(l - peak) for l in logits]
    total = sum(weights)
    keep = len(candidates)
    cumulative = 0.0
    for i, w in enumerate(weights):
        cumulative += w / total
        if cumulative >= nucleus_mass:
            keep = i + 1
            break
    keep = min(keep, candidate_cap)
    kept = list(candidates[:keep])
    masked = [replace(c, logit=MASKED_LOGIT) for c in candidates[keep:]]
    return kept, masked


def adjusted_logprobs(logits: Sequence[float]) -> list[float]:
    """Log-softmax over the kept set; masked entries stay at -inf.

    This is the single place where adjusted logits become the normalized
    quantities that cumulative beam scores are built from.
    """
    finite = [l for l in logits if not is_masked(l)]
    if not finite:
        return [MASKED_LOGIT] * len(logits)
    peak = max(finite)
    lse = peak + math.log(sum(math.exp(l - peak) for l in finite))
    return [l - lse if not is_masked(l) else MASKED_LOGIT for l in logits]


# --- trace -------------------------------------------------------------------


@dataclass(frozen=True)
class Beam:
    token_ids: tuple[int, ...]
    text: str
    cum_adjusted_logprob: float
    finished: bool = False


@dataclass(frozen=True)
class Counters:
    generator_calls: int = 0
    scorer_calls: int = 0
    tokens_generated: int = 0


@dataclass(frozen=True)
class CandidateRecord:
    """Everything the engine knew about one candidate at one step."""

    beam_index: int
    token_id: int
    text: str
    logit: float
    kept: bool
    entail_prob: float | None = None
    adjusted_logit: float | None = None
    logprob: float | None = None
    completion_new_tokens: int = 0


@dataclass(frozen=True)
class StepRecord:
    index: int
    beams_in: tuple[Beam, ...]
    candidates: tuple[CandidateRecord, ...]
    beams_out: tuple[Beam, ...]
    counters: Counters


@dataclass
class DecodeTrace:
    """Per-step records plus monotone call counters and wall time."""

    mode: DecodeMode
    beam_width: int
    config: DecodingConfig
    steps: list[StepRecord] = field(default_factory=list)
    counters: Counters = Counters()
    wall_time_s: float = 0.0

    @property
    def completion_new_tokens_total(self) -> int:
        return sum(
            rec.completion_new_tokens for step in self.steps for rec in step.candidates
        )


@dataclass(frozen=True)
class DecodeResult:
    text: str
    token_ids: tuple[int, ...]
    trace: DecodeTrace
    beam: Beam


# --- the beam loop -----------------------------------------------------------


def _append_text(text: str, token_text: str, detok_rule: str) -> str:
    if not token_text:
        return text
    if detok_rule == "concat":
        return text + token_text
    return f"{text} {token_text}" if text else token_text


@dataclass
class _LoopState:
    generator_calls: int = 0
    scorer_calls: int = 0
    tokens_generated: int = 0

    def snapshot(self) -> Counters:
        return Counters(self.generator_calls, self.scorer_calls, self.tokens_generated)


# Given the live beams, their kept candidates, and the loop's counter state
# (which it must keep honest), produce one entailment probability per
# candidate (None = leave the logit untouched), plus the number of completion
# tokens generated on each candidate's behalf.
_ScoreFn = Callable[
    [list[Beam], list[list[TokenCandidate]], "_LoopState"],
    tuple[list[list[float | None]], list[list[int]]],
]


def _wants_score(cand: TokenCandidate, config: DecodingConfig, eos_token_id: int) -> bool:
    if not config.score_only_at_punctuation:
        return True
    # with selective scoring on, punctuation and end-of-sequence are the key
    # decision points
    return cand.token_id == eos_token_id or cand.text.endswith(PUNCTUATION_BOUNDARY)


def _run_beam_loop(
    gen: Generator,
    context: GenerationContext,
    config: DecodingConfig,
    score_fn: _ScoreFn | None,
) -> DecodeResult:
    detok_rule = gen.info().detok_rule
    state = _LoopState()
    trace = DecodeTrace(mode=config.mode, beam_width=config.beam_width, config=config)
    started = time.perf_counter()

    beams: list[Beam] = [Beam(token_ids=(), text="", cum_adjusted_logprob=0.0)]
    for step_index in range(config.max_new_tokens):
        live = [b for b in beams if not b.finished]
        if not live:
            break
        beams_in = tuple(beams)

        kept_per_beam: list[list[TokenCandidate]] = []
        masked_per_beam: list[list[TokenCandidate]] = []
        for beam in live:
            fetched = gen.next_candidates(context, beam.token_ids, config.fetch_top_n)
            state.generator_calls += 1
            kept, masked = select_nucleus(fetched, config.nucleus_mass, config.candidate_cap)
            kept_per_beam.append(kept)
            masked_per_beam.append(masked)

        completion_lens: list[list[int]] = [[0] * len(k) for k in kept_per_beam]
        if score_fn is not None:
            probs_per_beam, completion_lens = score_fn(live, kept_per_beam, state)
            scored: list[list[TokenCandidate]] = []
            for kept, probs in zip(kept_per_beam, probs_per_beam):
                row = []
                for cand, prob in zip(kept, probs):
                    if prob is None:
                        row.append(cand)
                    else:
                        row.append(
                            replace(
                                cand,
                                entail_prob=prob,
                                logit=rectified_log_odds(
                                    cand.logit, prob, config.penalty_scale, config.threshold
                                ),
                            )
                        )
                scored.append(row)
            adjusted_per_beam = scored
        else:
            adjusted_per_beam = kept_per_beam

        # pool: finished beams carry over; live beams propose extensions
        pool: list[tuple[float, tuple[int, ...], Beam, TokenCandidate | None]] = [
            (b.cum_adjusted_logprob, b.token_ids, b, None) for b in beams if b.finished
        ]
        records: list[CandidateRecord] = []
        for beam_pos, (beam, raw_kept, adjusted, masked) in enumerate(
            zip(live, kept_per_beam, adjusted_per_beam, masked_per_beam)
        ):
            logprobs = adjusted_logprobs([c.logit for c in adjusted])
            for raw, adj, logprob, comp_len in zip(
                raw_kept, adjusted, logprobs, completion_lens[beam_pos]
            ):
                records.append(
                    CandidateRecord(
                        beam_index=beam_pos,
                        token_id=raw.token_id,
                        text=raw.text,
                        logit=raw.logit,
                        kept=True,
                        entail_prob=adj.entail_prob,
                        adjusted_logit=adj.logit,
                        logprob=logprob,
                        completion_new_tokens=comp_len,
                    )
                )
                if is_masked(logprob):
                    continue
                ids = beam.token_ids + (adj.token_id,)
                pool.append((beam.cum_adjusted_logprob + logprob, ids, beam, adj))
            for cand in masked:
                records.append(
                    CandidateRecord(
                        beam_index=beam_pos,
                        token_id=cand.token_id,
                        text=cand.text,
                        logit=cand.logit,
                        kept=False,
                    )
                )

        if not pool:
            raise EmptyCandidates("every candidate was masked and no beam is finished")
        pool.sort(key=lambda entry: (-entry[0], entry[1]))
        next_beams: list[Beam] = []
        for score, ids, beam, cand in pool[: config.beam_width]:
            if cand is None:
                next_beams.append(beam)
            else:
                finished = cand.token_id == gen.eos_token_id
                text = beam.text if finished else _append_text(beam.text, cand.text, detok_rule)
                next_beams.append(
                    Beam(
                        token_ids=ids,
                        text=text,
                        cum_adjusted_logprob=score,
                        finished=finished,
                    )
                )
        state.tokens_generated += 1
        beams = next_beams
        trace.steps.append(
            StepRecord(
                index=step_index,
                beams_in=beams_in,
                candidates=tuple(records),
                beams_out=tuple(beams),
                counters=state.snapshot(),
            )
        )

    trace.counters = state.snapshot()
    trace.wall_time_s = time.perf_counter() - started

    finished = [b for b in beams if b.finished]
    ranked = sorted(
        finished or beams, key=lambda b: (-b.cum_adjusted_logprob, b.token_ids)
    )
    best = ranked[0]
    return DecodeResult(text=best.text, token_ids=best.token_ids, trace=trace, beam=best)


# --- the three regimes ---------------------------------------------------


def vanilla_beam_search(
    gen: Generator, context: GenerationContext, config: DecodingConfig
) -> DecodeResult:
    """Standard beam search over nucleus-selected candidates, no intervention."""
    if config.mode is not DecodeMode.VANILLA:
        raise ValueError("config.mode must be VANILLA")
    return _run_beam_loop(gen, context, config, score_fn=None)


def prefix_guided_decode(
    gen: Generator,
    scorer: Scorer,
    premise: Premise,
    context: GenerationContext,
    config: DecodingConfig,
) -> DecodeResult:
    """Entailment-guided beam search.

    At each step every kept candidate's extended prefix is scored against the
    premise in one batched call, penalized via the rectified log-odds term,
    renormalized, and ranked by cumulative adjusted log-probability.  Gateway
    errors abort the decode; there is no silent fallback to vanilla search.
    """
    if config.mode is not DecodeMode.PREFIX_GUIDED:
        raise ValueError("config.mode must be PREFIX_GUIDED")
    detok_rule = gen.info().detok_rule

    def score_fn(live, kept_per_beam, state):
        pairs: list[tuple[str, str]] = []
        slots: list[tuple[int, int]] = []
        probs: list[list[float | None]] = [[None] * len(k) for k in kept_per_beam]
        for bi, (beam, kept) in enumerate(zip(live, kept_per_beam)):
            for ci, cand in enumerate(kept):
                if not _wants_score(cand, config, gen.eos_token_id):
                    continue
                # an eos candidate closes the prefix; the text it is judged on
                # is the completed prefix itself
                hypothesis = (
                    beam.text
                    if cand.token_id == gen.eos_token_id
                    else _append_text(beam.text, cand.text, detok_rule)
                )
                pairs.append((premise.text, hypothesis))
                slots.append((bi, ci))
        scores = scorer.score_batch(pairs) if pairs else []
        state.scorer_calls += len(pairs)
        for (bi, ci), prob in zip(slots, scores):
            probs[bi][ci] = prob
        return probs, [[0] * len(k) for k in kept_per_beam]

    return _run_beam_loop(gen, context, config, score_fn)


def lookahead_decode(
    gen: Generator,
    scorer: Scorer,
    premise: Premise,
    context: GenerationContext,
    config: DecodingConfig,
) -> DecodeResult:
    """Lookahead baseline: score greedy completions instead of prefixes.

    Each kept candidate is greedily extended to a complete output (bounded by
    the remaining token budget), that completion is scored once, and the same
    rectified log-odds adjustment is applied to the candidate's logit.  The
    trace records the completion cost per candidate.
    """
    if config.mode is not DecodeMode.LOOKAHEAD:
        raise ValueError("config.mode must be LOOKAHEAD")
    detok_rule = gen.info().detok_rule

    def score_fn(live, kept_per_beam, state):
        pairs: list[tuple[str, str]] = []
        slots: list[tuple[int, int]] = []
        probs: list[list[float | None]] = [[None] * len(k) for k in kept_per_beam]
        comp_lens: list[list[int]] = [[0] * len(k) for k in kept_per_beam]
        for bi, (beam, kept) in enumerate(zip(live, kept_per_beam)):
            for ci, cand in enumerate(kept):
                if not _wants_score(cand, config, gen.eos_token_id):
                    continue
                ids = beam.token_ids + (cand.token_id,)
                text = (
                    beam.text
                    if cand.token_id == gen.eos_token_id
                    else _append_text(beam.text, cand.text, detok_rule)
                )
                budget = config.max_new_tokens - len(ids)
                new_tokens = 0
                while ids[-1] != gen.eos_token_id and new_tokens < budget:
                    best = gen.next_candidates(context, ids, top_n=1)[0]
                    state.generator_calls += 1
                    new_tokens += 1
                    ids = ids + (best.token_id,)
                    if best.token_id != gen.eos_token_id:
                        text = _append_text(text, best.text, detok_rule)
                comp_lens[bi][ci] = new_tokens
                pairs.append((premise.text, text))
                slots.append((bi, ci))
        scores = scorer.score_batch(pairs) if pairs else []
        state.scorer_calls += len(pairs)
        for (bi, ci), prob in zip(slots, scores):
            probs[bi][ci] = prob
        return probs, comp_lens

    return _run_beam_loop(gen, context, config, score_fn)


def decode(
    gen: Generator,
    context: GenerationContext,
    config: DecodingConfig,
    scorer: Scorer | None = None,
    premise: Premise | None = None,
) -> DecodeResult:
    """Dispatch on ``config.mode``; guided modes require a scorer and premise."""
    if config.mode is DecodeMode.VANILLA:
        return vanilla_beam_search(gen, context, config)
    if scorer is None or premise is None:
        raise ValueError(f"{config.mode.value} decoding needs a scorer and a premise")
    if config.mode is DecodeMode.PREFIX_GUIDED:
        return prefix_guided_decode(gen, scorer, premise, context, config)
    return lookahead_decode(gen, scorer, premise, context, config)


# --- trace export --------------------------------------------------------

TRACE_SCHEMA_VERSION = 1


def _num(x: float | None):
    if x is None:
        return None
    if is_masked(x):
        return "-inf"
    return x


def _penalty(rec: CandidateRecord):
    """Adjustment added to the raw logit; null for unscored candidates."""
    if rec.adjusted_logit is None:
        return None
    if is_masked(rec.adjusted_logit):
        return "-inf"
    return rec.adjusted_logit - rec.logit


def _beam_dict(beam: Beam) -> dict:
    return {
        "token_ids": list(beam.token_ids),
        "text": beam.text,
        "cum_adjusted_logprob": _num(beam.cum_adjusted_logprob),
        "finished": beam.finished,
    }


def trace_to_dict(trace: DecodeTrace) -> dict:
    """Stable-schema dict for plotting and reconciliation.

    Wall time lives in its own ``timing`` section so that everything else is
    reproducible byte-for-byte.
    """
    return {
        "schema_version": TRACE_SCHEMA_VERSION,
        "mode": trace.mode.value,
        "config": {
            "penalty_scale": trace.config.penalty_scale,
            "threshold": trace.config.threshold,
            "beam_width": trace.config.beam_width,
            "nucleus_mass": trace.config.nucleus_mass,
            "candidate_cap": trace.config.candidate_cap,
            "max_new_tokens": trace.config.max_new_tokens,
            "fetch_top_n": trace.config.fetch_top_n,
            "score_only_at_punctuation": trace.config.score_only_at_punctuation,
        },
        "counters": {
            "generator_calls": trace.counters.generator_calls,
            "scorer_calls": trace.counters.scorer_calls,
            "tokens_generated": trace.counters.tokens_generated,
        },
        "steps": [
            {
                "index": step.index,
                "beams_in": [_beam_dict(b) for b in step.beams_in],
                "candidates": [
                    {
                        "beam_index": rec.beam_index,
                        "token_id": rec.token_id,
                        "text": rec.text,
                        "logit": _num(rec.logit),
                        "kept": rec.kept,
                        "entail_prob": rec.entail_prob,
                        "adjusted_logit": _num(rec.adjusted_logit),
                        "penalty": _penalty(rec),
                        "logprob": _num(rec.logprob),
                        "completion_new_tokens": rec.completion_new_tokens,
                    }
                    for rec in step.candidates
                ],
                "beams_out": [_beam_dict(b) for b in step.beams_out],
                "counters": {
                    "generator_calls": step.counters.generator_calls,
                    "scorer_calls": step.counters.scorer_calls,
                    "tokens_generated": step.counters.tokens_generated,
                },
            }
            for step in trace.steps
        ],
        "timing": {"wall_time_s": trace.wall_time_s},
    }


def write_trace(trace: DecodeTrace, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(trace_to_dict(trace), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
