"""Analytical compute model for guided decoding.

Per-token forward cost uses the standard transformer estimate
``2N + 2 * n_layer * n_ctx * d_model``; the headline overhead ratio uses the
``2N`` approximation, with the attention term available behind a flag.
Wall-clock time is never derived from FLOPs: theoretical ratios and measured
latencies are reported side by side and the gap between them labeled.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

from .errors import IncompleteTrace
from .types import ModelShape

if TYPE_CHECKING:
    from .engine import DecodeTrace


@dataclass(frozen=True)
class CostBreakdown:
    """Per-token FLOPs for vanilla vs entailment-guided decoding."""

    flops_vanilla_per_token: float
    flops_guided_per_token: float
    theoretical_ratio: float
    assumed_m: float


def forward_flops(shape: ModelShape, n_ctx: int, approximate: bool = False) -> float:
    """Per-token forward-pass FLOPs at context length ``n_ctx``.

    With ``approximate`` the attention term is dropped and the cost is 2N.
    """
    if n_ctx < 0:
        raise ValueError("n_ctx must be nonnegative")
    base = 2.0 * shape.n_params_nonembed
    if approximate:
        return base
    return base + 2.0 * shape.n_layer * n_ctx * shape.d_model


def per_token_cost(n_lm: float, n_ent: float, m: float) -> CostBreakdown:
    """Cost of generating one token when the scorer judges ``m`` candidates.

    Vanilla decoding costs 2*N_LM per token; guided decoding adds one
    incremental scorer forward pass (2*N_ent, prefix-cached) per candidate.
    """
    if n_lm <= 0 or n_ent < 0:
        raise ValueError("model sizes must be positive")
    if m < 0:
        raise ValueError("m must be nonnegative")
    vanilla = 2.0 * n_lm
    guided = 2.0 * n_lm + 2.0 * n_ent * m
    return CostBreakdown(
        flops_vanilla_per_token=vanilla,
        flops_guided_per_token=guided,
        theoretical_ratio=guided / vanilla,
        assumed_m=m,
    )


@dataclass(frozen=True)
class TraceReconciliation:
    modeled_generator_flops: float
    modeled_scorer_flops: float
    generator_calls: int
    scorer_calls: int
    tokens_generated: int
    empirical_m: float
    wall_time_s: float


def reconcile_trace(
    trace: "DecodeTrace", generator_shape: ModelShape, scorer_shape: ModelShape
) -> TraceReconciliation:
    """Attribute modeled FLOPs to a decode trace's measured call counts.

    The empirical candidates-per-beam-per-step is
    ``scorer_calls / tokens_generated / K``.  Wall time is carried through
    unchanged; it is a measurement, not a model output.
    """
    counters = trace.counters
    if counters.tokens_generated <= 0:
        raise IncompleteTrace("trace generated no tokens; nothing to reconcile")
    k = trace.beam_width
    empirical_m = counters.scorer_calls / counters.tokens_generated / k
    return TraceReconciliation(
        modeled_generator_flops=2.0 * generator_shape.n_params_nonembed * counters.generator_calls,
        modeled_scorer_flops=2.0 * scorer_shape.n_params_nonembed * counters.scorer_calls,
        generator_calls=counters.generator_calls,
        scorer_calls=counters.scorer_calls,
        tokens_generated=counters.tokens_generated,
        empirical_m=empirical_m,
        wall_time_s=trace.wall_time_s,
    )
