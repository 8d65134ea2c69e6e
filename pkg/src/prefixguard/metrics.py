"""Evaluation metrics: class-specific micro-F1, prefix-length-binned scores
with bootstrap confidence intervals, summary faithfulness proportion, and
LCS-based ROUGE-L.

All functions are pure.  Randomness is confined to the bootstrap, which draws
from a pinned, documented RNG stream so confidence intervals reproduce
bit-for-bit across implementations.
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import EmptyInput, EmptySummary, RecordOutOfRange
from .types import EntailmentLabel

DEFAULT_BIN_EDGES = (0.32, 0.55, 0.78, 1.0)
DEFAULT_N_RESAMPLES = 1000
DEFAULT_CI_LEVEL = 0.95


@dataclass(frozen=True)
class PredictionRecord:
    """A scorer's verdict on one instance, next to the gold label."""

    instance_id: str
    predicted: EntailmentLabel
    gold: EntailmentLabel
    relative_position: float


@dataclass(frozen=True)
class F1Score:
    """Micro-F1 value plus a degenerate-case marker.

    ``degenerate`` is set when the positive class appears in neither gold nor
    predictions; the value is then vacuously 1.0 and downstream reports must
    surface the flag rather than silently folding the bin in.
    """

    value: float
    degenerate: bool = False

    def __float__(self) -> float:
        return self.value


def micro_f1(records: Sequence[PredictionRecord], positive: EntailmentLabel) -> F1Score:
    """Micro-averaged F1 for ``positive`` over pooled counts: 2TP/(2TP+FP+FN)."""
    if not records:
        raise EmptyInput("micro_f1 needs at least one record")
    tp = fp = fn = 0
    for rec in records:
        if rec.predicted is positive and rec.gold is positive:
            tp += 1
        elif rec.predicted is positive:
            fp += 1
        elif rec.gold is positive:
            fn += 1
    if tp == 0 and fp == 0 and fn == 0:
        return F1Score(value=1.0, degenerate=True)
    denom = 2 * tp + fp + fn
    return F1Score(value=2 * tp / denom if denom else 0.0)


@dataclass(frozen=True)
class BinResult:
    low: float
    high: float  # inclusive upper edge
    n: int
    f1: F1Score | None  # None when the bin holds no records
    ci: tuple[float, float] | None = None


@dataclass(frozen=True)
class BinReport:
    edges: tuple[float, ...]
    bins: tuple[BinResult, ...]


def _validate_edges(edges: Sequence[float]) -> tuple[float, ...]:
    edges = tuple(edges)
    if not edges or any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError("bin edges must be strictly increasing")
    if edges[-1] != 1.0:
        raise ValueError("bin edges must end at 1.0")
    if edges[0] <= 0.0:
        raise ValueError("bin edges must be positive")
    return edges


def assign_bin(relative_position: float, edges: Sequence[float]) -> int:
    """Index of the unique bin with ``low < relative_position <= high``."""
    if not 0.0 < relative_position <= 1.0:
        raise RecordOutOfRange(f"relative_position {relative_position} outside (0, 1]")
    return bisect_left(edges, relative_position)


def bin_by_prefix_fraction(
    records: Sequence[PredictionRecord],
    edges: Sequence[float] = DEFAULT_BIN_EDGES,
    positive: EntailmentLabel = EntailmentLabel.NOT_ENTAILED,
) -> BinReport:
    """Point-estimate F1 per prefix-length bin; empty bins report absent, not zero."""
    edges = _validate_edges(edges)
    grouped: list[list[PredictionRecord]] = [[] for _ in edges]
    for rec in records:
        grouped[assign_bin(rec.relative_position, edges)].append(rec)
    bins = []
    lows = (0.0,) + edges[:-1]
    for low, high, group in zip(lows, edges, grouped):
        f1 = micro_f1(group, positive) if group else None
        bins.append(BinResult(low=low, high=high, n=len(group), f1=f1))
    return BinReport(edges=edges, bins=tuple(bins))


# --- bootstrap ---------------------------------------------------------------
#
# RNG stream specification (pinned for cross-implementation reproducibility):
#   generator  = numpy PCG64 seeded with SeedSequence(seed); per-bin streams
#                use SeedSequence([seed, bin_index]).
#   resampling = for each of n_resamples rounds, draw n indices in [0, n) via
#                Generator.integers(0, n, size=n), sequentially from the one
#                generator.
#   interval   = order statistics of the sorted resample values, no
#                interpolation.  The level is first expressed in permille
#                (round(level * 1000)); the bounds are then the
#                ceil(m * (1000 - permille) / 2000)-th and
#                ceil(m * (1000 + permille) / 2000)-th smallest values,
#                computed in exact integer arithmetic so no floating-point
#                rounding can shift a rank.


def bootstrap_rng(seed: int, bin_index: int | None = None) -> np.random.Generator:
    entropy = seed if bin_index is None else [seed, bin_index]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def percentile_bounds(sorted_values: Sequence[float], level: float) -> tuple[float, float]:
    m = len(sorted_values)
    permille = round(level * 1000)
    rank_low = max(-(-(m * (1000 - permille)) // 2000), 1)  # integer ceil division
    rank_high = max(-(-(m * (1000 + permille)) // 2000), 1)
    return sorted_values[rank_low - 1], sorted_values[rank_high - 1]


def bootstrap_ci(
    records: Sequence,
    statistic: Callable[[Sequence], float],
    n_resamples: int = DEFAULT_N_RESAMPLES,
    level: float = DEFAULT_CI_LEVEL,
    seed: int = 0,
    rng: np.random.Generator | None = None,
) -> tuple[float, float]:
    """Percentile confidence interval from seeded resamples-with-replacement.

    ``statistic`` is recomputed on each resample.  Pass ``rng`` to continue an
    existing pinned stream (e.g. a per-bin stream); otherwise one is created
    from ``seed``.
    """
    if not records:
        raise EmptyInput("bootstrap_ci needs at least one record")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie inside (0, 1)")
    gen = rng if rng is not None else bootstrap_rng(seed)
    n = len(records)
    stats = []
    for _ in range(n_resamples):
        idx = gen.integers(0, n, size=n)
        stats.append(statistic([records[i] for i in idx]))
    stats.sort()
    return percentile_bounds(stats, level)


def binned_f1_with_ci(
    records: Sequence[PredictionRecord],
    edges: Sequence[float] = DEFAULT_BIN_EDGES,
    positive: EntailmentLabel = EntailmentLabel.NOT_ENTAILED,
    n_resamples: int = DEFAULT_N_RESAMPLES,
    level: float = DEFAULT_CI_LEVEL,
    seed: int = 0,
) -> BinReport:
    """Per-bin F1 with bootstrap CIs, one pinned RNG stream per bin."""
    report = bin_by_prefix_fraction(records, edges, positive)
    edges = report.edges
    grouped: list[list[PredictionRecord]] = [[] for _ in edges]
    for rec in records:
        grouped[assign_bin(rec.relative_position, edges)].append(rec)
    bins = []
    for bin_index, (result, group) in enumerate(zip(report.bins, grouped)):
        ci = None
        if group:
            ci = bootstrap_ci(
                group,
                lambda g: micro_f1(g, positive).value,
                n_resamples=n_resamples,
                level=level,
                rng=bootstrap_rng(seed, bin_index),
            )
        bins.append(
            BinResult(low=result.low, high=result.high, n=result.n, f1=result.f1, ci=ci)
        )
    return BinReport(edges=edges, bins=tuple(bins))


# --- summary-level metrics ---------------------------------------------------


def faithfulness_proportion(sentence_labels: Sequence[EntailmentLabel]) -> float:
    """Fraction of a summary's sentences judged entailed by the source."""
    if not sentence_labels:
        raise EmptySummary("a summary needs at least one sentence")
    entailed = sum(1 for lab in sentence_labels if lab is EntailmentLabel.ENTAILED)
    return entailed / len(sentence_labels)


def mean_faithfulness(per_summary_labels: Sequence[Sequence[EntailmentLabel]]) -> float:
    """Unweighted mean of per-summary faithfulness scores."""
    if not per_summary_labels:
        raise EmptyInput("no summaries to average")
    return sum(faithfulness_proportion(labels) for labels in per_summary_labels) / len(
        per_summary_labels
    )


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    # single-row DP, O(len(a) * len(b)) time, O(min) memory
    if len(b) < len(a):
        a, b = b, a
    row = [0] * (len(a) + 1)
    for tok_b in b:
        prev_diag = 0
        for i, tok_a in enumerate(a, start=1):
            prev_row = row[i]
            row[i] = prev_diag + 1 if tok_a == tok_b else max(row[i], row[i - 1])
            prev_diag = prev_row
    return row[-1]


def rouge_l_f1(candidate_tokens: Sequence[str], reference_tokens: Sequence[str]) -> float:
    """ROUGE-L F1 over the given tokenization, no stemming or stopword handling.

    Precision and recall derive from the longest common subsequence; the score
    is 0 when the sequences share no subsequence.
    """
    if not candidate_tokens or not reference_tokens:
        raise EmptyInput("rouge_l_f1 needs non-empty token sequences")
    lcs = _lcs_length(candidate_tokens, reference_tokens)
    if lcs == 0:
        return 0.0
    precision = lcs / len(candidate_tokens)
    recall = lcs / len(reference_tokens)
    return 2 * precision * recall / (precision + recall)
