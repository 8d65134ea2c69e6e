"""Shared domain vocabulary: documents, prefixes, spans, labels, candidates.

All types are immutable values and safe to share between threads.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, replace
from typing import Callable, Sequence

from .errors import IndexOutOfRange

#: Sentinel logit for candidates excluded from consideration.  Kept as IEEE
#: negative infinity (a distinguished value, not a large negative float) so it
#: survives arithmetic and serialization exactly.
MASKED_LOGIT = float("-inf")


def is_masked(logit: float) -> bool:
    return logit == MASKED_LOGIT


class EntailmentLabel(enum.Enum):
    """Binary entailment verdict for a (premise, prefix) pair."""

    ENTAILED = "entailed"
    NOT_ENTAILED = "not_entailed"


@dataclass(frozen=True)
class Premise:
    """A source document against which faithfulness is judged."""

    id: str
    text: str

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("premise text must be non-empty")
        if not self.id:
            raise ValueError("premise id must be non-empty")


@dataclass(frozen=True)
class HallucinationSpan:
    """Token-index range of the first unsupported utterance in a sentence.

    Indices are 0-based and the end is inclusive: the prefix ending exactly at
    ``end`` is the first one that contains the whole span.
    """

    start: int
    end: int

    def __post_init__(self) -> None:
        if self.start < 0 or self.end < self.start:
            raise ValueError(f"invalid span [{self.start}, {self.end}]")


@dataclass(frozen=True)
class HypothesisPrefix:
    """The first ``t`` surface tokens of a generated sentence."""

    tokens: tuple[str, ...]
    sentence_id: str
    origin_sentence_len: int

    def __post_init__(self) -> None:
        if not isinstance(self.tokens, tuple):
            object.__setattr__(self, "tokens", tuple(self.tokens))
        if self.t < 1:
            raise ValueError("a prefix holds at least one token")
        if self.t > self.origin_sentence_len:
            raise ValueError(
                f"prefix length {self.t} exceeds sentence length {self.origin_sentence_len}"
            )

    @property
    def t(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class PrefixInstance:
    """One labeled (premise, hypothesis-prefix) pair."""

    premise_id: str
    prefix: HypothesisPrefix
    label: EntailmentLabel

    @property
    def relative_position(self) -> float:
        """Prefix length as a fraction of the full sentence, in (0, 1].

        Always computed from ``t`` and the origin length, never stored.
        """
        return self.prefix.t / self.prefix.origin_sentence_len


class Excluded:
    """Marker for prefixes that partially overlap a hallucination span.

    Their entailment label cannot be deduced, so they are dropped rather
    than labeled.
    """

    _instance: "Excluded | None" = None

    def __new__(cls) -> "Excluded":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "EXCLUDED"


EXCLUDED = Excluded()


@dataclass(frozen=True)
class TokenCandidate:
    """A next-token proposal from the generator.

    ``logit`` is the raw generator logit; ``entail_prob`` is filled in once the
    scorer has judged the extended prefix.  A masked candidate carries
    ``MASKED_LOGIT``.
    """

    token_id: int
    text: str
    logit: float
    entail_prob: float | None = None

    def __post_init__(self) -> None:
        if self.entail_prob is not None and not 0.0 <= self.entail_prob <= 1.0:
            raise ValueError(f"entail_prob {self.entail_prob} outside [0, 1]")
        if math.isnan(self.logit) or self.logit == float("inf"):
            raise ValueError("logit must be finite or the masked sentinel")

    @property
    def masked(self) -> bool:
        return is_masked(self.logit)

    def with_score(self, prob: float) -> "TokenCandidate":
        return replace(self, entail_prob=prob)


class DecodeMode(enum.Enum):
    VANILLA = "vanilla"
    PREFIX_GUIDED = "prefix_guided"
    LOOKAHEAD = "lookahead"


@dataclass(frozen=True)
class DecodingConfig:
    """Hyper-parameters of the guided decoder.

    Defaults follow the tuned operating point: penalty scale 5, rectification
    threshold 0.5, beam width 3, nucleus mass 0.9, and at most 20 candidates
    kept per beam per step.
    """

    penalty_scale: float = 5.0       # lambda
    threshold: float = 0.5           # tau
    beam_width: int = 3              # K
    nucleus_mass: float = 0.9        # p
    candidate_cap: int = 20          # M_max
    max_new_tokens: int = 64
    mode: DecodeMode = DecodeMode.PREFIX_GUIDED
    fetch_top_n: int = 50
    score_only_at_punctuation: bool = False

    def __post_init__(self) -> None:
        if self.penalty_scale < 0:
            raise ValueError("penalty_scale must be nonnegative")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie inside (0, 1)")
        if self.beam_width < 1:
            raise ValueError("beam_width must be positive")
        if not 0.0 < self.nucleus_mass <= 1.0:
            raise ValueError("nucleus_mass must lie in (0, 1]")
        if self.candidate_cap < 1:
            raise ValueError("candidate_cap must be positive")
        if self.max_new_tokens < 0:
            raise ValueError("max_new_tokens must be nonnegative")
        if self.fetch_top_n < 1:
            raise ValueError("fetch_top_n must be positive")


@dataclass(frozen=True)
class ModelShape:
    """Transformer shape parameters used by the compute-cost model."""

    n_params_nonembed: int
    n_layer: int
    d_model: int

    def __post_init__(self) -> None:
        if min(self.n_params_nonembed, self.n_layer, self.d_model) < 1:
            raise ValueError("all shape parameters must be positive")


def make_prefix_instance(
    premise_id: str,
    sentence_tokens: Sequence[str],
    end_index: int,
    span: HallucinationSpan | None,
    sentence_id: str = "s0",
) -> PrefixInstance | Excluded:
    """Label the prefix of ``sentence_tokens`` ending at ``end_index`` (inclusive).

    Three regions partition the sentence relative to its span: prefixes ending
    before the span start are entailed, prefixes ending at or after the span's
    last token are not entailed, and prefixes ending strictly inside the span
    are excluded (their label cannot be deduced).  Faithful sentences
    (``span is None``) yield only entailed prefixes.
    """
    n = len(sentence_tokens)
    if end_index < 0 or end_index >= n:
        raise IndexOutOfRange(f"end_index {end_index} outside sentence of {n} tokens")
    if span is not None and span.end >= n:
        raise IndexOutOfRange(f"span [{span.start}, {span.end}] outside sentence of {n} tokens")

    if span is None or end_index < span.start:
        label = EntailmentLabel.ENTAILED
    elif end_index >= span.end:
        label = EntailmentLabel.NOT_ENTAILED
    else:
        return EXCLUDED

    prefix = HypothesisPrefix(
        tokens=tuple(sentence_tokens[: end_index + 1]),
        sentence_id=sentence_id,
        origin_sentence_len=n,
    )
    return PrefixInstance(premise_id=premise_id, prefix=prefix, label=label)


# --- token rendering ---------------------------------------------------------

DETOK_RULES: dict[str, Callable[[Sequence[str]], str]] = {
    # word-level tokens joined by a single space
    "space": lambda toks: " ".join(t for t in toks if t),
    # subword-style tokens that carry their own spacing
    "concat": lambda toks: "".join(toks),
}


def render_tokens(tokens: Sequence[str], detok_rule: str = "space") -> str:
    """Detokenize surface tokens per the rule recorded in the corpus header."""
    try:
        rule = DETOK_RULES[detok_rule]
    except KeyError:
        raise ValueError(f"unknown detokenization rule {detok_rule!r}") from None
    return rule(tokens)


# --- sentence segmentation ---------------------------------------------------

SentenceSplitter = Callable[[str], list[str]]

_SENTENCE_BOUNDARY = re.compile(r"(?<=[.!?])\s+")


def split_sentences(text: str) -> list[str]:
    """Default pluggable segmentation: split after terminal punctuation
    followed by whitespace."""
    parts = [p.strip() for p in _SENTENCE_BOUNDARY.split(text)]
    return [p for p in parts if p]
