"""Prefix-level entailment checking and entailment-guided decoding."""

from .types import (
    EXCLUDED,
    DecodeMode,
    DecodingConfig,
    EntailmentLabel,
    Excluded,
    HallucinationSpan,
    HypothesisPrefix,
    ModelShape,
    Premise,
    PrefixInstance,
    TokenCandidate,
    make_prefix_instance,
    render_tokens,
    split_sentences,
)

__all__ = [
    "EXCLUDED",
    "DecodeMode",
    "DecodingConfig",
    "EntailmentLabel",
    "Excluded",
    "HallucinationSpan",
    "HypothesisPrefix",
    "ModelShape",
    "Premise",
    "PrefixInstance",
    "TokenCandidate",
    "make_prefix_instance",
    "render_tokens",
    "split_sentences",
]

__version__ = "0.1.0"
