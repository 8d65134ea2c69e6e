from __future__ import annotations

import math

import pytest
from hypothesis import given, strategies as st

from prefixguard.errors import IndexOutOfRange
from prefixguard.types import (
    EXCLUDED,
    DecodingConfig,
    EntailmentLabel,
    Excluded,
    HallucinationSpan,
    HypothesisPrefix,
    MASKED_LOGIT,
    Premise,
    TokenCandidate,
    is_masked,
    make_prefix_instance,
    render_tokens,
    split_sentences,
)

SENT5 = ["a", "b", "c", "d", "e"]


def oracle_label(end_index: int, span: HallucinationSpan | None) -> str:
    """Independent statement of the three-region rule."""
    if span is None or end_index < span.start:
        return "entailed"
    if end_index >= span.end:
        return "not_entailed"
    return "excluded"


class TestMakePrefixInstance:
    def test_prefix_before_span_is_entailed(self):
        inst = make_prefix_instance("p", SENT5, 1, HallucinationSpan(2, 3))
        assert inst.label is EntailmentLabel.ENTAILED
        assert inst.relative_position == 2 / 5
        assert inst.prefix.tokens == ("a", "b")

    def test_prefix_entering_span_is_excluded(self):
        assert make_prefix_instance("p", SENT5, 2, HallucinationSpan(2, 3)) is EXCLUDED

    def test_prefix_reaching_span_end_is_not_entailed(self):
        inst = make_prefix_instance("p", SENT5, 3, HallucinationSpan(2, 3))
        assert inst.label is EntailmentLabel.NOT_ENTAILED

    def test_faithful_sentence_yields_entailed(self):
        inst = make_prefix_instance("p", SENT5, 4, None)
        assert inst.label is EntailmentLabel.ENTAILED
        assert inst.relative_position == 1.0

    def test_end_index_out_of_range(self):
        with pytest.raises(IndexOutOfRange):
            make_prefix_instance("p", SENT5, 5, None)
        with pytest.raises(IndexOutOfRange):
            make_prefix_instance("p", SENT5, -1, None)

    def test_span_outside_sentence(self):
        with pytest.raises(IndexOutOfRange):
            make_prefix_instance("p", SENT5, 0, HallucinationSpan(3, 5))

    @given(
        n=st.integers(min_value=1, max_value=30),
        data=st.data(),
    )
    def test_three_regions_partition_every_index(self, n, data):
        start = data.draw(st.integers(min_value=0, max_value=n - 1))
        end = data.draw(st.integers(min_value=start, max_value=n - 1))
        span = HallucinationSpan(start, end)
        tokens = [f"w{i}" for i in range(n)]
        seen = {"entailed": 0, "not_entailed": 0, "excluded": 0}
        for e in range(n):
            result = make_prefix_instance("p", tokens, e, span)
            expected = oracle_label(e, span)
            if result is EXCLUDED:
                got = "excluded"
            else:
                got = result.label.value
            assert got == expected
            seen[got] += 1
        assert seen["entailed"] == start
        assert seen["excluded"] == end - start
        assert seen["not_entailed"] == n - end

    @given(n=st.integers(min_value=1, max_value=20))
    def test_faithful_sentence_yields_exactly_n_entailed(self, n):
        tokens = [f"w{i}" for i in range(n)]
        results = [make_prefix_instance("p", tokens, e, None) for e in range(n)]
        assert all(r.label is EntailmentLabel.ENTAILED for r in results)
        assert len(results) == n

    def test_relative_position_strictly_increasing(self):
        tokens = [f"w{i}" for i in range(7)]
        positions = [
            make_prefix_instance("p", tokens, e, None).relative_position for e in range(7)
        ]
        assert positions == sorted(positions)
        assert len(set(positions)) == len(positions)


class TestValueObjects:
    def test_premise_requires_text(self):
        with pytest.raises(ValueError):
            Premise(id="x", text="")

    def test_prefix_cannot_exceed_sentence(self):
        with pytest.raises(ValueError):
            HypothesisPrefix(tokens=("a", "b"), sentence_id="s", origin_sentence_len=1)

    def test_span_ordering(self):
        with pytest.raises(ValueError):
            HallucinationSpan(3, 2)

    def test_excluded_is_a_singleton(self):
        assert Excluded() is EXCLUDED

    def test_candidate_rejects_out_of_range_prob(self):
        with pytest.raises(ValueError):
            TokenCandidate(1, "x", 0.0, entail_prob=1.5)

    def test_candidate_rejects_nan_and_plus_inf(self):
        with pytest.raises(ValueError):
            TokenCandidate(1, "x", float("nan"))
        with pytest.raises(ValueError):
            TokenCandidate(1, "x", float("inf"))

    def test_masked_sentinel_is_negative_infinity(self):
        cand = TokenCandidate(1, "x", MASKED_LOGIT)
        assert cand.masked
        assert is_masked(cand.logit)
        assert math.isinf(cand.logit)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"penalty_scale": -1.0},
            {"threshold": 0.0},
            {"threshold": 1.0},
            {"beam_width": 0},
            {"nucleus_mass": 0.0},
            {"nucleus_mass": 1.5},
            {"candidate_cap": 0},
            {"fetch_top_n": 0},
        ],
    )
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            DecodingConfig(**kwargs)

    def test_config_defaults_match_tuned_operating_point(self):
        config = DecodingConfig()
        assert config.penalty_scale == 5.0
        assert config.threshold == 0.5
        assert config.beam_width == 3
        assert config.nucleus_mass == 0.9
        assert config.candidate_cap == 20


class TestRendering:
    def test_space_rule_joins_words(self):
        assert render_tokens(["the", "cat"], "space") == "the cat"

    def test_space_rule_skips_empty_tokens(self):
        assert render_tokens(["the", "", "cat"], "space") == "the cat"

    def test_concat_rule(self):
        assert render_tokens(["un", "believ", "able"], "concat") == "unbelievable"

    def test_unknown_rule(self):
        with pytest.raises(ValueError):
            render_tokens(["a"], "piece")


class TestSentenceSplitting:
    def test_splits_on_terminal_punctuation(self):
        text = "First one. Second one! Third?"
        assert split_sentences(text) == ["First one.", "Second one!", "Third?"]

    def test_no_boundary_is_one_sentence(self):
        assert split_sentences("no terminal punctuation here") == [
            "no terminal punctuation here"
        ]

    def test_abbreviation_period_still_splits(self):
        # the default rule is deliberately simple; callers may plug in their own
        assert len(split_sentences("Dr. Smith arrived.")) == 2
