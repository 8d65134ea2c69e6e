from __future__ import annotations

import random

import pytest

from prefixguard.cost import forward_flops, per_token_cost, reconcile_trace
from prefixguard.engine import Counters, DecodeTrace, prefix_guided_decode, vanilla_beam_search
from prefixguard.errors import IncompleteTrace
from prefixguard.gateway import GenerationContext, TableScorer
from prefixguard.types import DecodeMode, DecodingConfig, ModelShape, Premise

from worlds import EOS, mock_generator

REFERENCE_1B = ModelShape(n_params_nonembed=1_230_000_000, n_layer=16, d_model=2048)


class TestForwardFlops:
    def test_direct_arithmetic(self):
        shape = ModelShape(n_params_nonembed=10**9, n_layer=16, d_model=2048)
        assert forward_flops(shape, n_ctx=1024) == 2.067108864e9

    def test_zero_context_is_twice_params(self):
        shape = ModelShape(n_params_nonembed=7, n_layer=3, d_model=5)
        assert forward_flops(shape, n_ctx=0) == 14.0

    def test_doubling_context_doubles_only_attention_term(self):
        shape = ModelShape(n_params_nonembed=10**9, n_layer=16, d_model=2048)
        base = 2.0 * shape.n_params_nonembed
        attn = forward_flops(shape, 512) - base
        assert forward_flops(shape, 1024) - base == 2 * attn

    def test_approximation_drops_attention_term(self):
        shape = ModelShape(n_params_nonembed=123, n_layer=4, d_model=8)
        assert forward_flops(shape, 10_000, approximate=True) == 246.0

    def test_always_at_least_twice_params(self):
        rng = random.Random(0)
        for _ in range(200):
            shape = ModelShape(
                n_params_nonembed=rng.randint(1, 10**10),
                n_layer=rng.randint(1, 128),
                d_model=rng.randint(1, 16384),
            )
            assert forward_flops(shape, rng.randint(0, 10**5)) >= 2 * shape.n_params_nonembed


class TestPerTokenCost:
    def test_reference_operating_point(self):
        cost = per_token_cost(1.23e9, 1.23e9, 6)
        assert cost.flops_vanilla_per_token == 2.46e9
        assert cost.flops_guided_per_token == 17.22e9
        assert cost.theoretical_ratio == pytest.approx(7.0, abs=1e-9)

    def test_zero_candidates_means_no_overhead(self):
        assert per_token_cost(1e9, 1e9, 0).theoretical_ratio == 1.0

    def test_vanishing_scorer_means_no_overhead(self):
        assert per_token_cost(1e9, 1e-3, 8).theoretical_ratio == pytest.approx(1.0, abs=1e-9)

    def test_ratio_identity(self):
        rng = random.Random(7)
        for _ in range(500):
            n_lm = rng.uniform(1e6, 1e12)
            n_ent = rng.uniform(1e6, 1e12)
            m = rng.uniform(0, 40)
            cost = per_token_cost(n_lm, n_ent, m)
            assert cost.theoretical_ratio == pytest.approx(1 + (n_ent / n_lm) * m, rel=1e-12)

    def test_input_validation(self):
        with pytest.raises(ValueError):
            per_token_cost(0, 1, 1)
        with pytest.raises(ValueError):
            per_token_cost(1, 1, -2)


def three_way_single_step_world():
    table = {
        "ctx": {
            (): [(1, "a", 1.0), (2, "b", 0.5), (3, "c", 0.0)],
            (1,): [(EOS, "", 1.0)],
            (2,): [(EOS, "", 1.0)],
            (3,): [(EOS, "", 1.0)],
        }
    }
    gen = mock_generator(table)
    scorer = TableScorer({}, default=0.9)
    return gen, scorer


class TestReconcileTrace:
    def test_single_step_empirical_m(self):
        gen, scorer = three_way_single_step_world()
        config = DecodingConfig(
            mode=DecodeMode.PREFIX_GUIDED, beam_width=1, max_new_tokens=1, nucleus_mass=1.0
        )
        result = prefix_guided_decode(
            gen, scorer, Premise(id="ctx", text="src"), GenerationContext("ctx"), config
        )
        rec = reconcile_trace(result.trace, REFERENCE_1B, REFERENCE_1B)
        assert rec.scorer_calls == 3
        assert rec.tokens_generated == 1
        assert rec.empirical_m == 3.0
        assert rec.modeled_scorer_flops == 2.0 * REFERENCE_1B.n_params_nonembed * 3

    def test_vanilla_trace_has_zero_scorer_flops(self):
        gen, _ = three_way_single_step_world()
        config = DecodingConfig(mode=DecodeMode.VANILLA, beam_width=1, max_new_tokens=4)
        result = vanilla_beam_search(gen, GenerationContext("ctx"), config)
        rec = reconcile_trace(result.trace, REFERENCE_1B, REFERENCE_1B)
        assert rec.modeled_scorer_flops == 0.0
        assert rec.empirical_m == 0.0

    def test_reported_average_m_reproduces_the_headline_ratio(self):
        # a trace whose empirical M is 6 feeds straight into the cost model
        trace = DecodeTrace(
            mode=DecodeMode.PREFIX_GUIDED,
            beam_width=3,
            config=DecodingConfig(mode=DecodeMode.PREFIX_GUIDED),
            counters=Counters(generator_calls=120, scorer_calls=720, tokens_generated=40),
            wall_time_s=1.0,
        )
        rec = reconcile_trace(trace, REFERENCE_1B, REFERENCE_1B)
        assert rec.empirical_m == 6.0
        cost = per_token_cost(1.23e9, 1.23e9, rec.empirical_m)
        assert cost.theoretical_ratio == pytest.approx(7.0, abs=1e-9)

    def test_modeled_flops_linear_in_counters(self):
        base = Counters(generator_calls=10, scorer_calls=30, tokens_generated=10)
        doubled = Counters(generator_calls=20, scorer_calls=60, tokens_generated=20)
        config = DecodingConfig(mode=DecodeMode.PREFIX_GUIDED)
        t1 = DecodeTrace(mode=DecodeMode.PREFIX_GUIDED, beam_width=3, config=config,
                         counters=base, wall_time_s=0.0)
        t2 = DecodeTrace(mode=DecodeMode.PREFIX_GUIDED, beam_width=3, config=config,
                         counters=doubled, wall_time_s=0.0)
        r1 = reconcile_trace(t1, REFERENCE_1B, REFERENCE_1B)
        r2 = reconcile_trace(t2, REFERENCE_1B, REFERENCE_1B)
        assert r2.modeled_generator_flops == 2 * r1.modeled_generator_flops
        assert r2.modeled_scorer_flops == 2 * r1.modeled_scorer_flops

    def test_empty_trace_rejected(self):
        trace = DecodeTrace(
            mode=DecodeMode.VANILLA,
            beam_width=1,
            config=DecodingConfig(mode=DecodeMode.VANILLA),
        )
        with pytest.raises(IncompleteTrace):
            reconcile_trace(trace, REFERENCE_1B, REFERENCE_1B)
