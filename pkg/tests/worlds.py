"""Builders for deterministic mock worlds used across the test suite."""

from __future__ import annotations

import random
from pathlib import Path

from prefixguard.gateway import (
    GenerationContext,
    HandleInfo,
    MockGenerator,
    SpanOracleScorer,
)
from prefixguard.types import HallucinationSpan, ModelShape, Premise, TokenCandidate

FIXTURES = Path(__file__).parent / "fixtures"
GOALKEEPER = FIXTURES / "goalkeeper.mock.json"

TOY_SHAPE = ModelShape(n_params_nonembed=1_000_000, n_layer=4, d_model=128)
EOS = 0


def mock_generator(table: dict[str, dict[tuple[int, ...], list[tuple[int, str, float]]]],
                   eos_token_id: int = EOS, name: str = "mock") -> MockGenerator:
    built = {
        ctx: {
            prefix: tuple(TokenCandidate(tid, text, logit) for tid, text, logit in cands)
            for prefix, cands in entries.items()
        }
        for ctx, entries in table.items()
    }
    info = HandleInfo(name=name, shape=TOY_SHAPE, tokenizer_id="word", detok_rule="space")
    return MockGenerator(built, eos_token_id=eos_token_id, info=info)


def chain_generator(tokens: list[tuple[int, str]], context_id: str = "ctx") -> MockGenerator:
    """A generator whose only path is the given chain followed by eos."""
    entries: dict[tuple[int, ...], list[tuple[int, str, float]]] = {}
    prefix: tuple[int, ...] = ()
    for tid, text in tokens:
        entries[prefix] = [(tid, text, 1.0)]
        prefix = prefix + (tid,)
    entries[prefix] = [(EOS, "", 1.0)]
    return mock_generator({context_id: entries})


def random_tree_generator(
    seed: int,
    context_id: str = "ctx",
    max_depth: int = 5,
    max_branching: int = 3,
) -> MockGenerator:
    """A total random candidate table: every reachable prefix is declared.

    Nodes at the depth limit offer only eos; interior nodes offer 1..3
    distinct tokens with random logits, sometimes including eos.
    """
    rng = random.Random(seed)
    entries: dict[tuple[int, ...], list[tuple[int, str, float]]] = {}

    def grow(prefix: tuple[int, ...], depth: int) -> None:
        if depth >= max_depth:
            entries[prefix] = [(EOS, "", rng.uniform(-1.0, 1.0))]
            return
        n = rng.randint(1, max_branching)
        ids = rng.sample(range(1, 40), n)
        cands = [(tid, f"t{tid}", round(rng.uniform(-2.0, 2.0), 6)) for tid in ids]
        if rng.random() < 0.25:
            cands.append((EOS, "", round(rng.uniform(-2.0, 2.0), 6)))
        entries[prefix] = cands
        for tid, _, _ in cands:
            if tid != EOS:
                grow(prefix + (tid,), depth + 1)

    grow((), 0)
    return mock_generator({context_id: entries}, name=f"random-tree-{seed}")


def spanned_world(seed: int, sentence_len: int = 8, floor: float = 0.2, ceiling: float = 0.9):
    """A world with one faithful sentence and hallucination branches.

    At each step along the faithful path the generator offers the true next
    token plus one or two hallucinated tokens whose logits exceed the faithful
    token's by up to ``max_gap``.  Gaps are bounded at 1.2 so the faithful
    token always stays inside the 0.9 nucleus (its softmax mass is at least
    1 / (1 + 2 e^1.2) > 0.1); the guarantee under test presumes a span-free
    candidate within the kept set.  Hallucination branches terminate at eos on
    the next step.  Returns (generator, context, premise, oracle,
    faithful_tokens, bad_token_ids, max_gap).
    """
    rng = random.Random(seed)
    n = max(2, sentence_len)
    faithful = [(i + 1, f"w{seed}_{i}") for i in range(n)]
    faithful_texts = [text for _, text in faithful]
    premise = Premise(id=f"doc{seed}", text=" ".join(faithful_texts) + " .")

    entries: dict[tuple[int, ...], list[tuple[int, str, float]]] = {}
    oracle_sentences: list[tuple[str, list[str], HallucinationSpan | None]] = [
        (premise.text, faithful_texts, None)
    ]
    bad_ids: set[int] = set()
    max_gap = 0.0

    prefix: tuple[int, ...] = ()
    for i, (tid, text) in enumerate(faithful):
        good_logit = rng.uniform(0.0, 1.0)
        cands = [(tid, text, good_logit)]
        for j in range(rng.randint(1, 2)):
            bad_id = 1000 + i * 10 + j
            bad_ids.add(bad_id)
            gap = rng.uniform(0.1, 1.2)
            max_gap = max(max_gap, gap)
            bad_text = f"BAD{seed}_{i}_{j}"
            cands.append((bad_id, bad_text, good_logit + gap))
            entries[prefix + (bad_id,)] = [(EOS, "", 1.0)]
            oracle_sentences.append(
                (premise.text, faithful_texts[:i] + [bad_text], HallucinationSpan(i, i))
            )
        entries[prefix] = cands
        prefix = prefix + (tid,)
    entries[prefix] = [(EOS, "", 1.0)]

    gen = mock_generator({premise.id: entries}, name=f"spanned-{seed}")
    oracle = SpanOracleScorer.from_sentences(
        [(p, toks, span) for p, toks, span in oracle_sentences],
        floor=floor,
        ceiling=ceiling,
    )
    context = GenerationContext(context_id=premise.id, prompt_text="summarize")
    return gen, context, premise, oracle, faithful_texts, bad_ids, max_gap
