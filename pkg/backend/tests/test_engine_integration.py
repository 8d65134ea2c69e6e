"""The decoding engine's integration suite, run against the stub service over
real HTTP sockets: the engine must behave exactly as it does on in-process
mocks when every call crosses the wire."""

from __future__ import annotations

import threading
import time
from pathlib import Path

import pytest
import uvicorn

from entailbackend.service import create_app
from entailbackend.stub import load_transcript

prefixguard = pytest.importorskip(
    "prefixguard", reason="engine integration needs the primary library installed"
)

from prefixguard.engine import (  # noqa: E402
    lookahead_decode,
    prefix_guided_decode,
    trace_to_dict,
    vanilla_beam_search,
)
from prefixguard.gateway import GenerationContext, HttpGenerator, HttpScorer  # noqa: E402
from prefixguard.types import DecodeMode, DecodingConfig, Premise  # noqa: E402

TRANSCRIPT = Path(__file__).parent.parent / "transcripts" / "goalkeeper_world.json"

PREMISE = Premise(
    id="doc1",
    text=(
        "Nicky Weaver was a goalkeeper who retired this week after a long career. "
        "He now coaches young players."
    ),
)
CONTEXT = GenerationContext(
    context_id="doc1", prompt_text="Summarize the document in a few words."
)


class ServerHandle:
    def __init__(self, app) -> None:
        config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="error")
        self.server = uvicorn.Server(config)
        self.thread = threading.Thread(target=self.server.run, daemon=True)

    def __enter__(self) -> str:
        self.thread.start()
        deadline = time.time() + 10
        while not self.server.started:
            if time.time() > deadline:
                raise RuntimeError("stub server did not start")
            time.sleep(0.01)
        port = self.server.servers[0].sockets[0].getsockname()[1]
        return f"http://127.0.0.1:{port}"

    def __exit__(self, *exc) -> None:
        self.server.should_exit = True
        self.thread.join(timeout=5)


@pytest.fixture(scope="module")
def endpoints():
    transcript = load_transcript(TRANSCRIPT)
    gen_app = create_app(generator=transcript.generator, info_role="generator")
    ent_app = create_app(entailer=transcript.entailer, info_role="entailer")
    with ServerHandle(gen_app) as gen_url, ServerHandle(ent_app) as ent_url:
        yield gen_url, ent_url


def test_info_round_trip_through_primary_client(endpoints):
    gen_url, ent_url = endpoints
    gen_info = HttpGenerator(gen_url).info()
    assert gen_info.name == "stub-goalkeeper-lm"
    ent_info = HttpScorer(ent_url).info()
    assert abs(ent_info.shape.n_params_nonembed - 1.23e9) <= 0.01 * 1.23e9
    assert ent_info.shape.n_layer == 16 and ent_info.shape.d_model == 2048


def test_guided_decode_over_the_wire(endpoints):
    gen_url, ent_url = endpoints
    gen = HttpGenerator(gen_url)
    scorer = HttpScorer(ent_url)
    result = prefix_guided_decode(
        gen, scorer, PREMISE, CONTEXT,
        DecodingConfig(mode=DecodeMode.PREFIX_GUIDED, beam_width=1),
    )
    assert result.text == "Former goalkeeper Nicky"
    assert result.trace.counters.generator_calls == 4
    assert result.trace.counters.scorer_calls == 6
    assert result.trace.counters.tokens_generated == 4


def test_vanilla_decode_over_the_wire(endpoints):
    gen_url, _ = endpoints
    result = vanilla_beam_search(
        HttpGenerator(gen_url), CONTEXT,
        DecodingConfig(mode=DecodeMode.VANILLA, beam_width=1),
    )
    assert result.text == "Former goalkeeper Jeremy"
    assert result.trace.counters.scorer_calls == 0


def test_lookahead_over_the_wire_and_cost_gap(endpoints):
    gen_url, ent_url = endpoints
    gen = HttpGenerator(gen_url)
    scorer = HttpScorer(ent_url)
    look = lookahead_decode(
        gen, scorer, PREMISE, CONTEXT,
        DecodingConfig(mode=DecodeMode.LOOKAHEAD, beam_width=1, max_new_tokens=16),
    )
    assert look.text == "Former goalkeeper Nicky"
    guided = prefix_guided_decode(
        HttpGenerator(gen_url), HttpScorer(ent_url), PREMISE, CONTEXT,
        DecodingConfig(mode=DecodeMode.PREFIX_GUIDED, beam_width=1, max_new_tokens=16),
    )
    gap = look.trace.counters.generator_calls - guided.trace.counters.generator_calls
    assert gap == look.trace.completion_new_tokens_total == 8


def test_scorer_batching_preserves_order_over_the_wire(endpoints):
    _, ent_url = endpoints
    scorer = HttpScorer(ent_url, batch_size=2)
    probs = scorer.score_batch(
        [
            (PREMISE.text, "Former goalkeeper Roy"),
            (PREMISE.text, "Former goalkeeper Nicky"),
            (PREMISE.text, "Former goalkeeper Jeremy"),
            (PREMISE.text, "Former"),
            (PREMISE.text, "Former goalkeeper"),
        ]
    )
    assert probs == [0.1, 0.95, 0.05, 1.0, 1.0]


def test_wire_decodes_are_deterministic_except_timing(endpoints):
    gen_url, ent_url = endpoints
    config = DecodingConfig(mode=DecodeMode.PREFIX_GUIDED)
    traces = []
    for _ in range(2):
        result = prefix_guided_decode(
            HttpGenerator(gen_url), HttpScorer(ent_url), PREMISE, CONTEXT, config
        )
        payload = trace_to_dict(result.trace)
        payload.pop("timing")
        traces.append(payload)
    assert traces[0] == traces[1]
