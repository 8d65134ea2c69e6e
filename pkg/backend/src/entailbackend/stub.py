"""Transcript-backed stub backends.

A transcript file declares a complete offline world: the generator's candidate
table, the entailer's pair probabilities, and the ``/v1/info`` payloads for
both roles.  The stub serves any request answerable from that world, which
lets the decoding engine run its full integration suite over real HTTP
without any model weights.  A ``recorded`` section of frozen request/response
exchanges pins the byte-level protocol.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .protocol import UnknownRequest

TRANSCRIPT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class RecordedExchange:
    role: str
    method: str
    path: str
    request: dict | None
    response: str  # exact JSON body the service must reproduce


class StubGeneratorBackend:
    """Serves next-token candidates from a declared total table."""

    def __init__(self, payload: dict) -> None:
        self._info = dict(payload["info"])
        self.eos_token_id = int(payload["eos_token_id"])
        self._contexts: dict[str, dict[tuple[int, ...], list[tuple[int, str, float]]]] = {}
        for context_id, steps in payload["contexts"].items():
            entries = {}
            for step in steps:
                cands = [(int(t), str(text), float(logit)) for t, text, logit in step["candidates"]]
                cands.sort(key=lambda c: (-c[2], c[0]))
                entries[tuple(step["prefix"])] = cands
            self._contexts[context_id] = entries
        self.ready = True

    def info(self) -> dict:
        return self._info

    def candidates(
        self, context_id: str, prompt_text: str | None, prefix_token_ids: list[int], top_n: int
    ) -> tuple[list[tuple[int, str, float]], int]:
        entries = self._contexts.get(context_id)
        if entries is None:
            raise UnknownRequest("unknown_context", f"no declared context {context_id!r}")
        cands = entries.get(tuple(prefix_token_ids))
        if cands is None:
            raise UnknownRequest(
                "unknown_prefix",
                f"context {context_id!r} declares no entry for prefix {prefix_token_ids}",
            )
        return cands[:top_n], self.eos_token_id


class StubEntailBackend:
    """Serves entailment probabilities from a declared pair table.

    Any batch composition is answerable as long as every pair is declared;
    order is preserved by construction.
    """

    def __init__(self, payload: dict) -> None:
        self._info = dict(payload["info"])
        self._pairs: dict[tuple[str, str], float] = {
            (entry["premise"], entry["hypothesis"]): float(entry["prob"])
            for entry in payload["pairs"]
        }
        self._default = payload.get("default_prob")
        self.ready = True

    def info(self) -> dict:
        return self._info

    def entail_probs(self, pairs: list[tuple[str, str]]) -> list[float]:
        out = []
        for premise, hypothesis in pairs:
            prob = self._pairs.get((premise, hypothesis), self._default)
            if prob is None:
                raise UnknownRequest(
                    "unknown_pair", f"no declared probability for hypothesis {hypothesis!r}"
                )
            out.append(float(prob))
        return out


@dataclass
class Transcript:
    generator: StubGeneratorBackend
    entailer: StubEntailBackend
    recorded: list[RecordedExchange]


def load_transcript(path: str | Path) -> Transcript:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("schema_version") != TRANSCRIPT_SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported transcript schema")
    recorded = [
        RecordedExchange(
            role=entry["role"],
            method=entry["method"],
            path=entry["path"],
            request=entry.get("request"),
            response=entry["response"],
        )
        for entry in payload.get("recorded", [])
    ]
    return Transcript(
        generator=StubGeneratorBackend(payload["generator"]),
        entailer=StubEntailBackend(payload["entailer"]),
        recorded=recorded,
    )
