"""Request/response bodies for the versioned wire protocol, plus the canonical
JSON rendering that makes responses byte-stable across serving runs."""

from __future__ import annotations

import json
from typing import Any

from pydantic import BaseModel, Field


class CandidatesRequest(BaseModel):
    context_id: str
    prefix_token_ids: list[int]
    top_n: int = Field(ge=1)
    prompt_text: str | None = None


class EntailPair(BaseModel):
    premise: str
    hypothesis: str


class EntailRequest(BaseModel):
    pairs: list[EntailPair]


def canonical_json(payload: Any) -> bytes:
    """Sorted keys, no whitespace, full float round-trip precision.

    A pinned backend build must return identical bodies for identical
    requests; rendering through one canonical encoder is what makes recorded
    transcripts replayable bit-for-bit.
    """
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")


class BackendUnavailable(Exception):
    """Model not loaded yet; maps to HTTP 503."""


class UnknownRequest(Exception):
    """Well-formed request outside the backend's declared world; maps to 400."""

    def __init__(self, category: str, detail: str) -> None:
        super().__init__(detail)
        self.category = category
        self.detail = detail
