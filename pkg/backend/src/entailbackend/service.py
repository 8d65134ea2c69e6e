"""FastAPI app factory over generator/entailer backends.

Every response body goes through one canonical JSON encoder, so a pinned
build returns identical bytes for identical requests.  Error responses carry
a machine-readable ``category``: 400 for malformed or unanswerable requests,
503 while a model is loading, 500 for anything else.
"""

from __future__ import annotations

from typing import Protocol

from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError

from .protocol import (
    BackendUnavailable,
    CandidatesRequest,
    EntailRequest,
    UnknownRequest,
    canonical_json,
)


class GeneratorBackend(Protocol):
    ready: bool

    def info(self) -> dict: ...

    def candidates(
        self, context_id: str, prompt_text: str | None, prefix_token_ids: list[int], top_n: int
    ) -> tuple[list[tuple[int, str, float]], int]: ...


class EntailBackend(Protocol):
    ready: bool

    def info(self) -> dict: ...

    def entail_probs(self, pairs: list[tuple[str, str]]) -> list[float]: ...


def _json_response(payload, status_code: int = 200) -> Response:
    return Response(
        content=canonical_json(payload), status_code=status_code,
        media_type="application/json",
    )


def _error(status_code: int, category: str, detail: str) -> Response:
    return _json_response({"category": category, "detail": detail}, status_code)


def create_app(
    generator: GeneratorBackend | None = None,
    entailer: EntailBackend | None = None,
    info_role: str = "entailer",
) -> FastAPI:
    """Build the service.  ``info_role`` picks whose identity /v1/info reports
    when both roles are mounted (deployments normally run one role per
    process)."""
    if generator is None and entailer is None:
        raise ValueError("mount at least one backend")
    if info_role not in ("generator", "entailer"):
        raise ValueError("info_role must be 'generator' or 'entailer'")

    app = FastAPI(title="entail-backend", docs_url=None, redoc_url=None)

    @app.exception_handler(RequestValidationError)
    async def malformed(request: Request, exc: RequestValidationError) -> Response:
        return _error(400, "malformed_request", str(exc.errors()[:3]))

    @app.exception_handler(UnknownRequest)
    async def unknown(request: Request, exc: UnknownRequest) -> Response:
        return _error(400, exc.category, exc.detail)

    @app.exception_handler(BackendUnavailable)
    async def unavailable(request: Request, exc: BackendUnavailable) -> Response:
        return _error(503, "model_not_ready", str(exc))

    @app.exception_handler(Exception)
    async def internal(request: Request, exc: Exception) -> Response:
        return _error(500, "internal_error", f"{type(exc).__name__}: {exc}")

    def _pick_info_backend():
        preferred = entailer if info_role == "entailer" else generator
        backend = preferred if preferred is not None else (generator or entailer)
        if not backend.ready:
            raise BackendUnavailable("model still loading")
        return backend

    @app.get("/v1/info")
    async def info() -> Response:
        return _json_response(_pick_info_backend().info())

    if generator is not None:

        @app.post("/v1/generate/candidates")
        async def generate_candidates(body: CandidatesRequest) -> Response:
            if not generator.ready:
                raise BackendUnavailable("generator still loading")
            cands, eos = generator.candidates(
                body.context_id, body.prompt_text, body.prefix_token_ids, body.top_n
            )
            return _json_response(
                {
                    "candidates": [
                        {"token_id": tid, "text": text, "logit": logit}
                        for tid, text, logit in cands
                    ],
                    "eos_token_id": eos,
                }
            )

    if entailer is not None:

        @app.post("/v1/entail")
        async def entail(body: EntailRequest) -> Response:
            if not entailer.ready:
                raise BackendUnavailable("entailer still loading")
            probs = entailer.entail_probs(
                [(pair.premise, pair.hypothesis) for pair in body.pairs]
            )
            return _json_response({"probs": probs})

    return app
