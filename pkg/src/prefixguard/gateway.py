"""Uniform access to generators and entailment scorers.

Two families of handles implement the same interfaces: remote clients that
speak the HTTP wire protocol, and deterministic in-process mocks that make
every downstream test runnable offline.  Scorers consume text while
generators consume token ids, because the two sides may use different
tokenizers.
"""

from __future__ import annotations

import abc
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import httpx

from .errors import (
    DataError,
    MalformedResponse,
    ScoreOutOfRange,
    TransportError,
    UnknownHypothesis,
    UnknownPrefix,
)
from .types import (
    HallucinationSpan,
    ModelShape,
    Premise,
    TokenCandidate,
    render_tokens,
)

DEFAULT_TOP_N = 50
DEFAULT_TIMEOUT_S = 30.0
DEFAULT_SCORE_BATCH_SIZE = 60  # K * M_max at the default operating point


@dataclass(frozen=True)
class HandleInfo:
    name: str
    shape: ModelShape
    tokenizer_id: str = ""
    detok_rule: str = "space"


@dataclass(frozen=True)
class GenerationContext:
    """Identifies one generation task: a document id plus the instruction text."""

    context_id: str
    prompt_text: str = ""


class Generator(abc.ABC):
    """Produces next-token candidates for a (context, prefix) pair."""

    @abc.abstractmethod
    def next_candidates(
        self, context: GenerationContext, prefix_token_ids: Sequence[int], top_n: int
    ) -> list[TokenCandidate]:
        """Top-``top_n`` candidates sorted by logit descending."""

    @property
    @abc.abstractmethod
    def eos_token_id(self) -> int: ...

    @abc.abstractmethod
    def info(self) -> HandleInfo: ...


class Scorer(abc.ABC):
    """Judges the entailment probability of a hypothesis prefix given a premise."""

    @abc.abstractmethod
    def score(self, premise_text: str, hypothesis_text: str) -> float: ...

    def score_batch(self, pairs: Sequence[tuple[str, str]]) -> list[float]:
        """Score many pairs, preserving order."""
        return [self.score(premise, hypothesis) for premise, hypothesis in pairs]

    @abc.abstractmethod
    def info(self) -> HandleInfo: ...


def _eos_if_known(gen: "Generator") -> int | None:
    # remote handles only learn their eos id from the first candidates
    # response; before that the property raises
    try:
        return gen.eos_token_id
    except MalformedResponse:
        return None


def greedy_complete(
    gen: Generator,
    context: GenerationContext,
    prefix_token_ids: Sequence[int],
    max_len: int,
) -> tuple[int, ...]:
    """Extend a prefix by repeatedly taking the argmax candidate.

    Stops after appending the end-of-sequence token or ``max_len`` new tokens,
    whichever comes first, and returns the full sequence.  A prefix already
    ending at eos is returned unchanged.
    """
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    ids = tuple(prefix_token_ids)
    for _ in range(max_len):
        eos = _eos_if_known(gen)
        if ids and eos is not None and ids[-1] == eos:
            break
        best = gen.next_candidates(context, ids, top_n=1)[0]
        ids = ids + (best.token_id,)
        if best.token_id == gen.eos_token_id:
            break
    return ids


# --- mocks ---------------------------------------------------------------


def _sorted_candidates(cands: Iterable[TokenCandidate]) -> tuple[TokenCandidate, ...]:
    return tuple(sorted(cands, key=lambda c: (-c.logit, c.token_id)))


class MockGenerator(Generator):
    """Table-backed generator: a total map from declared prefixes to candidates.

    Bitwise-deterministic; counts every invocation for trace reconciliation
    tests.
    """

    def __init__(
        self,
        table: dict[str, dict[tuple[int, ...], tuple[TokenCandidate, ...]]],
        eos_token_id: int,
        info: HandleInfo,
    ) -> None:
        for ctx, entries in table.items():
            for prefix, cands in entries.items():
                if not cands:
                    raise ValueError(
                        f"mock context {ctx!r} declares prefix {prefix} with no candidates"
                    )
        self._table = {
            ctx: {prefix: _sorted_candidates(cands) for prefix, cands in entries.items()}
            for ctx, entries in table.items()
        }
        self._eos = eos_token_id
        self._info = info
        self.n_calls = 0

    @property
    def eos_token_id(self) -> int:
        return self._eos

    def info(self) -> HandleInfo:
        return self._info

    def next_candidates(
        self, context: GenerationContext, prefix_token_ids: Sequence[int], top_n: int
    ) -> list[TokenCandidate]:
        if top_n < 1:
            raise ValueError("top_n must be at least 1")
        self.n_calls += 1
        entries = self._table.get(context.context_id)
        if entries is None:
            raise UnknownPrefix(f"mock has no context {context.context_id!r}")
        cands = entries.get(tuple(prefix_token_ids))
        if cands is None:
            raise UnknownPrefix(
                f"mock context {context.context_id!r} has no entry for prefix "
                f"{tuple(prefix_token_ids)}"
            )
        return list(cands[:top_n])

    def declared_prefixes(self, context_id: str) -> set[tuple[int, ...]]:
        return set(self._table.get(context_id, {}))


class ConstantScorer(Scorer):
    """Returns one fixed probability for every pair."""

    def __init__(self, prob: float, info: HandleInfo | None = None) -> None:
        if not 0.0 <= prob <= 1.0:
            raise ValueError("probability outside [0, 1]")
        self.prob = prob
        self._info = info or HandleInfo("constant-scorer", ModelShape(1, 1, 1))
        self.n_pair_calls = 0

    def score(self, premise_text: str, hypothesis_text: str) -> float:
        self.n_pair_calls += 1
        return self.prob

    def info(self) -> HandleInfo:
        return self._info


class TableScorer(Scorer):
    """Scores pairs from an explicit (premise, hypothesis) table."""

    def __init__(
        self,
        pairs: dict[tuple[str, str], float],
        default: float | None = None,
        info: HandleInfo | None = None,
    ) -> None:
        for prob in pairs.values():
            if not 0.0 <= prob <= 1.0:
                raise ValueError("table probability outside [0, 1]")
        self._pairs = dict(pairs)
        self._default = default
        self._info = info or HandleInfo("table-scorer", ModelShape(1, 1, 1))
        self.n_pair_calls = 0

    def score(self, premise_text: str, hypothesis_text: str) -> float:
        self.n_pair_calls += 1
        try:
            return self._pairs[(premise_text, hypothesis_text)]
        except KeyError:
            if self._default is not None:
                return self._default
            raise UnknownHypothesis(
                f"no table entry for hypothesis {hypothesis_text!r}"
            ) from None

    def info(self) -> HandleInfo:
        return self._info


class LexicalOverlapScorer(Scorer):
    """Fraction of hypothesis tokens that appear in the premise.

    A crude but deterministic stand-in scorer for smoke tests.
    """

    def __init__(self, info: HandleInfo | None = None) -> None:
        self._info = info or HandleInfo("overlap-scorer", ModelShape(1, 1, 1))
        self.n_pair_calls = 0

    def score(self, premise_text: str, hypothesis_text: str) -> float:
        if not premise_text:
            raise DataError("premise must be non-empty")
        self.n_pair_calls += 1
        hyp_tokens = hypothesis_text.split()
        if not hyp_tokens:
            return 1.0  # nothing asserted yet
        premise_tokens = set(premise_text.split())
        hits = sum(1 for tok in hyp_tokens if tok in premise_tokens)
        return hits / len(hyp_tokens)

    def info(self) -> HandleInfo:
        return self._info


@dataclass(frozen=True)
class _OracleSentence:
    premise_text: str
    tokens: tuple[str, ...]
    span: HallucinationSpan | None


class SpanOracleScorer(Scorer):
    """Perfect scorer derived from known hallucination spans.

    A prefix scores ``ceiling`` while it ends before its sentence's span and
    ``floor`` once it has entered the span.  Hypotheses that match no declared
    sentence prefix are an error, which keeps fixture bugs loud.
    """

    def __init__(
        self,
        sentences: Sequence[_OracleSentence],
        detok_rule: str = "space",
        ceiling: float = 1.0,
        floor: float = 0.0,
        info: HandleInfo | None = None,
    ) -> None:
        if not 0.0 <= floor <= ceiling <= 1.0:
            raise ValueError("need 0 <= floor <= ceiling <= 1")
        self._lookup: dict[tuple[str, str], float] = {}
        for sent in sentences:
            for k in range(1, len(sent.tokens) + 1):
                rendered = render_tokens(sent.tokens[:k], detok_rule)
                faithful = sent.span is None or (k - 1) < sent.span.start
                self._lookup[(sent.premise_text, rendered)] = ceiling if faithful else floor
        self._info = info or HandleInfo("span-oracle", ModelShape(1, 1, 1))
        self.n_pair_calls = 0

    @classmethod
    def from_annotated(cls, examples: Iterable, **kwargs) -> "SpanOracleScorer":
        sentences = [
            _OracleSentence(ex.premise.text, tuple(sent), span)
            for ex in examples
            for sent, span in zip(ex.hypothesis_sentences, ex.spans)
        ]
        return cls(sentences, **kwargs)

    @classmethod
    def from_sentences(
        cls,
        entries: Sequence[tuple[str, Sequence[str], HallucinationSpan | None]],
        **kwargs,
    ) -> "SpanOracleScorer":
        return cls(
            [_OracleSentence(p, tuple(toks), span) for p, toks, span in entries], **kwargs
        )

    def score(self, premise_text: str, hypothesis_text: str) -> float:
        self.n_pair_calls += 1
        try:
            return self._lookup[(premise_text, hypothesis_text)]
        except KeyError:
            raise UnknownHypothesis(
                f"oracle knows no sentence prefix {hypothesis_text!r}"
            ) from None

    def info(self) -> HandleInfo:
        return self._info


# --- HTTP clients ----------------------------------------------------------


def _shape_from_payload(payload: dict) -> ModelShape:
    try:
        return ModelShape(
            n_params_nonembed=int(payload["n_params_nonembed"]),
            n_layer=int(payload["n_layer"]),
            d_model=int(payload["d_model"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedResponse(f"bad model shape in response: {exc}") from exc


class _HttpHandle:
    """Shared transport: one retry on timeout, then hard failure."""

    def __init__(self, endpoint: str, timeout_s: float = DEFAULT_TIMEOUT_S,
                 client: httpx.Client | None = None) -> None:
        self.endpoint = endpoint.rstrip("/")
        self._client = client or httpx.Client(timeout=timeout_s)

    def _request(self, method: str, path: str, body: dict | None = None) -> dict:
        url = self.endpoint + path
        last_exc: Exception | None = None
        for attempt in range(2):
            try:
                resp = self._client.request(method, url, json=body)
                resp.raise_for_status()
                return resp.json()
            except httpx.TimeoutException as exc:
                last_exc = exc
                continue  # one retry, then give up
            except httpx.HTTPStatusError as exc:
                raise TransportError(f"{url} returned {exc.response.status_code}") from exc
            except httpx.HTTPError as exc:
                raise TransportError(f"transport failure talking to {url}: {exc}") from exc
            except json.JSONDecodeError as exc:
                raise MalformedResponse(f"{url} returned non-JSON body") from exc
        raise TransportError(f"{url} timed out twice") from last_exc

    def close(self) -> None:
        self._client.close()


class HttpGenerator(_HttpHandle, Generator):
    """Remote generator speaking the versioned wire protocol.

    The full prefix is sent on every call; servers may cache shared prefixes
    however they like, provided responses stay deterministic.
    """

    def __init__(self, endpoint: str, timeout_s: float = DEFAULT_TIMEOUT_S,
                 client: httpx.Client | None = None) -> None:
        super().__init__(endpoint, timeout_s, client)
        self._eos: int | None = None
        self._cached_info: HandleInfo | None = None

    @property
    def eos_token_id(self) -> int:
        if self._eos is None:
            raise MalformedResponse(
                "eos token unknown before the first candidates response"
            )
        return self._eos

    def next_candidates(
        self, context: GenerationContext, prefix_token_ids: Sequence[int], top_n: int
    ) -> list[TokenCandidate]:
        if top_n < 1:
            raise ValueError("top_n must be at least 1")
        payload = {
            "context_id": context.context_id,
            "prompt_text": context.prompt_text,
            "prefix_token_ids": list(prefix_token_ids),
            "top_n": top_n,
        }
        data = self._request("POST", "/v1/generate/candidates", payload)
        try:
            self._eos = int(data["eos_token_id"])
            cands = [
                TokenCandidate(
                    token_id=int(c["token_id"]), text=str(c["text"]), logit=float(c["logit"])
                )
                for c in data["candidates"]
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedResponse(f"bad candidates response: {exc}") from exc
        if not cands:
            raise MalformedResponse("backend returned zero candidates")
        return list(_sorted_candidates(cands))[:top_n]

    def info(self) -> HandleInfo:
        if self._cached_info is None:
            data = self._request("GET", "/v1/info")
            try:
                self._cached_info = HandleInfo(
                    name=str(data["name"]),
                    shape=_shape_from_payload(data),
                    tokenizer_id=str(data["tokenizer_id"]),
                )
            except KeyError as exc:
                raise MalformedResponse(f"info response missing field {exc}") from exc
        return self._cached_info


class HttpScorer(_HttpHandle, Scorer):
    """Remote entailment scorer; batches pair scoring, preserving order."""

    def __init__(
        self,
        endpoint: str,
        timeout_s: float = DEFAULT_TIMEOUT_S,
        batch_size: int = DEFAULT_SCORE_BATCH_SIZE,
        client: httpx.Client | None = None,
    ) -> None:
        super().__init__(endpoint, timeout_s, client)
        if batch_size < 1:
            raise ValueError("batch_size must be positive")
        self.batch_size = batch_size
        self._cached_info: HandleInfo | None = None

    def score(self, premise_text: str, hypothesis_text: str) -> float:
        return self.score_batch([(premise_text, hypothesis_text)])[0]

    def score_batch(self, pairs: Sequence[tuple[str, str]]) -> list[float]:
        probs: list[float] = []
        for i in range(0, len(pairs), self.batch_size):
            chunk = pairs[i : i + self.batch_size]
            body = {"pairs": [{"premise": p, "hypothesis": h} for p, h in chunk]}
            data = self._request("POST", "/v1/entail", body)
            try:
                got = [float(x) for x in data["probs"]]
            except (KeyError, TypeError, ValueError) as exc:
                raise MalformedResponse(f"bad entail response: {exc}") from exc
            if len(got) != len(chunk):
                raise MalformedResponse(
                    f"asked for {len(chunk)} scores, got {len(got)}"
                )
            for prob in got:
                if not 0.0 <= prob <= 1.0:
                    raise ScoreOutOfRange(f"backend returned probability {prob}")
            probs.extend(got)
        return probs

    def info(self) -> HandleInfo:
        if self._cached_info is None:
            data = self._request("GET", "/v1/info")
            try:
                self._cached_info = HandleInfo(
                    name=str(data["name"]),
                    shape=_shape_from_payload(data),
                    tokenizer_id=str(data.get("tokenizer_id", "")),
                )
            except KeyError as exc:
                raise MalformedResponse(f"info response missing field {exc}") from exc
        return self._cached_info


# --- mock-world fixtures -----------------------------------------------------


@dataclass(frozen=True)
class WorldDocument:
    premise: Premise
    context: GenerationContext
    reference_tokens: tuple[str, ...] | None = None


@dataclass
class MockWorld:
    """A self-contained offline fixture: generator table, scorer, documents."""

    generator: MockGenerator
    scorer: Scorer
    documents: list[WorldDocument] = field(default_factory=list)

    @property
    def document(self) -> WorldDocument:
        return self.documents[0]


def _generator_from_payload(payload: dict) -> MockGenerator:
    info = HandleInfo(
        name=payload.get("name", "mock-generator"),
        shape=_shape_from_payload(payload["shape"]),
        tokenizer_id=payload.get("tokenizer_id", "word"),
        detok_rule=payload.get("detok_rule", "space"),
    )
    table: dict[str, dict[tuple[int, ...], tuple[TokenCandidate, ...]]] = {}
    for context_id, steps in payload["contexts"].items():
        entries: dict[tuple[int, ...], tuple[TokenCandidate, ...]] = {}
        for step in steps:
            cands = tuple(
                TokenCandidate(token_id=int(tid), text=str(text), logit=float(logit))
                for tid, text, logit in step["candidates"]
            )
            entries[tuple(step["prefix"])] = cands
        table[context_id] = entries
    return MockGenerator(table, eos_token_id=int(payload["eos_token_id"]), info=info)


def _scorer_from_payload(payload: dict, documents: Sequence[WorldDocument]) -> Scorer:
    kind = payload.get("kind", "table")
    info = HandleInfo(
        name=payload.get("name", "mock-scorer"),
        shape=_shape_from_payload(payload["shape"]),
    )
    if kind == "constant":
        return ConstantScorer(float(payload["constant"]), info=info)
    if kind == "overlap":
        return LexicalOverlapScorer(info=info)
    if kind == "table":
        by_id = {doc.premise.id: doc.premise.text for doc in documents}
        pairs: dict[tuple[str, str], float] = {}
        for entry in payload["pairs"]:
            premise_text = by_id[entry["premise_id"]] if "premise_id" in entry else (
                documents[0].premise.text
            )
            pairs[(premise_text, entry["hypothesis"])] = float(entry["prob"])
        return TableScorer(pairs, default=payload.get("default"), info=info)
    raise DataError(f"unknown scorer kind {kind!r}")


def load_mock_world(path: str | Path) -> MockWorld:
    """Load a mock-world fixture file (generator table + scorer + documents)."""
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("schema_version") != 1:
        raise DataError(f"{path}: unsupported mock-world schema")
    documents = []
    for doc in payload["documents"]:
        premise = Premise(id=doc["premise"]["id"], text=doc["premise"]["text"])
        documents.append(
            WorldDocument(
                premise=premise,
                context=GenerationContext(
                    context_id=premise.id, prompt_text=doc.get("prompt", "")
                ),
                reference_tokens=tuple(doc["reference"]) if "reference" in doc else None,
            )
        )
    generator = _generator_from_payload(payload["generator"])
    scorer = _scorer_from_payload(payload["scorer"], documents)
    return MockWorld(generator=generator, scorer=scorer, documents=documents)
