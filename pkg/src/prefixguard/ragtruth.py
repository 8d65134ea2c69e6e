"""Adapter for the original RAGTruth release files.

Consumes already-downloaded ``source_info.jsonl`` and ``response.jsonl``,
keeping summarization responses, and converts each response into a
span-annotated example: sentences are segmented with the default pluggable
rule, tokenized on whitespace, and each sentence carries at most the first
annotated hallucination span that touches it (character offsets mapped onto
token indices).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

from .dataset import AnnotatedExample
from .errors import DataError
from .types import HallucinationSpan, Premise

_BOUNDARY = re.compile(r"(?<=[.!?])\s+")
_TOKEN = re.compile(r"\S+")


@dataclass(frozen=True)
class _CharSpan:
    start: int
    end: int  # exclusive


def _sentences_with_offsets(text: str) -> list[tuple[int, str]]:
    """(start_offset, sentence_text) pairs under the default segmentation."""
    out = []
    pos = 0
    for match in _BOUNDARY.finditer(text):
        segment = text[pos : match.start()]
        if segment.strip():
            lead = len(segment) - len(segment.lstrip())
            out.append((pos + lead, segment.strip()))
        pos = match.end()
    tail = text[pos:]
    if tail.strip():
        lead = len(tail) - len(tail.lstrip())
        out.append((pos + lead, tail.strip()))
    return out


def _first_span_for_sentence(
    sent_start: int, sentence: str, labels: list[_CharSpan]
) -> HallucinationSpan | None:
    """Map the earliest annotated char range touching this sentence onto
    token indices."""
    tokens = [(m.start(), m.end()) for m in _TOKEN.finditer(sentence)]
    sent_end = sent_start + len(sentence)
    best: tuple[int, int] | None = None
    for label in sorted(labels, key=lambda l: l.start):
        if label.end <= sent_start or label.start >= sent_end:
            continue
        rel_start = max(label.start - sent_start, 0)
        rel_end = min(label.end - sent_start, len(sentence))
        covered = [
            i for i, (ts, te) in enumerate(tokens) if ts < rel_end and te > rel_start
        ]
        if covered:
            best = (covered[0], covered[-1])
            break
    if best is None:
        return None
    return HallucinationSpan(start=best[0], end=best[1])


def read_ragtruth(source_info_path: str | Path, response_path: str | Path) -> list[AnnotatedExample]:
    """Convert the summarization subset of a RAGTruth-format release."""
    sources: dict[str, str] = {}
    for line in Path(source_info_path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        if rec.get("task_type") != "Summary":
            continue
        source = rec.get("source_info")
        if isinstance(source, dict):
            source = source.get("source") or json.dumps(source, sort_keys=True)
        if not isinstance(source, str) or not source:
            source = rec.get("prompt") or ""
        if not source:
            raise DataError(f"source {rec.get('source_id')!r} has no usable text")
        sources[str(rec["source_id"])] = source

    examples: list[AnnotatedExample] = []
    for line in Path(response_path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        source_id = str(rec.get("source_id"))
        if source_id not in sources:
            continue
        response = rec.get("response") or ""
        if not response.strip():
            continue
        labels = [
            _CharSpan(start=int(l["start"]), end=int(l["end"]))
            for l in rec.get("labels") or []
        ]
        sentences = _sentences_with_offsets(response)
        sentence_tokens = []
        spans = []
        for sent_start, sentence in sentences:
            toks = tuple(sentence.split())
            if not toks:
                continue
            sentence_tokens.append(toks)
            spans.append(_first_span_for_sentence(sent_start, sentence, labels))
        if not sentence_tokens:
            continue
        examples.append(
            AnnotatedExample(
                premise=Premise(id=str(rec.get("id", source_id)), text=sources[source_id]),
                hypothesis_sentences=tuple(sentence_tokens),
                spans=tuple(spans),
            )
        )
    return examples
