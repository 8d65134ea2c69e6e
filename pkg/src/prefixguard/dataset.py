"""Construction of prefix-entailment instances and their on-disk corpus format.

Instances come from two kinds of source material: hypotheses with manually
annotated hallucination spans, and (seed, modified) summary pairs where the
span is recovered by diffing.  Both reduce to the same three-region labeling
rule in :func:`prefixguard.types.make_prefix_instance`.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import (
    DataError,
    EmptyInput,
    InconsistentVerdict,
    SchemaVersionError,
)
from .types import (
    EXCLUDED,
    EntailmentLabel,
    HallucinationSpan,
    HypothesisPrefix,
    Premise,
    PrefixInstance,
    make_prefix_instance,
)

CORPUS_SCHEMA_VERSION = 1


class NoEdit:
    """Marker: seed and modified sequences are identical."""

    _instance: "NoEdit | None" = None

    def __new__(cls) -> "NoEdit":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "NO_EDIT"


NO_EDIT = NoEdit()


@dataclass(frozen=True)
class AnnotatedExample:
    """A premise with per-sentence token lists and optional hallucination spans.

    At most one span per sentence: the first inconsistency.
    """

    premise: Premise
    hypothesis_sentences: tuple[tuple[str, ...], ...]
    spans: tuple[HallucinationSpan | None, ...]

    def __post_init__(self) -> None:
        if len(self.hypothesis_sentences) != len(self.spans):
            raise DataError("spans must align one-to-one with sentences")
        for sent, span in zip(self.hypothesis_sentences, self.spans):
            if span is not None and span.end >= len(sent):
                raise DataError(
                    f"span [{span.start}, {span.end}] outside sentence of {len(sent)} tokens"
                )


@dataclass(frozen=True)
class EditPair:
    """A faithful seed summary and its (possibly corrupted) modified version."""

    premise: Premise
    seed_tokens: tuple[str, ...]
    modified_tokens: tuple[str, ...]
    consistency_verdict: EntailmentLabel

    def __post_init__(self) -> None:
        if not self.seed_tokens or not self.modified_tokens:
            raise DataError("seed and modified token lists must be non-empty")


def derive_span_from_edit(
    seed_tokens: Sequence[str], modified_tokens: Sequence[str]
) -> HallucinationSpan | NoEdit:
    """Locate the edited span in ``modified_tokens`` by diffing against the seed.

    The span is whatever lies strictly between the longest common prefix and
    the longest common suffix; suffix matching starts after the common prefix,
    so the two matches never overlap within the modified sequence.  Identical
    sequences yield ``NO_EDIT``.

    A pure deletion leaves nothing between prefix and suffix; by convention
    the span then degenerates to the single token at the junction, since every
    prefix ending there or later includes the spliced content.
    """
    seed = list(seed_tokens)
    mod = list(modified_tokens)
    if seed == mod:
        return NO_EDIT

    common_prefix = 0
    while common_prefix < min(len(seed), len(mod)) and seed[common_prefix] == mod[common_prefix]:
        common_prefix += 1

    max_suffix = min(len(seed), len(mod)) - common_prefix
    common_suffix = 0
    while common_suffix < max_suffix and seed[-1 - common_suffix] == mod[-1 - common_suffix]:
        common_suffix += 1

    start = common_prefix
    end = len(mod) - common_suffix - 1
    if end < start:  # pure deletion: mark the junction token
        start = end = min(common_prefix, len(mod) - 1)
    return HallucinationSpan(start=start, end=end)


def instances_from_annotated(example: AnnotatedExample) -> list[PrefixInstance]:
    """Emit every labelable prefix of every sentence, in sentence order.

    Prefixes that partially overlap a span are dropped.
    """
    out: list[PrefixInstance] = []
    for idx, (sentence, span) in enumerate(zip(example.hypothesis_sentences, example.spans)):
        sentence_id = f"{example.premise.id}#s{idx}"
        for end_index in range(len(sentence)):
            inst = make_prefix_instance(
                example.premise.id, sentence, end_index, span, sentence_id=sentence_id
            )
            if inst is not EXCLUDED:
                out.append(inst)
    return out


def instances_from_edit_pair(pair: EditPair) -> list[PrefixInstance]:
    """Label every prefix of the modified summary using the diffed span.

    A faithful verdict dominates: all prefixes are entailed regardless of any
    benign textual edit.  An unfaithful verdict with no detectable edit is a
    contradiction and a hard error, never silent label corruption.
    """
    sentence_id = f"{pair.premise.id}#mod"
    if pair.consistency_verdict is EntailmentLabel.ENTAILED:
        span: HallucinationSpan | None = None
    else:
        derived = derive_span_from_edit(pair.seed_tokens, pair.modified_tokens)
        if derived is NO_EDIT:
            raise InconsistentVerdict(
                f"pair {pair.premise.id}: verdict says unfaithful but seed == modified"
            )
        span = derived

    out: list[PrefixInstance] = []
    for end_index in range(len(pair.modified_tokens)):
        inst = make_prefix_instance(
            pair.premise.id, pair.modified_tokens, end_index, span, sentence_id=sentence_id
        )
        if inst is not EXCLUDED:
            out.append(inst)
    return out


# --- stratified balancing ----------------------------------------------------

N_POSITION_BUCKETS = 10


def position_bucket(instance: PrefixInstance) -> int:
    """Decile bucket of relative position, computed with exact integer math.

    Bucket ``b`` covers relative positions in ``(b/10, (b+1)/10]``.
    """
    t = instance.prefix.t
    n = instance.prefix.origin_sentence_len
    return (N_POSITION_BUCKETS * t + n - 1) // n - 1


@dataclass(frozen=True)
class BucketReport:
    bucket: int
    n_entailed: int
    n_not_entailed: int
    kept_per_label: int
    dropped: bool


@dataclass(frozen=True)
class StratificationReport:
    seed: int
    buckets: tuple[BucketReport, ...]

    @property
    def dropped_buckets(self) -> tuple[int, ...]:
        return tuple(b.bucket for b in self.buckets if b.dropped)


def stratify_balance(
    instances: Sequence[PrefixInstance], seed: int = 17
) -> tuple[list[PrefixInstance], StratificationReport]:
    """Balance labels within each relative-position bucket by downsampling.

    The majority label in each bucket is downsampled to the minority count
    with a seeded deterministic sampler; buckets containing only one label are
    dropped entirely and reported.  Output preserves input order and is
    deterministic for a fixed seed.
    """
    by_bucket: dict[int, list[int]] = {}
    for i, inst in enumerate(instances):
        by_bucket.setdefault(position_bucket(inst), []).append(i)

    keep: set[int] = set()
    reports: list[BucketReport] = []
    for bucket in sorted(by_bucket):
        indices = by_bucket[bucket]
        ent = [i for i in indices if instances[i].label is EntailmentLabel.ENTAILED]
        net = [i for i in indices if instances[i].label is EntailmentLabel.NOT_ENTAILED]
        if not ent or not net:
            reports.append(BucketReport(bucket, len(ent), len(net), 0, dropped=True))
            continue
        target = min(len(ent), len(net))
        rng = random.Random(f"stratify:{seed}:{bucket}")
        kept_ent = ent if len(ent) == target else sorted(rng.sample(ent, target))
        kept_net = net if len(net) == target else sorted(rng.sample(net, target))
        keep.update(kept_ent)
        keep.update(kept_net)
        reports.append(BucketReport(bucket, len(ent), len(net), target, dropped=False))

    balanced = [inst for i, inst in enumerate(instances) if i in keep]
    return balanced, StratificationReport(seed=seed, buckets=tuple(reports))


# --- corpus serialization ----------------------------------------------------


@dataclass(frozen=True)
class CorpusHeader:
    tokenizer_id: str = "whitespace"
    detok_rule: str = "space"
    seed: int = 17
    schema_version: int = CORPUS_SCHEMA_VERSION


@dataclass(frozen=True)
class Corpus:
    header: CorpusHeader
    instances: tuple[PrefixInstance, ...]


def _instance_record(inst: PrefixInstance) -> dict:
    return {
        "premise_id": inst.premise_id,
        "sentence_id": inst.prefix.sentence_id,
        "tokens": list(inst.prefix.tokens),
        "t": inst.prefix.t,
        "origin_sentence_len": inst.prefix.origin_sentence_len,
        "label": inst.label.value,
        "relative_position": inst.relative_position,
    }


def _instance_from_record(rec: dict, lineno: int) -> PrefixInstance:
    try:
        prefix = HypothesisPrefix(
            tokens=tuple(rec["tokens"]),
            sentence_id=rec["sentence_id"],
            origin_sentence_len=rec["origin_sentence_len"],
        )
        inst = PrefixInstance(
            premise_id=rec["premise_id"],
            prefix=prefix,
            label=EntailmentLabel(rec["label"]),
        )
        if rec["t"] != prefix.t:
            raise DataError(f"line {lineno}: stored t={rec['t']} != {prefix.t} tokens")
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"line {lineno}: malformed instance record: {exc}") from exc
    return inst


def write_corpus(
    instances: Iterable[PrefixInstance], path: str | Path, header: CorpusHeader | None = None
) -> None:
    """Write a line-delimited corpus: one header record, then one instance per line."""
    header = header or CorpusHeader()
    path = Path(path)
    lines = [
        json.dumps(
            {
                "schema_version": header.schema_version,
                "tokenizer_id": header.tokenizer_id,
                "detok_rule": header.detok_rule,
                "seed": header.seed,
            },
            sort_keys=True,
        )
    ]
    lines.extend(json.dumps(_instance_record(inst), sort_keys=True) for inst in instances)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_corpus(path: str | Path) -> Corpus:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        first = fh.readline()
        if not first.strip():
            raise DataError(f"{path}: missing corpus header")
        head = json.loads(first)
        version = head.get("schema_version")
        if version != CORPUS_SCHEMA_VERSION:
            raise SchemaVersionError(
                f"{path}: schema_version {version!r}, expected {CORPUS_SCHEMA_VERSION}"
            )
        header = CorpusHeader(
            tokenizer_id=head["tokenizer_id"],
            detok_rule=head["detok_rule"],
            seed=head["seed"],
        )
        instances = [
            _instance_from_record(json.loads(line), lineno)
            for lineno, line in enumerate(fh, start=2)
            if line.strip()
        ]
    return Corpus(header=header, instances=tuple(instances))


# --- ingestion adapters ------------------------------------------------------


def _premise_from_record(rec: dict) -> Premise:
    return Premise(id=rec["id"], text=rec["text"])


def read_annotated_file(path: str | Path) -> list[AnnotatedExample]:
    """Read span-annotated examples, one JSON record per line.

    Record shape: ``{"premise": {"id", "text"}, "sentences": [[tok, ...], ...],
    "spans": [null | {"start", "end"}, ...]}``.
    """
    out: list[AnnotatedExample] = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            spans = tuple(
                None if s is None else HallucinationSpan(start=s["start"], end=s["end"])
                for s in rec["spans"]
            )
            out.append(
                AnnotatedExample(
                    premise=_premise_from_record(rec["premise"]),
                    hypothesis_sentences=tuple(tuple(s) for s in rec["sentences"]),
                    spans=spans,
                )
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise DataError(f"{path}:{lineno}: malformed annotated record: {exc}") from exc
    return out


def read_edit_pairs_file(path: str | Path) -> list[EditPair]:
    """Read edit pairs, one JSON record per line.

    Record shape: ``{"premise": {"id", "text"}, "seed": [tok, ...],
    "modified": [tok, ...], "verdict": "entailed" | "not_entailed",
    "edit_types": optional list}``.  Records declaring more than one edit are
    rejected: multi-edit summaries cannot be localized by a single diff.
    """
    out: list[EditPair] = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            edit_types = rec.get("edit_types") or []
            if len(edit_types) > 1:
                raise DataError(
                    f"{path}:{lineno}: {len(edit_types)} edits declared; only single-edit "
                    "summaries are accepted"
                )
            out.append(
                EditPair(
                    premise=_premise_from_record(rec["premise"]),
                    seed_tokens=tuple(rec["seed"]),
                    modified_tokens=tuple(rec["modified"]),
                    consistency_verdict=EntailmentLabel(rec["verdict"]),
                )
            )
        except DataError:
            raise
        except (KeyError, ValueError, TypeError) as exc:
            raise DataError(f"{path}:{lineno}: malformed edit-pair record: {exc}") from exc
    return out


def build_instances(
    annotated: Iterable[AnnotatedExample] = (),
    edit_pairs: Iterable[EditPair] = (),
) -> list[PrefixInstance]:
    """Construct instances from both source kinds, preserving input order."""
    out: list[PrefixInstance] = []
    for ex in annotated:
        out.extend(instances_from_annotated(ex))
    for pair in edit_pairs:
        out.extend(instances_from_edit_pair(pair))
    return out


def count_labels(instances: Iterable[PrefixInstance]) -> tuple[int, int]:
    """Return (faithful, unfaithful) instance counts."""
    ent = net = 0
    for inst in instances:
        if inst.label is EntailmentLabel.ENTAILED:
            ent += 1
        else:
            net += 1
    return ent, net


def label_counts_nonempty(instances: Sequence[PrefixInstance]) -> tuple[int, int]:
    if not instances:
        raise EmptyInput("no instances")
    return count_labels(instances)
