"""Operator surface: corpus building, scorer evaluation, decoding runs,
method comparison, and compute-cost reports.

Exit codes: 0 success, 2 usage error, 3 data error, 4 backend error.
All randomness derives from ``--seed``; outputs are written atomically and are
byte-identical across reruns except for isolated timing sections.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import dataset as ds
from . import engine, metrics
from .cost import per_token_cost, reconcile_trace
from .errors import BackendError, DataError, PrefixGuardError
from .gateway import (
    ConstantScorer,
    GenerationContext,
    HttpGenerator,
    HttpScorer,
    LexicalOverlapScorer,
    Scorer,
    SpanOracleScorer,
    load_mock_world,
)
from .types import (
    DecodeMode,
    DecodingConfig,
    EntailmentLabel,
    ModelShape,
    Premise,
    render_tokens,
    split_sentences,
)

ENV_GENERATOR_ENDPOINT = "PREFIXGUARD_GENERATOR_ENDPOINT"
ENV_SCORER_ENDPOINT = "PREFIXGUARD_SCORER_ENDPOINT"
ENV_TIMEOUT_S = "PREFIXGUARD_TIMEOUT_S"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_BACKEND = 4

_MODE_NAMES = {
    "vanilla": DecodeMode.VANILLA,
    "prefix": DecodeMode.PREFIX_GUIDED,
    "lookahead": DecodeMode.LOOKAHEAD,
}


def _write_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _decoding_config(args: argparse.Namespace, mode: DecodeMode) -> DecodingConfig:
    """CLI flag > config file > built-in default."""
    config = DecodingConfig(mode=mode)
    if getattr(args, "config", None):
        payload = json.loads(Path(args.config).read_text(encoding="utf-8"))
        payload.pop("mode", None)  # the subcommand owns the mode
        try:
            config = replace(config, **payload)
        except (TypeError, ValueError) as exc:
            raise DataError(f"bad decoding config {args.config}: {exc}") from exc
    overrides = {}
    for flag, field_name in [
        ("penalty_scale", "penalty_scale"),
        ("tau", "threshold"),
        ("beam_width", "beam_width"),
        ("nucleus_mass", "nucleus_mass"),
        ("candidate_cap", "candidate_cap"),
        ("max_new_tokens", "max_new_tokens"),
        ("fetch_top_n", "fetch_top_n"),
    ]:
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field_name] = value
    if getattr(args, "score_only_at_punctuation", False):
        overrides["score_only_at_punctuation"] = True
    return replace(config, mode=mode, **overrides)


def _add_decoding_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file with decoding-config overrides")
    parser.add_argument("--lambda", dest="penalty_scale", type=float, default=None,
                        help="penalty scale (default 5)")
    parser.add_argument("--tau", type=float, default=None,
                        help="rectification threshold (default 0.5)")
    parser.add_argument("--beam-width", type=int, default=None, help="beam size (default 3)")
    parser.add_argument("--nucleus-mass", type=float, default=None,
                        help="top-p candidate mass (default 0.9)")
    parser.add_argument("--candidate-cap", type=int, default=None,
                        help="max candidates per beam per step (default 20)")
    parser.add_argument("--max-new-tokens", type=int, default=None)
    parser.add_argument("--fetch-top-n", type=int, default=None,
                        help="raw candidates requested from the backend (default 50)")
    parser.add_argument("--score-only-at-punctuation", action="store_true", default=False)


# --- build-dataset -------------------------------------------------------


def _cmd_build_dataset(args: argparse.Namespace) -> int:
    annotated = ds.read_annotated_file(args.from_annotated) if args.from_annotated else []
    pairs = ds.read_edit_pairs_file(args.from_edits) if args.from_edits else []
    if not annotated and not pairs:
        raise DataError("need --from-annotated and/or --from-edits")
    instances = ds.build_instances(annotated, pairs)

    report: dict = {"n_input_instances": len(instances), "balanced": not args.no_balance}
    if not args.no_balance:
        instances, strat = ds.stratify_balance(instances, seed=args.seed)
        report["buckets"] = [
            {
                "bucket": b.bucket,
                "n_entailed": b.n_entailed,
                "n_not_entailed": b.n_not_entailed,
                "kept_per_label": b.kept_per_label,
                "dropped": b.dropped,
            }
            for b in strat.buckets
        ]
        report["dropped_buckets"] = list(strat.dropped_buckets)
    faithful, unfaithful = ds.count_labels(instances)
    report["n_output_instances"] = len(instances)
    report["n_faithful"] = faithful
    report["n_unfaithful"] = unfaithful

    header = ds.CorpusHeader(
        tokenizer_id=args.tokenizer_id, detok_rule=args.detok_rule, seed=args.seed
    )
    ds.write_corpus(instances, args.out, header=header)
    if args.report:
        _write_atomic(args.report, json.dumps(report, indent=2, sort_keys=True) + "\n")
    if args.premises_out:
        seen: dict[str, str] = {}
        for src in (args.from_annotated, args.from_edits):
            if not src:
                continue
            for line in Path(src).read_text(encoding="utf-8").splitlines():
                if line.strip():
                    rec = json.loads(line)
                    seen.setdefault(rec["premise"]["id"], rec["premise"]["text"])
        lines = [
            json.dumps({"id": pid, "text": text}, sort_keys=True)
            for pid, text in sorted(seen.items())
        ]
        _write_atomic(args.premises_out, "\n".join(lines) + "\n")
    print(
        f"wrote {report['n_output_instances']} instances "
        f"({report['n_faithful']} faithful / {report['n_unfaithful']} unfaithful) to {args.out}"
    )
    return EXIT_OK


# --- eval-scorer ----------------------------------------------------------


def _load_premises(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            rec = json.loads(line)
            out[rec["id"]] = rec["text"]
    return out


def _build_scorer(args: argparse.Namespace) -> Scorer:
    endpoint = getattr(args, "scorer_endpoint", None) or os.environ.get(ENV_SCORER_ENDPOINT)
    if endpoint:
        return HttpScorer(endpoint, timeout_s=_timeout(args))
    if getattr(args, "oracle_from", None):
        return SpanOracleScorer.from_annotated(ds.read_annotated_file(args.oracle_from))
    if getattr(args, "overlap", False):
        return LexicalOverlapScorer()
    if getattr(args, "constant", None) is not None:
        return ConstantScorer(args.constant)
    if getattr(args, "fixture", None):
        return load_mock_world(args.fixture).scorer
    raise DataError("no scorer configured: pass --scorer-endpoint, --oracle-from, "
                    "--overlap, --constant, or --fixture")


def _timeout(args: argparse.Namespace) -> float:
    if getattr(args, "timeout_s", None) is not None:
        return args.timeout_s
    return float(os.environ.get(ENV_TIMEOUT_S, "30"))


def _cmd_eval_scorer(args: argparse.Namespace) -> int:
    corpus = ds.read_corpus(args.corpus)
    premises = _load_premises(args.premises)
    scorer = _build_scorer(args)

    records = []
    batch: list[tuple[str, str]] = []
    for inst in corpus.instances:
        try:
            premise_text = premises[inst.premise_id]
        except KeyError:
            raise DataError(f"premise {inst.premise_id!r} missing from {args.premises}")
        batch.append((premise_text, render_tokens(inst.prefix.tokens, corpus.header.detok_rule)))
    probs = scorer.score_batch(batch)
    for inst, prob in zip(corpus.instances, probs):
        predicted = (
            EntailmentLabel.ENTAILED if prob > 0.5 else EntailmentLabel.NOT_ENTAILED
        )
        records.append(
            metrics.PredictionRecord(
                instance_id=f"{inst.prefix.sentence_id}:{inst.prefix.t}",
                predicted=predicted,
                gold=inst.label,
                relative_position=inst.relative_position,
            )
        )

    edges = tuple(float(e) for e in args.edges.split(",")) if args.edges else metrics.DEFAULT_BIN_EDGES
    unfaithful = metrics.micro_f1(records, EntailmentLabel.NOT_ENTAILED)
    faithful = metrics.micro_f1(records, EntailmentLabel.ENTAILED)
    overall_ci = metrics.bootstrap_ci(
        records,
        lambda recs: metrics.micro_f1(recs, EntailmentLabel.NOT_ENTAILED).value,
        n_resamples=args.resamples,
        level=args.level,
        seed=args.seed,
    )
    bins = metrics.binned_f1_with_ci(
        records, edges=edges, n_resamples=args.resamples, level=args.level, seed=args.seed
    )

    report = {
        "n_records": len(records),
        "unfaithful_f1": {
            "value": unfaithful.value,
            "degenerate": unfaithful.degenerate,
            "ci": list(overall_ci),
        },
        "faithful_f1": {"value": faithful.value, "degenerate": faithful.degenerate},
        "bins": [
            {
                "low": b.low,
                "high": b.high,
                "n": b.n,
                "f1": None if b.f1 is None else b.f1.value,
                "degenerate": None if b.f1 is None else b.f1.degenerate,
                "ci": None if b.ci is None else list(b.ci),
            }
            for b in bins.bins
        ],
    }
    _write_atomic(args.out, json.dumps(report, indent=2, sort_keys=True) + "\n")
    if args.records_out:
        lines = [
            json.dumps(
                {
                    "instance_id": r.instance_id,
                    "predicted": r.predicted.value,
                    "gold": r.gold.value,
                    "relative_position": r.relative_position,
                },
                sort_keys=True,
            )
            for r in records
        ]
        _write_atomic(args.records_out, "\n".join(lines) + "\n")
    if args.csv:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["bin_low", "bin_high", "n", "f1", "ci_low", "ci_high", "degenerate"])
        for b in bins.bins:
            writer.writerow([
                b.low,
                b.high,
                b.n,
                "" if b.f1 is None else b.f1.value,
                "" if b.ci is None else b.ci[0],
                "" if b.ci is None else b.ci[1],
                "" if b.f1 is None else b.f1.degenerate,
            ])
        _write_atomic(args.csv, buf.getvalue())
    print(f"unfaithful-class F1 {unfaithful.value:.4f} over {len(records)} records")
    return EXIT_OK


# --- decode ---------------------------------------------------------------


def _world_or_remote(args: argparse.Namespace) -> tuple:
    """Returns (generator, scorer, documents)."""
    if args.fixture:
        world = load_mock_world(args.fixture)
        return world.generator, world.scorer, world.documents
    endpoint = args.generator_endpoint or os.environ.get(ENV_GENERATOR_ENDPOINT)
    if not endpoint:
        raise DataError("need --fixture or a generator endpoint")
    gen = HttpGenerator(endpoint, timeout_s=_timeout(args))
    scorer = _build_scorer(args) if args.mode != "vanilla" else None
    if not args.premise_text:
        raise DataError("remote decoding needs --premise-text")
    premise = Premise(id=args.context_id, text=args.premise_text)
    from .gateway import WorldDocument

    doc = WorldDocument(
        premise=premise,
        context=GenerationContext(context_id=args.context_id, prompt_text=args.prompt or ""),
    )
    return gen, scorer, [doc]


def _cmd_decode(args: argparse.Namespace) -> int:
    mode = _MODE_NAMES[args.mode]
    gen, scorer, documents = _world_or_remote(args)
    doc = documents[0]
    config = _decoding_config(args, mode)
    result = engine.decode(gen, doc.context, config, scorer=scorer, premise=doc.premise)
    if args.trace_out:
        _write_atomic(
            args.trace_out,
            json.dumps(engine.trace_to_dict(result.trace), indent=2, sort_keys=True) + "\n",
        )
    print(result.text)
    return EXIT_OK


# --- compare ----------------------------------------------------------------


def _judge_faithfulness(scorer: Scorer, premise_text: str, decoded_text: str) -> float:
    sentences = split_sentences(decoded_text) or ([decoded_text] if decoded_text else [])
    if not sentences:
        return 0.0
    labels = [
        EntailmentLabel.ENTAILED
        if scorer.score(premise_text, sentence) > 0.5
        else EntailmentLabel.NOT_ENTAILED
        for sentence in sentences
    ]
    return metrics.faithfulness_proportion(labels)


def _cmd_compare(args: argparse.Namespace) -> int:
    world = load_mock_world(args.fixture)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    for m in modes:
        if m not in _MODE_NAMES:
            raise DataError(f"unknown mode {m!r}")

    def run_one(mode_name: str, doc) -> dict:
        config = _decoding_config(args, _MODE_NAMES[mode_name])
        result = engine.decode(
            world.generator, doc.context, config, scorer=world.scorer, premise=doc.premise
        )
        row = {
            "mode": mode_name,
            "doc": doc.premise.id,
            "text": result.text,
            "faithfulness": _judge_faithfulness(world.scorer, doc.premise.text, result.text),
            "rouge_l": (
                metrics.rouge_l_f1(result.text.split(), list(doc.reference_tokens))
                if doc.reference_tokens and result.text
                else ""
            ),
            "generator_calls": result.trace.counters.generator_calls,
            "scorer_calls": result.trace.counters.scorer_calls,
            "tokens_generated": result.trace.counters.tokens_generated,
            "wall_time_s": result.trace.wall_time_s,
        }
        return row

    jobs = []
    for mode_name in modes:
        for doc in world.documents:
            jobs.append((mode_name, doc))
    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(lambda j: run_one(*j), jobs))
    else:
        rows = [run_one(*j) for j in jobs]

    main_fields = [
        "mode", "doc", "text", "faithfulness", "rouge_l",
        "generator_calls", "scorer_calls", "tokens_generated",
    ]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=main_fields, extrasaction="ignore")
    writer.writeheader()
    writer.writerows(rows)
    _write_atomic(args.out, buf.getvalue())

    if args.timing_out:
        tbuf = io.StringIO()
        twriter = csv.DictWriter(tbuf, fieldnames=["mode", "doc", "wall_time_s"],
                                 extrasaction="ignore")
        twriter.writeheader()
        twriter.writerows(rows)
        _write_atomic(args.timing_out, tbuf.getvalue())

    for row in rows:
        print(f"{row['mode']:>10} {row['doc']}: faithfulness={row['faithfulness']:.3f} "
              f"gen_calls={row['generator_calls']} scorer_calls={row['scorer_calls']}")
    return EXIT_OK


# --- cost -------------------------------------------------------------------


def _cmd_cost(args: argparse.Namespace) -> int:
    if args.trace:
        payload = json.loads(Path(args.trace).read_text(encoding="utf-8"))
        counters = payload["counters"]
        trace = engine.DecodeTrace(
            mode=DecodeMode(payload["mode"]),
            beam_width=payload["config"]["beam_width"],
            config=DecodingConfig(
                mode=DecodeMode(payload["mode"]),
                beam_width=payload["config"]["beam_width"],
            ),
            counters=engine.Counters(
                generator_calls=counters["generator_calls"],
                scorer_calls=counters["scorer_calls"],
                tokens_generated=counters["tokens_generated"],
            ),
            wall_time_s=payload["timing"]["wall_time_s"],
        )
        rec = reconcile_trace(
            trace,
            ModelShape(int(args.n_lm), args.n_layer, args.d_model),
            ModelShape(int(args.n_ent), args.n_layer, args.d_model),
        )
        print(json.dumps(rec.__dict__, indent=2, sort_keys=True))
        return EXIT_OK

    def grid(point: float, sweep: str | None) -> list[float]:
        return [float(v) for v in sweep.split(",")] if sweep else [float(point)]

    rows = []
    for n_lm in grid(args.n_lm, args.n_lm_values):
        for n_ent in grid(args.n_ent, args.n_ent_values):
            for m in grid(args.m, args.m_values):
                cost = per_token_cost(n_lm, n_ent, m)
                rows.append((n_lm, n_ent, cost))
                print(
                    f"n_lm={n_lm:g} n_ent={n_ent:g} M={m:g}: "
                    f"vanilla={cost.flops_vanilla_per_token:.6g} "
                    f"guided={cost.flops_guided_per_token:.6g} "
                    f"ratio={cost.theoretical_ratio:.6g}"
                )
    if args.out:
        report = [
            {
                "n_lm": n_lm,
                "n_ent": n_ent,
                "m": cost.assumed_m,
                "flops_vanilla_per_token": cost.flops_vanilla_per_token,
                "flops_guided_per_token": cost.flops_guided_per_token,
                "theoretical_ratio": cost.theoretical_ratio,
            }
            for n_lm, n_ent, cost in rows
        ]
        _write_atomic(args.out, json.dumps(report, indent=2, sort_keys=True) + "\n")
    if args.csv:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["n_lm", "n_ent", "m", "flops_vanilla_per_token",
                         "flops_guided_per_token", "theoretical_ratio"])
        for n_lm, n_ent, cost in rows:
            writer.writerow([n_lm, n_ent, cost.assumed_m, cost.flops_vanilla_per_token,
                             cost.flops_guided_per_token, cost.theoretical_ratio])
        _write_atomic(args.csv, buf.getvalue())
    return EXIT_OK


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prefixguard",
        description="Prefix-entailment corpus building, scoring evaluation, and guided decoding.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-dataset", help="construct a prefix-entailment corpus")
    p.add_argument("--from-annotated", help="JSONL of span-annotated examples")
    p.add_argument("--from-edits", help="JSONL of seed/modified edit pairs")
    p.add_argument("--out", required=True, help="corpus output path")
    p.add_argument("--seed", type=int, default=17)
    p.add_argument("--no-balance", action="store_true",
                   help="skip stratified label balancing")
    p.add_argument("--report", help="write the stratification report here")
    p.add_argument("--premises-out", help="write premise id/text JSONL here")
    p.add_argument("--tokenizer-id", default="whitespace")
    p.add_argument("--detok-rule", default="space", choices=["space", "concat"])
    p.set_defaults(func=_cmd_build_dataset)

    p = sub.add_parser("eval-scorer", help="score a corpus and report F1 with binned CIs")
    p.add_argument("--corpus", required=True)
    p.add_argument("--premises", required=True, help="JSONL of {id, text} premise records")
    p.add_argument("--scorer-endpoint")
    p.add_argument("--oracle-from", help="build a perfect scorer from this annotated JSONL")
    p.add_argument("--overlap", action="store_true", help="use the lexical-overlap scorer")
    p.add_argument("--constant", type=float, help="use a constant-probability scorer")
    p.add_argument("--fixture", help="use the scorer from this mock-world fixture")
    p.add_argument("--edges", help="comma-separated bin edges ending at 1.0")
    p.add_argument("--resamples", type=int, default=metrics.DEFAULT_N_RESAMPLES)
    p.add_argument("--level", type=float, default=metrics.DEFAULT_CI_LEVEL)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--timeout-s", type=float, default=None)
    p.add_argument("--out", required=True, help="JSON report path")
    p.add_argument("--csv", help="per-bin CSV path")
    p.add_argument("--records-out", help="per-instance prediction records JSONL")
    p.set_defaults(func=_cmd_eval_scorer)

    p = sub.add_parser("decode", help="decode one document")
    p.add_argument("--mode", choices=sorted(_MODE_NAMES), required=True)
    p.add_argument("--fixture", help="mock-world fixture path")
    p.add_argument("--generator-endpoint")
    p.add_argument("--scorer-endpoint")
    p.add_argument("--premise-text")
    p.add_argument("--context-id", default="doc")
    p.add_argument("--prompt")
    p.add_argument("--timeout-s", type=float, default=None)
    p.add_argument("--trace-out", help="write the decode trace here")
    _add_decoding_flags(p)
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("compare", help="run several decoding modes over a fixture corpus")
    p.add_argument("--fixture", required=True)
    p.add_argument("--modes", default="vanilla,prefix,lookahead")
    p.add_argument("--out", required=True, help="deterministic results CSV")
    p.add_argument("--timing-out", help="wall-time CSV (non-deterministic section)")
    p.add_argument("--jobs", type=int, default=1)
    _add_decoding_flags(p)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("cost", help="theoretical per-token FLOPs, point or sweep")
    p.add_argument("--n-lm", type=float, required=True,
                   help="generator non-embedding parameter count")
    p.add_argument("--n-ent", type=float, required=True,
                   help="scorer non-embedding parameter count")
    p.add_argument("--m", type=float, default=6.0, help="scored candidates per beam per step")
    p.add_argument("--m-values", help="comma-separated sweep over m")
    p.add_argument("--n-lm-values", help="comma-separated sweep over generator sizes")
    p.add_argument("--n-ent-values", help="comma-separated sweep over scorer sizes")
    p.add_argument("--csv", help="sweep CSV output")
    p.add_argument("--out", help="JSON cost report output")
    p.add_argument("--trace", help="reconcile this decode trace instead")
    p.add_argument("--n-layer", type=int, default=16)
    p.add_argument("--d-model", type=int, default=2048)
    p.set_defaults(func=_cmd_cost)

    return parser


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors, 0 for --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except PrefixGuardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    raise SystemExit(run())


if __name__ == "__main__":
    main()
