from __future__ import annotations

import json

import pytest

from prefixguard.cli import run
from prefixguard.dataset import read_corpus

from worlds import GOALKEEPER


@pytest.fixture()
def annotated_file(tmp_path):
    path = tmp_path / "annotated.jsonl"
    records = [
        {
            "premise": {"id": "d1", "text": "alpha beta gamma delta."},
            "sentences": [["alpha", "beta", "gamma", "delta"]],
            "spans": [{"start": 2, "end": 2}],
        },
        {
            "premise": {"id": "d2", "text": "epsilon zeta eta."},
            "sentences": [["epsilon", "zeta", "eta"]],
            "spans": [None],
        },
    ]
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n")
    return path


@pytest.fixture()
def edits_file(tmp_path):
    path = tmp_path / "edits.jsonl"
    rec = {
        "premise": {"id": "d3", "text": "the meeting happened in spring."},
        "seed": ["the", "meeting", "happened", "in", "spring"],
        "modified": ["the", "meeting", "happened", "in", "autumn"],
        "verdict": "not_entailed",
    }
    path.write_text(json.dumps(rec) + "\n")
    return path


class TestBuildDataset:
    def test_builds_corpus_report_and_premises(self, tmp_path, annotated_file, edits_file, capsys):
        out = tmp_path / "corpus.jsonl"
        report = tmp_path / "report.json"
        premises = tmp_path / "premises.jsonl"
        code = run([
            "build-dataset",
            "--from-annotated", str(annotated_file),
            "--from-edits", str(edits_file),
            "--out", str(out),
            "--report", str(report),
            "--premises-out", str(premises),
            "--seed", "17",
        ])
        assert code == 0
        corpus = read_corpus(out)
        assert corpus.header.seed == 17
        assert len(corpus.instances) > 0
        payload = json.loads(report.read_text())
        assert payload["balanced"] is True
        ids = {json.loads(l)["id"] for l in premises.read_text().splitlines()}
        assert ids == {"d1", "d2", "d3"}
        assert "wrote" in capsys.readouterr().out

    def test_no_balance_keeps_everything(self, tmp_path, annotated_file):
        out = tmp_path / "corpus.jsonl"
        code = run([
            "build-dataset", "--from-annotated", str(annotated_file),
            "--out", str(out), "--no-balance",
        ])
        assert code == 0
        # d1: single-token span -> 2 entailed + 2 not-entailed; d2: 3 entailed
        assert len(read_corpus(out).instances) == 7

    def test_byte_identical_reruns(self, tmp_path, annotated_file, edits_file):
        out1, out2 = tmp_path / "c1.jsonl", tmp_path / "c2.jsonl"
        for out in (out1, out2):
            assert run([
                "build-dataset",
                "--from-annotated", str(annotated_file),
                "--from-edits", str(edits_file),
                "--out", str(out),
            ]) == 0
        assert out1.read_bytes() == out2.read_bytes()

    def test_missing_input_is_data_error(self, tmp_path):
        code = run(["build-dataset", "--out", str(tmp_path / "x.jsonl")])
        assert code == 3


class TestEvalScorer:
    def test_oracle_scores_perfectly(self, tmp_path, annotated_file, capsys):
        corpus = tmp_path / "corpus.jsonl"
        premises = tmp_path / "premises.jsonl"
        report = tmp_path / "report.json"
        bins_csv = tmp_path / "bins.csv"
        records_out = tmp_path / "records.jsonl"
        assert run([
            "build-dataset", "--from-annotated", str(annotated_file),
            "--out", str(corpus), "--premises-out", str(premises), "--no-balance",
        ]) == 0
        code = run([
            "eval-scorer",
            "--corpus", str(corpus),
            "--premises", str(premises),
            "--oracle-from", str(annotated_file),
            "--out", str(report),
            "--csv", str(bins_csv),
            "--records-out", str(records_out),
            "--resamples", "100",
        ])
        assert code == 0
        payload = json.loads(report.read_text())
        assert payload["unfaithful_f1"]["value"] == 1.0
        assert payload["n_records"] == 7
        assert bins_csv.read_text().startswith("bin_low,bin_high,n,f1")
        record_lines = [json.loads(l) for l in records_out.read_text().splitlines()]
        assert len(record_lines) == 7
        assert all(r["predicted"] == r["gold"] for r in record_lines)

    def test_constant_scorer_misses_unfaithful(self, tmp_path, annotated_file):
        corpus = tmp_path / "corpus.jsonl"
        premises = tmp_path / "premises.jsonl"
        report = tmp_path / "report.json"
        run([
            "build-dataset", "--from-annotated", str(annotated_file),
            "--out", str(corpus), "--premises-out", str(premises), "--no-balance",
        ])
        assert run([
            "eval-scorer", "--corpus", str(corpus), "--premises", str(premises),
            "--constant", "0.99", "--out", str(report), "--resamples", "50",
        ]) == 0
        payload = json.loads(report.read_text())
        assert payload["unfaithful_f1"]["value"] == 0.0


class TestDecode:
    def test_guided_fixture_decode_emits_supported_name(self, tmp_path, capsys):
        trace_path = tmp_path / "trace.json"
        code = run([
            "decode", "--mode", "prefix", "--fixture", str(GOALKEEPER),
            "--lambda", "5", "--tau", "0.5",
            "--trace-out", str(trace_path),
        ])
        assert code == 0
        assert "Nicky" in capsys.readouterr().out
        payload = json.loads(trace_path.read_text())
        assert payload["mode"] == "prefix_guided"
        assert payload["counters"]["scorer_calls"] > 0

    def test_vanilla_fixture_decode_emits_favorite(self, capsys):
        assert run(["decode", "--mode", "vanilla", "--fixture", str(GOALKEEPER)]) == 0
        assert "Jeremy" in capsys.readouterr().out

    def test_trace_reruns_identical_except_timing(self, tmp_path):
        paths = [tmp_path / "t1.json", tmp_path / "t2.json"]
        for p in paths:
            assert run([
                "decode", "--mode", "prefix", "--fixture", str(GOALKEEPER),
                "--trace-out", str(p),
            ]) == 0
        a, b = (json.loads(p.read_text()) for p in paths)
        a.pop("timing"), b.pop("timing")
        assert a == b

    def test_missing_fixture_is_data_error(self):
        assert run(["decode", "--mode", "prefix"]) == 3

    def test_config_file_overridden_by_flags(self, tmp_path, capsys):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"beam_width": 1, "max_new_tokens": 2}))
        trace_path = tmp_path / "trace.json"
        assert run([
            "decode", "--mode", "vanilla", "--fixture", str(GOALKEEPER),
            "--config", str(config), "--max-new-tokens", "4",
            "--trace-out", str(trace_path),
        ]) == 0
        payload = json.loads(trace_path.read_text())
        assert payload["config"]["beam_width"] == 1      # from file
        assert payload["config"]["max_new_tokens"] == 4  # flag wins


class TestCompare:
    def test_three_mode_table(self, tmp_path):
        out = tmp_path / "compare.csv"
        timing = tmp_path / "timing.csv"
        code = run([
            "compare", "--fixture", str(GOALKEEPER),
            "--out", str(out), "--timing-out", str(timing),
            "--beam-width", "1",
        ])
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == (
            "mode,doc,text,faithfulness,rouge_l,generator_calls,scorer_calls,tokens_generated"
        )
        rows = {line.split(",")[0]: line for line in lines[1:]}
        assert "Former goalkeeper Jeremy" in rows["vanilla"]
        assert "Former goalkeeper Nicky" in rows["prefix"]
        assert "Former goalkeeper Nicky" in rows["lookahead"]
        # vanilla summary is judged unfaithful, guided ones faithful
        assert ",0.0," in rows["vanilla"]
        assert ",1.0," in rows["prefix"]
        assert timing.read_text().startswith("mode,doc,wall_time_s")

    def test_deterministic_output_even_with_jobs(self, tmp_path):
        outs = [tmp_path / "a.csv", tmp_path / "b.csv"]
        for out, jobs in zip(outs, ("1", "4")):
            assert run([
                "compare", "--fixture", str(GOALKEEPER), "--out", str(out),
                "--jobs", jobs, "--beam-width", "1",
            ]) == 0
        assert outs[0].read_bytes() == outs[1].read_bytes()


class TestCost:
    def test_reference_point(self, capsys):
        assert run(["cost", "--n-lm", "1.23e9", "--n-ent", "1.23e9", "--m", "6"]) == 0
        out = capsys.readouterr().out
        assert "ratio=7" in out

    def test_sweep_csv(self, tmp_path):
        out = tmp_path / "sweep.csv"
        assert run([
            "cost", "--n-lm", "1e9", "--n-ent", "1e9",
            "--m-values", "0,2,4", "--csv", str(out),
        ]) == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 4
        assert lines[1].endswith(",1.0")

    def test_trace_reconciliation(self, tmp_path, capsys):
        trace_path = tmp_path / "trace.json"
        run([
            "decode", "--mode", "prefix", "--fixture", str(GOALKEEPER),
            "--beam-width", "1", "--trace-out", str(trace_path),
        ])
        capsys.readouterr()  # drop the decode output
        assert run([
            "cost", "--trace", str(trace_path),
            "--n-lm", "1.23e9", "--n-ent", "1.23e9",
        ]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["scorer_calls"] == 6
        assert payload["generator_calls"] == 4


class TestUsage:
    def test_no_command_is_usage_error(self):
        assert run([]) == 2

    def test_unknown_mode_is_usage_error(self):
        assert run(["decode", "--mode", "sideways", "--fixture", str(GOALKEEPER)]) == 2

    @pytest.mark.parametrize(
        "command", ["build-dataset", "eval-scorer", "decode", "compare", "cost"]
    )
    def test_help_exits_zero(self, command, capsys):
        assert run([command, "--help"]) == 0
        assert "--" in capsys.readouterr().out
