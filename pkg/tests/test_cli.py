import json
import math
import shutil

import pytest
from click.testing import CliRunner

from spectral_uncertainty.cli import main, timing_table
from spectral_uncertainty.evaluation import parse_item, write_dataset
from spectral_uncertainty.pipeline import QuestionRun, load_runs
from spectral_uncertainty.prompts import TaskKind
from spectral_uncertainty.synthetic import SyntheticProvider, ambiguity_world


@pytest.fixture
def runner():
    return CliRunner()


def world_files(tmp_path, n=4, fraction=0.5, seed=0):
    world = ambiguity_world(n, fraction, seed)
    dataset = tmp_path / "data.jsonl"
    write_dataset(world.dataset(), dataset)
    return world, dataset


def common(tmp_path, base_url, dataset):
    return ["--dataset", str(dataset), "--base-url", base_url, "--equivalence", "exact",
            "--cache-root", str(tmp_path / "cache"), "--runs-root", str(tmp_path / "runs"),
            "--api-key-env", "SPECTRAL_UQ_TEST_NO_KEY"]


class TestScoreEvaluate:
    def test_score_one_question(self, runner, tmp_path, local_server):
        world, dataset = world_files(tmp_path, n=1, fraction=1.0)
        provider = SyntheticProvider(world)
        with local_server(provider) as server:
            result = runner.invoke(main, ["score", "--run-id", "one", *common(tmp_path, server.base_url, dataset)])
        assert result.exit_code == 0, result.output
        lines = (tmp_path / "runs" / "one" / "questions.jsonl").read_text().splitlines()
        assert len(lines) == 1 and json.loads(lines[0])["status"] == "ok"
        assert json.loads((tmp_path / "runs" / "one" / "config.json").read_text())["equivalence"] == "exact"

    def test_default_run_id_is_config_digest(self, runner, tmp_path, local_server):
        world, dataset = world_files(tmp_path, n=1, fraction=1.0)
        with local_server(SyntheticProvider(world)) as server:
            result = runner.invoke(main, ["score", "--methods", "spectral", *common(tmp_path, server.base_url, dataset)])
        assert result.exit_code == 0, result.output
        (run_dir,) = (tmp_path / "runs").iterdir()
        assert len(run_dir.name) == 12

    def test_rerun_is_cache_only_and_byte_identical(self, runner, tmp_path, local_server):
        world, dataset = world_files(tmp_path, n=4)
        provider = SyntheticProvider(world)
        run_dir = tmp_path / "runs" / "r"
        outputs, calls = [], []
        with local_server(provider) as server:
            for _ in range(2):
                shutil.rmtree(run_dir, ignore_errors=True)
                args = ["score", "--run-id", "r", *common(tmp_path, server.base_url, dataset)]
                assert runner.invoke(main, args).exit_code == 0
                calls.append(sum(provider.calls.values()))
                result = runner.invoke(main, ["evaluate", str(run_dir), "--no-figures"])
                assert result.exit_code == 0, result.output
                outputs.append({p.name: p.read_bytes() for p in (run_dir / "report").glob("scores_*.csv")})
        assert calls[0] > 0 and calls[1] == calls[0]
        assert outputs[0] == outputs[1] and len(outputs[0]) == 4

    def test_evaluate_one_class_fails_clearly(self, runner, tmp_path, local_server):
        world, dataset = world_files(tmp_path, n=3, fraction=1.0)
        with local_server(SyntheticProvider(world)) as server:
            assert runner.invoke(main, ["score", "--run-id", "x", *common(tmp_path, server.base_url, dataset)]).exit_code == 0
        result = runner.invoke(main, ["evaluate", str(tmp_path / "runs" / "x")])
        assert result.exit_code == 6
        assert "error[evaluate]" in result.stderr and "undefined" in result.stderr

    def test_evaluate_writes_report(self, runner, tmp_path, local_server):
        world, dataset = world_files(tmp_path, n=6)
        with local_server(SyntheticProvider(world)) as server:
            runner.invoke(main, ["score", "--run-id", "x", *common(tmp_path, server.base_url, dataset)])
        result = runner.invoke(main, ["evaluate", str(tmp_path / "runs" / "x")])
        assert result.exit_code == 0, result.output
        report = tmp_path / "runs" / "x" / "report"
        for name in ("metrics.txt", "metrics.json", "scores_spectral_aleatoric.csv", "scores_pke.csv",
                     "kde.png", "distance_cdf.csv", "distance_cdf.png"):
            assert (report / name).exists(), name
        meta = json.loads((report / "metrics.json").read_text())["metadata"]
        assert meta["config"]["equivalence"] == "exact" and meta["excluded"]["failed"] == 0
        assert "Spectral Uncertainty (aleatoric)" in result.output


class TestClarify:
    def test_single_question(self, runner, tmp_path, local_server):
        world, dataset = world_files(tmp_path, n=2, fraction=1.0)
        q = world.questions[0]
        with local_server(SyntheticProvider(world)) as server:
            result = runner.invoke(main, ["clarify", "--question", q.question, "--base-url", server.base_url,
                                          "--cache-root", str(tmp_path / "cache")])
        assert result.exit_code == 0, result.output
        rec = json.loads(result.output)
        assert rec["clarifications"] == q.clarifications and rec["needed"] is True

    def test_dataset_to_file(self, runner, tmp_path, local_server):
        world, dataset = world_files(tmp_path, n=3)
        out = tmp_path / "clar.jsonl"
        with local_server(SyntheticProvider(world)) as server:
            result = runner.invoke(main, ["clarify", "--out", str(out), *common(tmp_path, server.base_url, dataset)])
        assert result.exit_code == 0, result.output
        assert [json.loads(x)["id"] for x in out.read_text().splitlines()] == [q.id for q in world.questions]


class TestErrors:
    def test_config_errors_listed_together(self, runner, tmp_path):
        result = runner.invoke(main, ["score", "--m", "0", "--kernel", "poly", "--dataset", "x.jsonl"])
        assert result.exit_code == 2
        assert "error[score]" in result.stderr
        assert "m: must be" in result.stderr and "kernel: must be" in result.stderr

    def test_missing_credentials_before_any_call(self, runner, tmp_path, monkeypatch):
        monkeypatch.delenv("OPENAI_API_KEY", raising=False)
        _, dataset = world_files(tmp_path, n=1)
        result = runner.invoke(main, ["score", "--dataset", str(dataset), "--runs-root", str(tmp_path / "runs")])
        assert result.exit_code == 2
        assert "OPENAI_API_KEY" in result.stderr
        assert not (tmp_path / "runs").exists()

    def test_missing_dataset_file(self, runner, tmp_path):
        result = runner.invoke(main, ["score", "--dataset", str(tmp_path / "none.jsonl"),
                                      "--base-url", "http://127.0.0.1:9/v1"])
        assert result.exit_code != 0 and "error[score]" in result.stderr

    def test_bad_dataset_line(self, runner, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"id": "a", "question": "Q"}\n')
        result = runner.invoke(main, ["score", "--dataset", str(bad), "--base-url", "http://127.0.0.1:9/v1"])
        assert result.exit_code == 3 and "line 1" in result.stderr


class TestSimulate:
    def test_writes_dataset_scores_and_report(self, runner, tmp_path):
        result = runner.invoke(main, ["simulate", "--questions", "8", "--seed", "2", "--no-figures",
                                      "--runs-root", str(tmp_path / "runs"), "--cache-root", str(tmp_path / "c")])
        assert result.exit_code == 0, result.output
        run_dir = tmp_path / "runs" / "simulate-2"
        assert len((run_dir / "dataset.jsonl").read_text().splitlines()) == 8
        assert len((run_dir / "questions.jsonl").read_text().splitlines()) == 8
        assert (run_dir / "report" / "scores_spectral_aleatoric.csv").exists()

    def test_config_file_and_flags(self, runner, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("m: 3\nmethods: spectral\n")
        result = runner.invoke(main, ["simulate", "--questions", "4", "--config", str(cfg), "--kernel", "linear",
                                      "--no-figures", "--runs-root", str(tmp_path / "runs"),
                                      "--cache-root", str(tmp_path / "c")])
        assert result.exit_code == 0, result.output
        snap = json.loads((tmp_path / "runs" / "simulate-0" / "config.json").read_text())
        assert (snap["m"], snap["kernel"], snap["methods"]) == (3, "linear", ["spectral"])
        assert snap["base_url"].startswith("http://synthetic")


def timing_fixture(run_dir, totals):
    run_dir.mkdir(parents=True)
    with open(run_dir / "questions.jsonl", "w") as fh:
        for k, t in enumerate(totals):
            item = parse_item({"id": f"q{k}", "question": "Q?", "ambiguous": False})
            run = QuestionRun(item.id, item, TaskKind.AMBIGQA)
            run.timings = {"sample": t / 2, "total": t}
            fh.write(json.dumps(run.to_record()) + "\n")


class TestBench:
    def test_ci_on_five_values(self, runner, tmp_path):
        timing_fixture(tmp_path / "run", [1.0, 2.0, 3.0, 4.0, 5.0])
        # sample sd = sqrt(2.5), stderr = sqrt(2.5 / 5), half-width = 1.96 * sqrt(0.5)
        half = 1.96 * math.sqrt(0.5)
        result = runner.invoke(main, ["bench", str(tmp_path / "run")])
        assert result.exit_code == 0, result.output
        rows = json.loads((tmp_path / "run" / "report" / "bench.json").read_text())
        total = next(r for r in rows if r["stage"] == "total")
        assert total["n"] == 5 and total["mean"] == pytest.approx(3.0)
        assert (total["ci_low"], total["ci_high"]) == pytest.approx((3.0 - half, 3.0 + half), abs=1e-12)
        assert f"({3 - half:.3f}, {3 + half:.3f})" in result.output

    def test_single_question_has_no_interval(self, tmp_path):
        timing_fixture(tmp_path / "run", [2.0])
        (row, *_) = [r for r in timing_table(load_runs(tmp_path / "run")) if r["stage"] == "total"]
        assert math.isnan(row["ci_low"])

    def test_empty_run(self, runner, tmp_path):
        (tmp_path / "run").mkdir()
        result = runner.invoke(main, ["bench", str(tmp_path / "run")])
        assert result.exit_code == 3
