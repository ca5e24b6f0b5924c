import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from ictd.cli import cli
from ictd.mrp import Mrp
from ictd.pretrain import Checkpoint


@pytest.fixture
def runner():
    return CliRunner()


TRAIN_ARGS = [
    "train", "--states", "3", "--depth", "3", "--tasks", "20", "--seed", "1",
]


class TestGenMrp:
    def test_emits_loadable_json(self, runner):
        result = runner.invoke(cli, ["gen-mrp", "--states", "4", "--seed", "7"])
        assert result.exit_code == 0
        mrp = Mrp.from_json_dict(json.loads(result.output))
        assert mrp.n == 4

    def test_byte_determinism(self, runner):
        a = runner.invoke(cli, ["gen-mrp", "--seed", "3"]).output
        b = runner.invoke(cli, ["gen-mrp", "--seed", "3"]).output
        assert a == b
        c = runner.invoke(cli, ["gen-mrp", "--seed", "4"]).output
        assert a != c

    def test_loop_family(self, runner):
        result = runner.invoke(cli, ["gen-mrp", "--family", "loop", "--states", "6"])
        mrp = Mrp.from_json_dict(json.loads(result.output))
        for i in range(6):
            assert mrp.transition[i, (i + 1) % 6] > 0.0


class TestTrain:
    def test_writes_checkpoint_and_log(self, runner, tmp_path):
        out = tmp_path / "run"
        result = runner.invoke(cli, TRAIN_ARGS + ["--out", str(out)])
        assert result.exit_code == 0, result.output
        ck = Checkpoint.from_json((out / "checkpoint.json").read_text())
        assert ck.tasks_seen == 20
        log = (out / "train_log.csv").read_text().splitlines()
        assert log[0] == "task_index,mean_abs_error,param_norm"
        assert len(log) == 21

    def test_checkpoint_bytes_deterministic(self, runner, tmp_path):
        blobs = []
        for name in ("a", "b"):
            out = tmp_path / name
            runner.invoke(cli, TRAIN_ARGS + ["--out", str(out)])
            blobs.append((out / "checkpoint.json").read_bytes())
        assert blobs[0] == blobs[1]

    def test_intermediate_checkpoints(self, runner, tmp_path):
        out = tmp_path / "run"
        runner.invoke(cli, TRAIN_ARGS + ["--checkpoint-every", "10", "--out", str(out)])
        assert (out / "checkpoint_000010.json").exists()
        assert (out / "checkpoint.json").exists()


class TestEvalMsve:
    @pytest.fixture
    def ckpt(self, runner, tmp_path):
        out = tmp_path / "run"
        runner.invoke(cli, TRAIN_ARGS + ["--out", str(out)])
        return out / "checkpoint.json"

    def test_csv_schema_and_determinism(self, runner, ckpt, tmp_path):
        args = [
            "eval-msve", "--ckpt", str(ckpt), "--tasks", "3",
            "--lengths", "5,10", "--seed", "2",
        ]
        a = runner.invoke(cli, args)
        b = runner.invoke(cli, args)
        assert a.exit_code == 0
        assert a.output == b.output
        lines = a.output.splitlines()
        assert lines[0] == "context_length,msve_mean,msve_stderr,n_tasks,seed"
        assert len(lines) == 3

    def test_lengths_range_syntax(self, runner, ckpt):
        result = runner.invoke(
            cli,
            ["eval-msve", "--ckpt", str(ckpt), "--tasks", "2", "--lengths", "5:25:10"],
        )
        lengths = [row.split(",")[0] for row in result.output.splitlines()[1:]]
        assert lengths == ["5", "15"]


class TestInspectWeights:
    def test_reports_scores(self, runner, tmp_path):
        out = tmp_path / "run"
        runner.invoke(cli, TRAIN_ARGS + ["--out", str(out)])
        result = runner.invoke(
            cli, ["inspect-weights", "--ckpt", str(out / "checkpoint*.json")]
        )
        assert result.exit_code == 0
        lines = result.output.splitlines()
        assert lines[0] == "matrix,correlation,off_pattern_energy"
        assert lines[1].startswith("P,") and lines[2].startswith("Q,")

    def test_json_output(self, runner, tmp_path):
        out = tmp_path / "run"
        runner.invoke(cli, TRAIN_ARGS + ["--out", str(out)])
        dest = tmp_path / "weights.json"
        runner.invoke(
            cli,
            ["inspect-weights", "--ckpt", str(out / "checkpoint.json"), "--out-json", str(dest)],
        )
        report = json.loads(dest.read_text())
        assert report["n_trials"] == 1
        assert set(report) >= {"p_corr", "q_corr", "p_off_pattern", "q_off_pattern"}

    def test_missing_glob_fails(self, runner, tmp_path):
        result = runner.invoke(cli, ["inspect-weights", "--ckpt", str(tmp_path / "nope*.json")])
        assert result.exit_code != 0


class TestVerify:
    def test_small_run_passes(self, runner, tmp_path):
        csv_path = tmp_path / "bounds.csv"
        json_path = tmp_path / "bounds.json"
        result = runner.invoke(
            cli,
            [
                "verify", "--check", "value_error", "--tasks", "5",
                "--layers", "5,30", "--out", str(csv_path), "--summary", str(json_path),
            ],
        )
        assert result.exit_code == 0, result.output
        assert "PASS" in result.output
        rows = csv_path.read_text().splitlines()
        assert rows[0] == "check,L,gamma,lhs,bound,slack"
        summary = json.loads(json_path.read_text())
        assert summary["passed"] is True
        assert summary["n_tasks"] == 5

    def test_trace_check(self, runner):
        result = runner.invoke(
            cli, ["verify", "--check", "trace", "--tasks", "3", "--layers", "10"]
        )
        assert result.exit_code == 0, result.output

    def test_output_determinism(self, runner, tmp_path):
        outputs = []
        for name in ("a.csv", "b.csv"):
            path = tmp_path / name
            runner.invoke(
                cli,
                ["verify", "--check", "neu_td", "--tasks", "3", "--layers", "5,10", "--out", str(path)],
            )
            outputs.append(path.read_bytes())
        assert outputs[0] == outputs[1]


class TestConfigFile:
    def test_file_supplies_flags_and_flags_override(self, runner, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"seed": 3, "states": 4}))
        from_file = runner.invoke(cli, ["gen-mrp", "--config", str(cfg)])
        explicit = runner.invoke(cli, ["gen-mrp", "--seed", "3", "--states", "4"])
        assert from_file.output == explicit.output
        overridden = runner.invoke(cli, ["gen-mrp", "--config", str(cfg), "--seed", "9"])
        expected = runner.invoke(cli, ["gen-mrp", "--seed", "9", "--states", "4"])
        assert overridden.output == expected.output
