"""Tests for the command-line entry point in cli.py"""
import json
from pathlib import Path

import pytest

import trainer
from cli import EXIT_CONFIG, EXIT_FAILURE, EXIT_OK, build_parser, config_from_args, main
from errors import ConfigurationError, IterationError

FAST = ["--horizon", "20"]


@pytest.fixture
def trained_run(tmp_path):
    """Output directory of a two-iteration XOR run"""
    out = tmp_path / "run"
    status = main(["run", "--task", "xor", "--units", "5", "--iterations", "2", "--seed", "7",
                   "--eval-every", "1", "--output-dir", str(out)] + FAST)
    assert status == EXIT_OK
    return out


class TestConfigFromArgs:
    """Tests for flag handling"""

    def _config(self, *argv):
        return config_from_args(build_parser().parse_args(["run", *argv]))

    def test_xor_units(self):
        config = self._config("--task", "xor", "--units", "8")
        assert config.topology.n_hidden == 5
        assert config.task == "xor"

    def test_digits_layers(self):
        config = self._config("--task", "digits", "--layers", "64,20,10", "--batch-per-digit", "5")
        assert config.topology.kind == "layered"
        assert config.topology.layer_sizes == [64, 20, 10]
        assert config.train.m_data == 50
        assert config.init_scheme == "digits"

    def test_overrides(self):
        config = self._config("--beta", "0.05", "--eta", "0.2", "--m-init", "3", "--seed", "9",
                              "--fixed-horizon", "--horizon", "50")
        assert config.train.beta == 0.05
        assert config.train.eta == 0.2
        assert config.train.m_init == 3
        assert config.train.rng_seed == 9
        assert config.train.integrator.early_exit is False
        assert config.train.integrator.horizon == 50.0

    def test_config_file_with_override(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"task": "xor", "train": {"n_iterations": 40, "eta": 0.3}}))
        config = self._config("--config", str(path), "--iterations", "5")
        assert config.train.n_iterations == 5
        assert config.train.eta == 0.3

    def test_bad_layers(self):
        with pytest.raises(ConfigurationError):
            self._config("--layers", "64")
        with pytest.raises(ConfigurationError):
            self._config("--layers", "64,x,10")


class TestRunCommand:
    """Tests for `run`"""

    def test_run_writes_artifacts(self, trained_run):
        assert (trained_run / "training_log.jsonl").exists()
        assert (trained_run / "experiment.log").exists()
        manifest = json.loads((trained_run / "manifest.json").read_text())
        assert manifest["seed"] == 7
        assert manifest["config"]["train"]["n_iterations"] == 2

    def test_missing_dataset_exits_without_artifacts(self, tmp_path):
        out = tmp_path / "digits"
        status = main(["run", "--task", "digits", "--data", str(tmp_path / "missing.tes"),
                       "--output-dir", str(out)])
        assert status == EXIT_CONFIG
        assert not out.exists()

    def test_too_few_units(self, tmp_path):
        assert main(["run", "--task", "xor", "--units", "2", "--output-dir", str(tmp_path)]) == EXIT_CONFIG

    def test_rerun_from_manifest(self, trained_run, tmp_path):
        """A manifest passed as --config reproduces the training log"""
        out = tmp_path / "replay"
        status = main(["run", "--config", str(trained_run / "manifest.json"), "--output-dir", str(out)])
        assert status == EXIT_OK
        assert (out / "training_log.jsonl").read_bytes() == (trained_run / "training_log.jsonl").read_bytes()

    def test_missing_config_file(self, tmp_path):
        status = main(["run", "--config", str(tmp_path / "none.json"), "--output-dir", str(tmp_path)])
        assert status == EXIT_CONFIG

    def test_training_failure_exits_one(self, tmp_path, monkeypatch):
        def always_fail(batch, *args, **kwargs):
            raise IterationError("forced", failures=len(batch))

        monkeypatch.setattr(trainer, "ep_update", always_fail)
        out = tmp_path / "halted"
        status = main(["run", "--task", "xor", "--iterations", "10", "--output-dir", str(out)])
        assert status == EXIT_FAILURE
        assert json.loads((out / "summary.json").read_text())["halted"] is True


    def test_pooled_training_failure_exits_one(self, tmp_path):
        """Diverged parameters fail every relaxation inside the worker processes"""
        out = tmp_path / "pooled"
        status = main(["run", "--task", "xor", "--iterations", "8", "--workers", "2",
                       "--eta", "inf", "--output-dir", str(out)] + FAST)
        assert status == EXIT_FAILURE
        summary = json.loads((out / "summary.json").read_text())
        assert summary["halted"] is True


class TestSweepCommand:
    def test_sweep(self, tmp_path):
        out = tmp_path / "sweep"
        status = main(["sweep", "--task", "xor", "--units", "5", "--iterations", "2",
                       "--axis", "m_init", "--values", "1,2", "--output-dir", str(out)] + FAST)
        assert status == EXIT_OK
        assert (out / "sweep_summary.csv").exists()
        assert (out / "m_init=2" / "replicate_0" / "summary.json").exists()


class TestEvalCommand:
    def test_eval_checkpoint(self, trained_run, tmp_path):
        out = tmp_path / "eval"
        status = main(["eval", "--checkpoint", str(trained_run / "final_checkpoint.json"),
                       "--task", "xor", "--output-dir", str(out)])
        assert status == EXIT_OK
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["n_samples"] == 4
        assert metrics["iteration"] == 2

    def test_missing_checkpoint(self, tmp_path):
        status = main(["eval", "--checkpoint", str(tmp_path / "none.json"), "--output-dir", str(tmp_path)])
        assert status == EXIT_CONFIG


class TestInspectEquilibriaCommand:
    def test_inspect_xor_inputs(self, trained_run, tmp_path):
        out = tmp_path / "eq"
        checkpoints = sorted(str(p) for p in (trained_run / "checkpoints").iterdir())
        status = main(["inspect-equilibria", "--checkpoint", *checkpoints, "--trials", "5",
                       "--dump-trajectories", "1", "--output-dir", str(out)])
        assert status == EXIT_OK
        report = json.loads((out / "equilibria.json").read_text())
        assert len(report) == len(checkpoints) == 3
        assert len(report[0]["inputs"]) == 4
        assert sum(c["count"] for c in report[0]["inputs"][0]["clusters"]) == \
            report[0]["inputs"][0]["n_converged"]
        assert len(list((out / "trajectories").iterdir())) == 12

    def test_explicit_inputs(self, trained_run, tmp_path):
        out = tmp_path / "eq"
        status = main(["inspect-equilibria", "--checkpoint", str(trained_run / "final_checkpoint.json"),
                       "--inputs", "1.5708,-1.5708", "--trials", "3", "--output-dir", str(out)])
        assert status == EXIT_OK
        report = json.loads((out / "equilibria.json").read_text())
        assert report[0]["inputs"][0]["input_phases"] == [1.5708, -1.5708]
        assert Path(out / "experiment.log").exists()
