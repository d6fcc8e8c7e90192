"""Tests for experiment orchestration in runner.py"""
import copy
import json
import signal
from pathlib import Path

import numpy as np
import pytest

import trainer
from errors import ConfigurationError, IterationError, TrainingHaltedError
from models import Checkpoint
from runner import (
    ExperimentRunner,
    apply_axis,
    replicate_seed,
    run_experiment,
    run_sweep_points,
    sweep,
)


def log_bytes(output_dir) -> bytes:
    return (Path(output_dir) / "training_log.jsonl").read_bytes()


class TestExperimentRunner:
    """Tests for a single seeded run"""

    def test_writes_artifacts(self, tiny_xor_config):
        summary = ExperimentRunner(tiny_xor_config, install_signal_handlers=False).run()
        out = Path(tiny_xor_config.output_dir)

        for name in ("manifest.json", "training_log.jsonl", "timings.csv",
                     "training_curve.csv", "summary.json", "final_checkpoint.json"):
            assert (out / name).exists(), name
        assert len(log_bytes(out).splitlines()) == 4
        checkpoints = sorted(p.name for p in (out / "checkpoints").iterdir())
        assert checkpoints == ["iteration_000000.json", "iteration_000002.json", "iteration_000003.json"]

        assert summary.success
        assert summary.iterations_completed == 3
        assert len(summary.distance_trace) == 3
        assert summary.final_mean_distance == summary.distance_trace[-1]
        assert summary.learning_speed is not None
        assert summary.n_parameters == 15

    def test_final_checkpoint_holds_trained_parameters(self, tiny_xor_config):
        ExperimentRunner(tiny_xor_config, install_signal_handlers=False).run()
        out = Path(tiny_xor_config.output_dir)
        final = Checkpoint.load(str(out / "final_checkpoint.json"))
        last = Checkpoint.load(str(out / "checkpoints" / "iteration_000003.json"))
        np.testing.assert_array_equal(final.params.as_vector(), last.params.as_vector())
        assert final.metadata["iteration"] == 3

    def test_seeded_logs_are_byte_identical(self, tiny_xor_config, tmp_path):
        second = copy.deepcopy(tiny_xor_config)
        second.output_dir = str(tmp_path / "again")
        ExperimentRunner(tiny_xor_config, install_signal_handlers=False).run()
        ExperimentRunner(second, install_signal_handlers=False).run()
        assert log_bytes(tiny_xor_config.output_dir) == log_bytes(second.output_dir)

    def test_rerun_from_manifest(self, tiny_xor_config, tmp_path):
        from config import ExperimentConfig

        ExperimentRunner(tiny_xor_config, install_signal_handlers=False).run()
        manifest = json.loads((Path(tiny_xor_config.output_dir) / "manifest.json").read_text())
        replay = ExperimentConfig.from_dict(manifest["config"])
        replay.output_dir = str(tmp_path / "replay")
        ExperimentRunner(replay, install_signal_handlers=False).run()
        assert log_bytes(replay.output_dir) == log_bytes(tiny_xor_config.output_dir)

    def test_zero_iterations(self, tiny_xor_config):
        tiny_xor_config.train.n_iterations = 0
        summary = ExperimentRunner(tiny_xor_config, install_signal_handlers=False).run()
        lines = log_bytes(tiny_xor_config.output_dir).splitlines()
        assert len(lines) == 1
        assert json.loads(lines[0])["evaluation"] is not None
        assert summary.iterations_completed == 0
        assert summary.learning_speed is None

    def test_halted_run_keeps_partial_artifacts(self, tiny_xor_config, monkeypatch):
        def always_fail(batch, *args, **kwargs):
            raise IterationError("forced", failures=len(batch))

        monkeypatch.setattr(trainer, "ep_update", always_fail)
        tiny_xor_config.train.n_iterations = 10
        with pytest.raises(TrainingHaltedError):
            ExperimentRunner(tiny_xor_config, install_signal_handlers=False).run()

        out = Path(tiny_xor_config.output_dir)
        summary = json.loads((out / "summary.json").read_text())
        assert summary["halted"] is True
        assert summary["iterations_completed"] == 4
        assert len(log_bytes(out).splitlines()) == 5

    def test_signal_handlers_restored_after_run(self, tiny_xor_config):
        def previous(signum, frame):
            pass

        signal.signal(signal.SIGINT, previous)
        signal.signal(signal.SIGTERM, previous)
        runner = ExperimentRunner(tiny_xor_config)
        assert signal.getsignal(signal.SIGINT) is previous
        runner.run()
        assert signal.getsignal(signal.SIGINT) is previous
        assert signal.getsignal(signal.SIGTERM) is previous

    def test_stop_flag_ends_early(self, tiny_xor_config):
        runner = ExperimentRunner(tiny_xor_config, install_signal_handlers=False)
        runner.running = False
        summary = runner.run()
        assert summary.stopped_early
        assert summary.iterations_completed == 0


class TestReplicates:
    """Tests for replicated runs"""

    def test_replicate_seeds(self):
        assert replicate_seed(7, 0) == 7
        assert replicate_seed(7, 1) == replicate_seed(7, 1)
        assert len({replicate_seed(7, k) for k in range(10)}) == 10

    def test_replicates_write_subdirectories(self, tiny_xor_config):
        tiny_xor_config.replicates = 2
        summaries = run_experiment(tiny_xor_config)
        out = Path(tiny_xor_config.output_dir)
        assert [s.seed for s in summaries] == [11, replicate_seed(11, 1)]
        assert (out / "replicate_0" / "training_log.jsonl").exists()
        assert (out / "replicate_1" / "training_log.jsonl").exists()
        rows = (out / "average_distance.csv").read_text().splitlines()
        assert rows[0] == "iteration,average_mean_distance"
        assert len(rows) == 4
        assert len(json.loads((out / "replicates_summary.json").read_text())) == 2


class TestSweep:
    """Tests for parameter sweeps"""

    def test_apply_axis(self, tiny_xor_config):
        assert apply_axis(tiny_xor_config, "n_units", 8).topology.n_hidden == 5
        assert apply_axis(tiny_xor_config, "m_init", 4).train.m_init == 4
        assert apply_axis(tiny_xor_config, "beta", 0.01).train.beta == 0.01
        assert apply_axis(tiny_xor_config, "eta", 0.2).train.eta == 0.2
        assert tiny_xor_config.train.eta == 0.1

    def test_apply_axis_errors(self, tiny_xor_config):
        with pytest.raises(ConfigurationError):
            apply_axis(tiny_xor_config, "n_units", 2)
        with pytest.raises(ConfigurationError):
            apply_axis(tiny_xor_config, "gamma", 1)

    async def test_run_sweep_points(self, tiny_xor_config):
        tiny_xor_config.replicates = 2
        report = await run_sweep_points(tiny_xor_config, "m_init", [1, 2])
        assert [p.value for p in report.points] == [1, 2]
        assert all(len(p.summaries) == 2 and not p.failures for p in report.points)
        assert report.points[1].summaries[0]["learning_speed"] is not None
        assert len(report.points[0].average_trace()) == 3

    async def test_failed_runs_are_recorded(self, tiny_xor_config, monkeypatch):
        def always_fail(batch, *args, **kwargs):
            raise IterationError("forced", failures=len(batch))

        monkeypatch.setattr(trainer, "ep_update", always_fail)
        tiny_xor_config.train.n_iterations = 6
        report = await run_sweep_points(tiny_xor_config, "eta", [0.1])
        assert len(report.points[0].failures) == 1
        assert report.points[0].summaries == []

    async def test_halted_worker_does_not_break_parallel_sweep(self, tiny_xor_config):
        """An infinite learning rate poisons the parameters after one update and the run halts"""
        tiny_xor_config.train.n_iterations = 6
        report = await run_sweep_points(tiny_xor_config, "eta", [0.1, float("inf")], max_workers=2)
        healthy, poisoned = report.points
        assert len(healthy.summaries) == 1 and not healthy.failures
        assert poisoned.summaries == []
        assert len(poisoned.failures) == 1
        assert "consecutive iterations failed" in poisoned.failures[0]

    def test_sweep_writes_report(self, tiny_xor_config):
        report = sweep(tiny_xor_config, "n_units", [5, 6])
        out = Path(tiny_xor_config.output_dir)
        rows = (out / "sweep_summary.csv").read_text().splitlines()
        assert rows[0].startswith("value,runs,failures")
        assert rows[1].startswith("5,1,0,")
        traces = (out / "sweep_traces.csv").read_text().splitlines()
        assert traces[0] == "iteration,n_units=5,n_units=6"
        assert len(report.points) == 2

    def test_single_point_matches_run_experiment(self, tiny_xor_config, tmp_path):
        direct = copy.deepcopy(tiny_xor_config)
        direct.output_dir = str(tmp_path / "direct")
        run_experiment(direct)
        sweep(tiny_xor_config, "eta", [0.1])
        swept = Path(tiny_xor_config.output_dir) / "eta=0.1" / "replicate_0"
        assert log_bytes(swept) == log_bytes(direct.output_dir)

    def test_empty_values(self, tiny_xor_config):
        with pytest.raises(ConfigurationError):
            sweep(tiny_xor_config, "eta", [])
