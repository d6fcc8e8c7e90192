"""
Experiment orchestration: single runs, seeded replicates and parameter sweeps
"""
import asyncio
import copy
import logging
import signal
import threading
from concurrent.futures import Executor, ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from artifacts import ArtifactWriter
from config import SWEEP_AXES, ExperimentConfig, TopologySpec
from errors import ConfigurationError, TrainingHaltedError
from metrics import benchmark_for, evaluate, learning_speed
from models import Checkpoint, ModelParameters, NetworkTopology, make_all_to_all, make_layered, parameter_count
from tasks import get_task
from trainer import TrainingCallbacks, train

logger = logging.getLogger(__name__)


def topology_from_spec(spec: TopologySpec) -> NetworkTopology:
    """Build the topology described by a config section"""
    if spec.kind == "layered":
        if not spec.layer_sizes:
            raise ConfigurationError("layered topology requires layer_sizes")
        return make_layered(spec.layer_sizes)
    return make_all_to_all(spec.n_in, spec.n_hidden, spec.n_out)


def replicate_seed(master_seed: int, index: int) -> int:
    """Replicate 0 runs with the master seed; the others get seeds derived from (master, index)"""
    if index == 0:
        return master_seed
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1)[0])


@dataclass
class RunSummary:
    """Outcome of one training run"""
    output_dir: str
    seed: int
    n_parameters: int
    iterations_completed: int = 0
    final_mean_distance: Optional[float] = None
    best_accuracy: Optional[float] = None
    best_iteration: Optional[int] = None
    learning_speed: Optional[float] = None
    normalized_learning_speed: Optional[float] = None
    distance_trace: list[float] = field(default_factory=list)
    stopped_early: bool = False
    halted: bool = False
    error: str = ""
    benchmark: Optional[dict] = None

    @property
    def success(self) -> bool:
        return not self.halted and not self.error

    def to_dict(self) -> dict:
        return asdict(self)


class ExperimentRunner:
    """Runs one seeded training experiment and writes its artifacts"""

    def __init__(self, config: ExperimentConfig, install_signal_handlers: bool = True):
        self.config = config
        self.writer = ArtifactWriter(config.output_dir)
        self.running = True
        self.install_signal_handlers = install_signal_handlers
        self._previous_handlers: dict[int, Any] = {}

    def _setup_signal_handlers(self):
        """Stop after the current iteration on SIGINT/SIGTERM"""
        if threading.current_thread() is not threading.main_thread():
            return

        def shutdown_handler(signum, frame):
            logger.info(f"Received signal {signum}, stopping after the current iteration...")
            self.running = False

        for signum in (signal.SIGINT, signal.SIGTERM):
            self._previous_handlers[signum] = signal.signal(signum, shutdown_handler)

    def _restore_signal_handlers(self):
        for signum, handler in self._previous_handlers.items():
            signal.signal(signum, handler)
        self._previous_handlers.clear()

    def run(self) -> RunSummary:
        """Train with periodic evaluation; raises TrainingHaltedError after writing partial artifacts"""
        if self.install_signal_handlers:
            self._setup_signal_handlers()
        try:
            return self._run()
        finally:
            self._restore_signal_handlers()

    def _run(self) -> RunSummary:
        config = self.config
        config.validate()
        task = get_task(config.task, config.dataset_path, config.batch_per_digit)
        topology = topology_from_spec(config.topology)
        if topology.n_in != task.n_inputs or topology.n_out != task.n_outputs:
            raise ConfigurationError(
                f"{task.name} needs {task.n_inputs} inputs and {task.n_outputs} outputs, "
                f"topology has {topology.n_in} and {topology.n_out}"
            )
        n_parameters = parameter_count(topology)

        self.writer.prepare()
        self.writer.write_manifest(
            config, {"topology": topology.describe(), "n_parameters": n_parameters}
        )

        train_config = config.train
        logger.info("=" * 60)
        logger.info(f"Task: {task.name} | {topology.describe()} | {n_parameters} parameters")
        logger.info(
            f"beta={train_config.beta} eta={train_config.eta} M_init={train_config.m_init} "
            f"M_data={train_config.m_data} iterations={train_config.n_iterations} "
            f"seed={train_config.rng_seed}"
        )
        logger.info("=" * 60)

        summary = RunSummary(
            output_dir=str(self.writer.output_dir),
            seed=train_config.rng_seed,
            n_parameters=n_parameters,
        )
        if task.is_classification:
            summary.benchmark = benchmark_for(topology.kind, topology.n_hidden)

        test_samples = task.test_samples()
        confusion_iterations = set(config.confusion_iterations)

        def evaluate_fn(iteration: int, params: ModelParameters, rng: np.random.Generator) -> dict:
            result = evaluate(
                params, topology, test_samples, train_config.integrator, rng,
                classify=task.is_classification, m_init=train_config.eval_m_init,
            )
            if result.confusion is not None and (
                iteration in confusion_iterations or iteration == train_config.n_iterations
            ):
                self.writer.append_confusion_matrix(iteration, result.confusion)
            self.writer.write_checkpoint(
                Checkpoint(topology, params, {"iteration": iteration, "seed": train_config.rng_seed}),
                iteration,
            )
            if task.is_classification:
                if summary.best_accuracy is None or result.accuracy > summary.best_accuracy:
                    summary.best_accuracy = result.accuracy
                    summary.best_iteration = iteration
                logger.info(f"Evaluation at iteration {iteration}: accuracy={result.accuracy:.4f}")
            else:
                logger.info(
                    f"Evaluation at iteration {iteration}: <D>={result.mean_distance:.6f}"
                )
            return result.summary()

        callbacks = TrainingCallbacks(
            evaluate=evaluate_fn,
            on_record=lambda record, params: self.writer.append_record(record),
            should_stop=lambda: not self.running,
        )

        try:
            log = train(task, topology, train_config, callbacks, init_scheme=config.init_scheme)
        except TrainingHaltedError as e:
            logger.error(f"Training halted: {e}")
            summary.halted = True
            summary.error = str(e)
            summary.iterations_completed = e.iteration
            self.writer.write_summary(summary.to_dict())
            raise

        trace = [d for _, d in log.distance_trace()]
        summary.distance_trace = trace
        summary.iterations_completed = log.records[-1].iteration
        summary.stopped_early = log.stopped_early
        if trace:
            summary.final_mean_distance = trace[-1]
        window = min(config.speed_window, len(trace))
        if window >= 2:
            speed = learning_speed(log, window=window, m_init=train_config.m_init)
            summary.learning_speed = speed.slope
            summary.normalized_learning_speed = speed.normalized_slope

        if log.params is not None:
            Checkpoint(topology, log.params, {
                "iteration": summary.iterations_completed,
                "seed": train_config.rng_seed,
            }).save(str(self.writer.path("final_checkpoint.json")))
        self.writer.write_summary(summary.to_dict())

        logger.info("=" * 60)
        logger.info(
            f"Finished {summary.iterations_completed} iterations: final <D>="
            f"{summary.final_mean_distance}, best accuracy={summary.best_accuracy}"
        )
        logger.info("=" * 60)
        return summary


def _average_traces(summaries: Sequence[dict]) -> list[float]:
    """Per-iteration mean of <D> across runs, truncated to the shortest trace"""
    traces = [s["distance_trace"] for s in summaries if s.get("distance_trace")]
    if not traces:
        return []
    length = min(len(t) for t in traces)
    return np.mean([t[:length] for t in traces], axis=0).tolist()


def run_experiment(config: ExperimentConfig) -> list[RunSummary]:
    """Run `config.replicates` seeded runs; replicate k writes to replicate_k/"""
    config.validate()
    if config.replicates == 1:
        return [ExperimentRunner(config).run()]

    summaries: list[RunSummary] = []
    for index in range(config.replicates):
        replicate = copy.deepcopy(config)
        replicate.replicates = 1
        replicate.train.rng_seed = replicate_seed(config.train.rng_seed, index)
        replicate.output_dir = str(Path(config.output_dir) / f"replicate_{index}")
        logger.info(f"Replicate {index + 1}/{config.replicates} (seed {replicate.train.rng_seed})")
        summaries.append(ExperimentRunner(replicate).run())

    writer = ArtifactWriter(config.output_dir)
    average = _average_traces([s.to_dict() for s in summaries])
    writer.write_table(
        "average_distance.csv",
        ["iteration", "average_mean_distance"],
        [[k + 1, d] for k, d in enumerate(average)],
    )
    writer.write_json("replicates_summary.json", [s.to_dict() for s in summaries])
    return summaries


def apply_axis(template: ExperimentConfig, axis: str, value: Any) -> ExperimentConfig:
    """Copy of `template` with one sweep axis set to `value`"""
    config = copy.deepcopy(template)
    if axis == "n_units":
        spec = config.topology
        if spec.kind != "all_to_all":
            raise ConfigurationError("n_units sweeps need an all-to-all topology")
        n_hidden = int(value) - spec.n_in - spec.n_out
        if n_hidden < 0:
            raise ConfigurationError(f"n_units={value} is smaller than inputs plus outputs")
        spec.n_hidden = n_hidden
    elif axis == "m_init":
        config.train.m_init = int(value)
    elif axis == "beta":
        config.train.beta = float(value)
    elif axis == "eta":
        config.train.eta = float(value)
    else:
        raise ConfigurationError(f"unknown sweep axis {axis!r}, expected one of {SWEEP_AXES}")
    return config


def _run_point(config_data: dict) -> dict:
    """Executor entry for one replicate of one sweep point"""
    config = ExperimentConfig.from_dict(config_data)
    return ExperimentRunner(config, install_signal_handlers=False).run().to_dict()


@dataclass
class SweepPoint:
    """Replicated runs at one value of the swept parameter"""
    value: Any
    summaries: list[dict] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    def _mean(self, key: str) -> Optional[float]:
        values = [s[key] for s in self.summaries if s.get(key) is not None]
        return float(np.mean(values)) if values else None

    @property
    def mean_learning_speed(self) -> Optional[float]:
        return self._mean("learning_speed")

    @property
    def mean_normalized_speed(self) -> Optional[float]:
        return self._mean("normalized_learning_speed")

    @property
    def mean_final_distance(self) -> Optional[float]:
        return self._mean("final_mean_distance")

    def average_trace(self) -> list[float]:
        return _average_traces(self.summaries)


@dataclass
class SweepReport:
    axis: str
    points: list[SweepPoint] = field(default_factory=list)

    def rows(self) -> list[list[Any]]:
        return [
            [
                p.value,
                len(p.summaries),
                len(p.failures),
                p.mean_final_distance,
                p.mean_learning_speed,
                p.mean_normalized_speed,
            ]
            for p in self.points
        ]


SWEEP_HEADER = [
    "value", "runs", "failures", "mean_final_distance",
    "mean_learning_speed", "mean_normalized_speed",
]


async def run_sweep_points(
    template: ExperimentConfig,
    axis: str,
    values: Sequence[Any],
    max_workers: int = 1,
) -> SweepReport:
    """Run every (value, replicate) concurrently; failed runs are recorded and the sweep goes on"""
    jobs: list[tuple[Any, int, ExperimentConfig]] = []
    for value in values:
        for index in range(template.replicates):
            config = apply_axis(template, axis, value)
            config.replicates = 1
            config.train.rng_seed = replicate_seed(template.train.rng_seed, index)
            if max_workers > 1:
                # Workers are already separate processes
                config.train.max_workers = 1
            config.output_dir = str(Path(template.output_dir) / f"{axis}={value}" / f"replicate_{index}")
            config.validate()
            jobs.append((value, index, config))

    executor: Executor
    if max_workers > 1:
        executor = ProcessPoolExecutor(max_workers=max_workers)
    else:
        executor = ThreadPoolExecutor(max_workers=1)

    loop = asyncio.get_running_loop()
    try:
        tasks = [loop.run_in_executor(executor, _run_point, config.to_dict()) for _, _, config in jobs]
        results = await asyncio.gather(*tasks, return_exceptions=True)
    finally:
        executor.shutdown()

    points = {value: SweepPoint(value=value) for value in values}
    for (value, index, _), result in zip(jobs, results):
        if isinstance(result, BaseException):
            logger.error(f"Sweep run {axis}={value} replicate {index} failed: {result}")
            points[value].failures.append(f"replicate {index}: {result}")
        else:
            points[value].summaries.append(result)

    return SweepReport(axis=axis, points=[points[value] for value in values])


def sweep(
    template: ExperimentConfig,
    axis: str,
    values: Sequence[Any],
    max_workers: int = 1,
) -> SweepReport:
    """Replicated runs per value of `axis`, aggregated into a summary table and mean traces"""
    if axis not in SWEEP_AXES:
        raise ConfigurationError(f"unknown sweep axis {axis!r}, expected one of {SWEEP_AXES}")
    if not values:
        raise ConfigurationError("sweep needs at least one value")

    report = asyncio.run(run_sweep_points(template, axis, values, max_workers))
    write_sweep_report(report, template.output_dir)
    return report


def write_sweep_report(report: SweepReport, output_dir: str) -> None:
    writer = ArtifactWriter(output_dir)
    writer.write_table("sweep_summary.csv", SWEEP_HEADER, report.rows())

    traces = [p.average_trace() for p in report.points]
    length = min((len(t) for t in traces if t), default=0)
    rows = [
        [k + 1] + [t[k] if len(t) > k else None for t in traces]
        for k in range(length)
    ]
    writer.write_table(
        "sweep_traces.csv",
        ["iteration"] + [f"{report.axis}={p.value}" for p in report.points],
        rows,
    )
    logger.info(f"Sweep over {report.axis}: {len(report.points)} points written to {output_dir}")
