"""
Equilibrium Propagation training of oscillator networks

One EP step relaxes a sample freely (beta=0), then relaxes again from that
free equilibrium with the cost switched on (beta>0). The difference of dE/dtheta
between the two equilibria, divided by beta, estimates dC/dtheta. Updates
average these estimates over the batch and over M_init random initial states.
"""
import logging
import time
from concurrent.futures import Executor, ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Protocol, Union

import numpy as np

from config import IntegratorConfig, TrainConfig
from dynamics import EquilibriumResult, random_initial_phases, relax
from energy import cost, distance, parameter_gradients
from errors import ContractViolation, IntegrationError, IterationError, SampleSkipError, TrainingHaltedError
from models import ModelParameters, NetworkTopology, ParameterGradients, TrainingSample

logger = logging.getLogger(__name__)


class InitScheme(Enum):
    """Parameter initialization schemes"""
    # W ~ N(0, 1), h ~ U[-0.5, 0.5), psi ~ U[-pi, pi)
    XOR = "xor"
    # W ~ N(0, 1/sqrt(N)) all-to-all or N(0, 1/sqrt(N_i + N_i+1)) layered; h = 0
    DIGITS = "digits"


def init_parameters(
    topology: NetworkTopology,
    scheme: Union[InitScheme, str],
    rng: np.random.Generator,
) -> ModelParameters:
    """Draw initial parameters; the second argument of N(0, s) is the standard deviation"""
    scheme = InitScheme(scheme)
    n_free = len(topology.free_units)

    if scheme is InitScheme.XOR:
        weights = rng.standard_normal(topology.n_pairs)
        strengths = rng.uniform(-0.5, 0.5, size=n_free)
    else:
        if topology.layer_sizes is not None:
            sizes = np.array(topology.layer_sizes)
            lower = topology.unit_layers()[topology.pairs[:, 0]]
            std = 1.0 / np.sqrt(sizes[lower] + sizes[lower + 1])
        else:
            std = np.full(topology.n_pairs, 1.0 / np.sqrt(topology.n_units))
        weights = rng.normal(0.0, std)
        strengths = np.zeros(n_free)

    angles = rng.uniform(-np.pi, np.pi, size=n_free)
    return ModelParameters(weights=weights, bias_strengths=strengths, bias_angles=angles)


@dataclass
class EpStepResult:
    """Free and nudge equilibria of one (sample, initial state) pair"""
    free: EquilibriumResult
    nudge: EquilibriumResult
    contribution: ParameterGradients


def ep_step_single(
    sample: TrainingSample,
    init: np.ndarray,
    params: ModelParameters,
    topology: NetworkTopology,
    beta: float,
    integrator: Optional[IntegratorConfig] = None,
) -> EpStepResult:
    """Free phase, nudge phase from the free equilibrium, and (dE|nudge - dE|free) / beta"""
    init = np.asarray(init, dtype=float)
    if not np.array_equal(init[topology.input_units], sample.input_phases):
        raise ContractViolation("initial state must carry the sample's input phases")

    try:
        free = relax(init, params, topology, sample.input_phases, config=integrator)
    except IntegrationError as e:
        raise SampleSkipError("free", e) from e
    try:
        nudge = relax(
            free.phases, params, topology, sample.input_phases,
            beta=beta, targets=sample.target_phases, config=integrator,
        )
    except IntegrationError as e:
        raise SampleSkipError("nudge", e) from e

    contribution = (
        parameter_gradients(nudge.phases, params, topology)
        - parameter_gradients(free.phases, params, topology)
    ).scaled(1.0 / beta)
    return EpStepResult(free=free, nudge=nudge, contribution=contribution)


@dataclass
class BatchDiagnostics:
    """Counts and free-equilibrium statistics of one update"""
    n_relaxations: int
    n_failed: int = 0
    n_unconverged: int = 0
    mean_distance: float = float("nan")
    mean_cost: float = float("nan")


@dataclass
class EpGradientEstimate:
    """dC/dtheta averaged over successful (sample, init) pairs"""
    gradients: ParameterGradients
    diagnostics: BatchDiagnostics


GridItem = tuple[TrainingSample, np.ndarray, ModelParameters, NetworkTopology, float, IntegratorConfig]


def _run_grid_item(item: GridItem) -> Union[EpStepResult, SampleSkipError]:
    """Worker entry; failures come back as values so the grid keeps its order"""
    sample, init, params, topology, beta, integrator = item
    try:
        return ep_step_single(sample, init, params, topology, beta, integrator)
    except SampleSkipError as e:
        return e


def estimate_gradient(
    batch: list[TrainingSample],
    params: ModelParameters,
    topology: NetworkTopology,
    config: TrainConfig,
    rng: np.random.Generator,
    executor: Optional[Executor] = None,
) -> EpGradientEstimate:
    """Average EP contributions over the batch x M_init grid.

    Initial states are drawn up front in (sample, init) order and results are
    summed in the same order, so the estimate does not depend on the executor.
    """
    items: list[GridItem] = []
    for sample in batch:
        sample.check_compatible(topology)
        for _ in range(config.m_init):
            init = random_initial_phases(topology, sample.input_phases, rng)
            items.append((sample, init, params, topology, config.beta, config.integrator))

    if executor is not None:
        results = list(executor.map(_run_grid_item, items, chunksize=max(1, len(items) // 32)))
    else:
        results = [_run_grid_item(item) for item in items]

    total = ParameterGradients.zeros(topology)
    distances: list[float] = []
    costs: list[float] = []
    diagnostics = BatchDiagnostics(n_relaxations=len(items))
    outputs = topology.output_units
    for (sample, *_), result in zip(items, results):
        if isinstance(result, SampleSkipError):
            diagnostics.n_failed += 1
            logger.warning(f"Sample skipped: {result}")
            continue
        total = total + result.contribution
        diagnostics.n_unconverged += int(not result.free.converged) + int(not result.nudge.converged)
        distances.append(distance(result.free.phases[outputs], sample.target_phases))
        costs.append(cost(result.free.phases[outputs], sample.target_phases))

    if not distances:
        raise IterationError(
            f"all {len(items)} relaxations failed", failures=diagnostics.n_failed
        )
    diagnostics.mean_distance = float(np.mean(distances))
    diagnostics.mean_cost = float(np.mean(costs))
    return EpGradientEstimate(gradients=total.scaled(1.0 / len(distances)), diagnostics=diagnostics)


def ep_update(
    batch: list[TrainingSample],
    params: ModelParameters,
    topology: NetworkTopology,
    config: TrainConfig,
    rng: np.random.Generator,
    executor: Optional[Executor] = None,
) -> tuple[ModelParameters, EpGradientEstimate]:
    """theta <- theta - eta * <(dE|nudge - dE|free) / beta>"""
    if len(batch) != config.m_data:
        raise ContractViolation(f"batch has {len(batch)} samples, expected m_data={config.m_data}")
    estimate = estimate_gradient(batch, params, topology, config, rng, executor)
    return params.updated(estimate.gradients, config.eta), estimate


class TrainingSource(Protocol):
    """Anything that can hand out a training batch"""

    def training_batch(self, rng: np.random.Generator) -> list[TrainingSample]:
        ...


@dataclass
class IterationRecord:
    """One line of the training log"""
    iteration: int
    mean_distance: Optional[float] = None
    mean_cost: Optional[float] = None
    n_relaxations: int = 0
    n_failed: int = 0
    n_unconverged: int = 0
    failed: bool = False
    evaluation: Optional[dict] = None
    wall_time: float = 0.0

    def to_dict(self, include_timing: bool = False) -> dict:
        """Wall time is left out by default so seeded logs are reproducible byte for byte"""
        data = {
            "iteration": self.iteration,
            "mean_distance": self.mean_distance,
            "mean_cost": self.mean_cost,
            "n_relaxations": self.n_relaxations,
            "n_failed": self.n_failed,
            "n_unconverged": self.n_unconverged,
            "failed": self.failed,
            "evaluation": self.evaluation,
        }
        if include_timing:
            data["wall_time"] = self.wall_time
        return data


@dataclass
class TrainingLog:
    """Records of a training run and the final parameters"""
    records: list[IterationRecord] = field(default_factory=list)
    params: Optional[ModelParameters] = None
    stopped_early: bool = False

    def distance_trace(self) -> list[tuple[int, float]]:
        return [
            (r.iteration, r.mean_distance)
            for r in self.records
            if r.mean_distance is not None
        ]

    def evaluations(self) -> list[tuple[int, dict]]:
        return [(r.iteration, r.evaluation) for r in self.records if r.evaluation is not None]


@dataclass
class TrainingCallbacks:
    """Hooks invoked by `train`"""
    # (iteration, params, evaluation rng) -> metrics dict stored on the record
    evaluate: Optional[Callable[[int, ModelParameters, np.random.Generator], dict]] = None
    # Called after every record, including the initial evaluation
    on_record: Optional[Callable[[IterationRecord, ModelParameters], None]] = None
    # Polled before each iteration; True stops training gracefully
    should_stop: Optional[Callable[[], bool]] = None


def rng_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """Independent (init, training, evaluation) generators from one seed"""
    init_seq, train_seq, eval_seq = np.random.SeedSequence(seed).spawn(3)
    return (
        np.random.default_rng(init_seq),
        np.random.default_rng(train_seq),
        np.random.default_rng(eval_seq),
    )


def _is_eval_iteration(iteration: int, config: TrainConfig) -> bool:
    return (
        iteration % config.eval_every == 0
        or iteration in config.extra_eval_iterations
        or iteration == config.n_iterations
    )


def train(
    task: TrainingSource,
    topology: NetworkTopology,
    config: TrainConfig,
    callbacks: Optional[TrainingCallbacks] = None,
    params: Optional[ModelParameters] = None,
    init_scheme: Union[InitScheme, str] = InitScheme.XOR,
) -> TrainingLog:
    """Run `n_iterations` EP updates, evaluating every `eval_every` iterations.

    Raises TrainingHaltedError after more than `max_consecutive_failures`
    iterations in a row in which every relaxation failed.
    """
    config.validate()
    callbacks = callbacks or TrainingCallbacks()
    init_rng, train_rng, eval_rng = rng_streams(config.rng_seed)
    if params is None:
        params = init_parameters(topology, init_scheme, init_rng)
    params.check_compatible(topology)

    log = TrainingLog(params=params)

    def emit(record: IterationRecord) -> None:
        log.records.append(record)
        log.params = params
        if callbacks.on_record:
            callbacks.on_record(record, params)

    initial = IterationRecord(iteration=0)
    if callbacks.evaluate:
        initial.evaluation = callbacks.evaluate(0, params, eval_rng)
    emit(initial)

    executor = ProcessPoolExecutor(max_workers=config.max_workers) if config.max_workers > 1 else None
    consecutive_failures = 0
    try:
        for iteration in range(1, config.n_iterations + 1):
            if callbacks.should_stop and callbacks.should_stop():
                logger.info(f"Stop requested, ending training before iteration {iteration}")
                log.stopped_early = True
                break

            start = time.perf_counter()
            batch = task.training_batch(train_rng)
            try:
                params, estimate = ep_update(batch, params, topology, config, train_rng, executor)
            except IterationError as e:
                consecutive_failures += 1
                logger.error(f"Iteration {iteration} failed: {e}")
                record = IterationRecord(
                    iteration=iteration,
                    n_relaxations=len(batch) * config.m_init,
                    n_failed=e.failures,
                    failed=True,
                    wall_time=time.perf_counter() - start,
                )
                emit(record)
                if consecutive_failures > config.max_consecutive_failures:
                    raise TrainingHaltedError(
                        f"{consecutive_failures} consecutive iterations failed", iteration
                    ) from e
                continue

            consecutive_failures = 0
            diagnostics = estimate.diagnostics
            record = IterationRecord(
                iteration=iteration,
                mean_distance=diagnostics.mean_distance,
                mean_cost=diagnostics.mean_cost,
                n_relaxations=diagnostics.n_relaxations,
                n_failed=diagnostics.n_failed,
                n_unconverged=diagnostics.n_unconverged,
            )
            if callbacks.evaluate and _is_eval_iteration(iteration, config):
                record.evaluation = callbacks.evaluate(iteration, params, eval_rng)
            record.wall_time = time.perf_counter() - start
            logger.info(
                f"Iteration {iteration}: <D>={diagnostics.mean_distance:.6f} "
                f"failed={diagnostics.n_failed} unconverged={diagnostics.n_unconverged} "
                f"({record.wall_time:.2f}s)"
            )
            emit(record)
    finally:
        if executor is not None:
            executor.shutdown()

    log.params = params
    return log
