"""
Evaluation metrics: mean distance, accuracy, confusion matrices, learning speed
"""
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from config import IntegratorConfig
from dynamics import random_initial_phases, relax
from energy import LOG_EPSILON, distance
from errors import ContractViolation, IntegrationError
from models import ModelParameters, NetworkTopology, TrainingSample
from tasks import N_CLASSES, decode_output
from trainer import TrainingLog

logger = logging.getLogger(__name__)

DEFAULT_SPEED_WINDOW = 300

# Reference test accuracies for the digits task. Keys are (architecture,
# hidden units); "ann" and "linear" are baselines with a matched number of
# parameters. Quoted for comparison only.
BENCHMARK_ACCURACIES: dict[tuple[str, int], dict[str, float]] = {
    ("layered", 20): {"parameters": 1540, "accuracy": 0.919, "ann": 0.943, "linear": 0.904},
    ("layered", 100): {"parameters": 7620, "accuracy": 0.927, "ann": 0.950, "linear": 0.903},
    ("layered", 200): {"parameters": 15220, "accuracy": 0.941, "ann": 0.950, "linear": 0.907},
    ("layered", 300): {"parameters": 22820, "accuracy": 0.937, "ann": 0.951, "linear": 0.907},
    ("all_to_all", 11): {"parameters": 1596, "accuracy": 0.933, "ann": 0.943, "linear": 0.904},
    ("all_to_all", 65): {"parameters": 7725, "accuracy": 0.927, "ann": 0.950, "linear": 0.903},
    ("all_to_all", 111): {"parameters": 15246, "accuracy": 0.924, "ann": 0.950, "linear": 0.907},
    ("all_to_all", 148): {"parameters": 22831, "accuracy": 0.929, "ann": 0.951, "linear": 0.907},
}


def benchmark_for(kind: str, n_hidden: int) -> Optional[dict[str, float]]:
    return BENCHMARK_ACCURACIES.get((kind, n_hidden))


@dataclass
class ConfusionMatrix:
    """Rows are true digits, columns predicted digits.

    Trials whose relaxation failed have no prediction; they are kept in
    `n_failed` and count towards the total as incorrect.
    """
    counts: np.ndarray = field(default_factory=lambda: np.zeros((N_CLASSES, N_CLASSES), dtype=int))
    n_failed: int = 0

    def add(self, true_label: int, predicted_label: int) -> None:
        self.counts[true_label, predicted_label] += 1

    def add_failure(self) -> None:
        self.n_failed += 1

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + self.n_failed

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else 0.0

    @property
    def empty_rows(self) -> list[int]:
        return [int(k) for k in np.flatnonzero(self.counts.sum(axis=1) == 0)]

    def normalized(self) -> np.ndarray:
        """Row-normalized view; rows without samples stay all-zero"""
        row_sums = self.counts.sum(axis=1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(row_sums > 0, self.counts / np.maximum(row_sums, 1), 0.0)

    def to_csv_block(self, iteration: int) -> str:
        lines = [f"# iteration {iteration}"]
        lines.extend(",".join(str(int(v)) for v in row) for row in self.counts)
        if self.n_failed:
            lines.append(f"# failed {self.n_failed}")
        return "\n".join(lines) + "\n"


def mean_distance(results: Sequence[tuple[np.ndarray, np.ndarray]]) -> float:
    """Average distance over (output phases, target phases) pairs"""
    if not results:
        raise ContractViolation("mean_distance needs at least one result")
    return float(np.mean([distance(output, target) for output, target in results]))


@dataclass
class EvaluationResult:
    """Outcome of relaxing every test sample once at beta=0"""
    accuracy: float
    mean_distance: float
    confusion: Optional[ConfusionMatrix]
    n_samples: int
    n_failed: int = 0
    predictions: list[int] = field(default_factory=list)
    scores: list[np.ndarray] = field(default_factory=list)

    def summary(self) -> dict:
        data = {
            "mean_distance": self.mean_distance,
            "n_samples": self.n_samples,
            "n_failed": self.n_failed,
        }
        if self.confusion is not None:
            data["accuracy"] = self.accuracy
            data["test_error"] = 1.0 - self.accuracy
        return data


def evaluate(
    params: ModelParameters,
    topology: NetworkTopology,
    samples: Sequence[TrainingSample],
    integrator: Optional[IntegratorConfig],
    rng: np.random.Generator,
    classify: bool = True,
    m_init: int = 1,
) -> EvaluationResult:
    """Clamp inputs, start hidden/output units at random, relax freely, read out.

    Each sample is relaxed from `m_init` random states and every trial counts
    separately. Failed relaxations count as incorrect with the worst-case distance.
    """
    if not samples:
        raise ContractViolation("evaluation needs at least one sample")
    if classify and topology.n_out != N_CLASSES:
        raise ContractViolation(f"classification needs {N_CLASSES} outputs, topology has {topology.n_out}")

    confusion = ConfusionMatrix() if classify else None
    distances: list[float] = []
    predictions: list[int] = []
    scores: list[np.ndarray] = []
    n_failed = 0
    outputs = topology.output_units
    trials = [sample for sample in samples for _ in range(m_init)]
    for sample in trials:
        initial = random_initial_phases(topology, sample.input_phases, rng)
        try:
            result = relax(initial, params, topology, sample.input_phases, config=integrator)
        except IntegrationError as e:
            logger.warning(f"Evaluation relaxation failed: {e}")
            n_failed += 1
            if confusion is not None and sample.label is not None:
                confusion.add_failure()
            distances.append(2.0 * topology.n_out)
            predictions.append(-1)
            scores.append(np.full(topology.n_out, np.nan))
            continue

        output_phases = result.phases[outputs]
        distances.append(distance(output_phases, sample.target_phases))
        if classify:
            predicted, sample_scores = decode_output(output_phases)
            predictions.append(predicted)
            scores.append(sample_scores)
            if confusion is not None and sample.label is not None:
                confusion.add(sample.label, predicted)

    accuracy = confusion.accuracy if confusion is not None else float("nan")
    return EvaluationResult(
        accuracy=accuracy,
        mean_distance=float(np.mean(distances)),
        confusion=confusion,
        n_samples=len(trials),
        n_failed=n_failed,
        predictions=predictions,
        scores=scores,
    )


def evaluate_accuracy(
    params: ModelParameters,
    topology: NetworkTopology,
    test_set: Sequence[TrainingSample],
    integrator: Optional[IntegratorConfig],
    rng: np.random.Generator,
) -> tuple[float, ConfusionMatrix]:
    """Test accuracy and confusion matrix of a 10-output classifier"""
    result = evaluate(params, topology, test_set, integrator, rng, classify=True)
    assert result.confusion is not None
    return result.accuracy, result.confusion


@dataclass
class LearningSpeed:
    """Negative slope of log10 <D> against iteration, raw and divided by M_init"""
    slope: float
    window: tuple[int, int]
    normalized_slope: float
    clamped_records: list[int] = field(default_factory=list)


def learning_speed(
    log: Union[TrainingLog, Sequence[float]],
    window: int = DEFAULT_SPEED_WINDOW,
    m_init: int = 1,
) -> LearningSpeed:
    """Least-squares fit of log10 <D> over the first `window` training records.

    Distances that are not positive are clamped to LOG_EPSILON and reported.
    """
    if isinstance(log, TrainingLog):
        trace = log.distance_trace()
    else:
        trace = [(k + 1, float(d)) for k, d in enumerate(log)]
    if window < 2 or len(trace) < window:
        raise ContractViolation(f"learning speed needs {window} records, log has {len(trace)}")

    iterations = np.array([it for it, _ in trace[:window]], dtype=float)
    distances = np.array([d for _, d in trace[:window]], dtype=float)
    clamped = [int(it) for it, d in zip(iterations, distances) if d <= 0]
    log_distances = np.log10(np.maximum(distances, LOG_EPSILON))

    slope = -float(np.polyfit(iterations, log_distances, 1)[0])
    return LearningSpeed(
        slope=slope,
        window=(int(iterations[0]), int(iterations[-1])),
        normalized_slope=slope / m_init,
        clamped_records=clamped,
    )
