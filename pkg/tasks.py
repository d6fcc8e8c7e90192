"""
Task definitions: XOR and the 8x8 handwritten digits

Phases encode values: True = pi/2 and False = -pi/2 for XOR; pixel values
0..16 map linearly onto [-pi/2, pi/2]; digit labels are one-hot with pi/2 on
the labelled output and -pi/2 elsewhere.
"""
import csv
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional

import numpy as np

from errors import ConfigurationError, DatasetParseError, ValidationError
from models import TrainingSample

logger = logging.getLogger(__name__)

TRUE_PHASE = np.pi / 2
FALSE_PHASE = -np.pi / 2

N_PIXELS = 64
MAX_PIXEL = 16
N_CLASSES = 10
TRAIN_PER_DIGIT = 100
TEST_PER_DIGIT = 70


def encode_input(pixels: np.ndarray) -> np.ndarray:
    """phi_k = pi * p_k / 16 - pi / 2"""
    pixels = np.asarray(pixels)
    if np.any(pixels < 0) or np.any(pixels > MAX_PIXEL):
        raise ValidationError(f"pixel values must lie in [0, {MAX_PIXEL}]")
    return np.pi * (pixels.astype(float) / MAX_PIXEL) - np.pi / 2


def encode_target(label: int) -> np.ndarray:
    """One-hot phase vector: pi/2 at `label`, -pi/2 elsewhere"""
    if not 0 <= int(label) < N_CLASSES or int(label) != label:
        raise ValidationError(f"label must be an integer in [0, {N_CLASSES - 1}], got {label}")
    target = np.full(N_CLASSES, FALSE_PHASE)
    target[int(label)] = TRUE_PHASE
    return target


def decode_output(output_phases: np.ndarray) -> tuple[int, np.ndarray]:
    """Scores 1 + sin(phi_i) (unnormalized) and their argmax; ties go to the lowest index"""
    scores = 1.0 + np.sin(np.asarray(output_phases, dtype=float))
    return int(np.argmax(scores)), scores


@dataclass(frozen=True, eq=False)
class DigitsDataset:
    """Images, labels and the per-digit train/test split (indices into images)"""
    images: np.ndarray
    labels: np.ndarray
    train_indices: np.ndarray
    test_indices: np.ndarray

    @property
    def n_records(self) -> int:
        return len(self.labels)

    def train_samples(self) -> list[TrainingSample]:
        return [self.sample(i) for i in self.train_indices]

    def test_samples(self) -> list[TrainingSample]:
        return [self.sample(i) for i in self.test_indices]

    def sample(self, index: int) -> TrainingSample:
        label = int(self.labels[index])
        return TrainingSample(
            input_phases=encode_input(self.images[index]),
            target_phases=encode_target(label),
            label=label,
        )


def _parse_row(row: list[str], line_number: int) -> tuple[list[int], int]:
    if len(row) != N_PIXELS + 1:
        raise DatasetParseError(
            f"expected {N_PIXELS + 1} fields, got {len(row)}", line_number
        )
    try:
        values = [int(field.strip()) for field in row]
    except ValueError as e:
        raise DatasetParseError(f"non-integer field: {e}", line_number) from e

    pixels, label = values[:N_PIXELS], values[N_PIXELS]
    if any(p < 0 or p > MAX_PIXEL for p in pixels):
        raise ValidationError(f"line {line_number}: pixel outside [0, {MAX_PIXEL}]")
    if not 0 <= label < N_CLASSES:
        raise ValidationError(f"line {line_number}: label {label} outside [0, {N_CLASSES - 1}]")
    return pixels, label


def load_digits(
    path: str,
    train_per_digit: int = TRAIN_PER_DIGIT,
    test_per_digit: int = TEST_PER_DIGIT,
) -> DigitsDataset:
    """Parse the UCI optdigits layout (64 pixels then the label, comma separated).

    The split takes, per digit and in file order, the first `train_per_digit`
    records for training and the next `test_per_digit` for testing.
    """
    images: list[list[int]] = []
    labels: list[int] = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        for line_number, row in enumerate(csv.reader(f), start=1):
            if not row or all(not field.strip() for field in row):
                continue
            pixels, label = _parse_row(row, line_number)
            images.append(pixels)
            labels.append(label)

    label_array = np.array(labels, dtype=int)
    train: list[int] = []
    test: list[int] = []
    for digit in range(N_CLASSES):
        positions = np.flatnonzero(label_array == digit)
        if len(positions) < train_per_digit + test_per_digit:
            logger.warning(
                f"Digit {digit} has only {len(positions)} records; split truncated to "
                f"{min(len(positions), train_per_digit)} train / "
                f"{max(0, min(len(positions) - train_per_digit, test_per_digit))} test"
            )
        train.extend(positions[:train_per_digit])
        test.extend(positions[train_per_digit:train_per_digit + test_per_digit])

    logger.info(
        f"Loaded {len(labels)} digit records from {path}: "
        f"{len(train)} train, {len(test)} test"
    )
    return DigitsDataset(
        images=np.array(images, dtype=int).reshape(-1, N_PIXELS),
        labels=label_array,
        train_indices=np.array(sorted(train), dtype=int),
        test_indices=np.array(sorted(test), dtype=int),
    )


def sample_batch(
    dataset: DigitsDataset, per_digit: int, rng: np.random.Generator
) -> list[TrainingSample]:
    """`per_digit` training records of every digit, drawn without replacement"""
    train_labels = dataset.labels[dataset.train_indices]
    batch: list[TrainingSample] = []
    for digit in range(N_CLASSES):
        candidates = dataset.train_indices[train_labels == digit]
        if per_digit > len(candidates):
            raise ConfigurationError(
                f"per_digit={per_digit} exceeds the {len(candidates)} training records of digit {digit}"
            )
        chosen = rng.choice(candidates, size=per_digit, replace=False)
        batch.extend(dataset.sample(i) for i in chosen)
    return batch


class BaseTask(ABC):
    """Base class for training tasks"""

    name: str = ""
    n_inputs: int = 0
    n_outputs: int = 0

    @property
    @abstractmethod
    def batch_size(self) -> int:
        """Samples per training batch (M_data)"""

    @abstractmethod
    def training_batch(self, rng: np.random.Generator) -> list[TrainingSample]:
        """Samples for one training iteration"""

    @abstractmethod
    def test_samples(self) -> list[TrainingSample]:
        """Samples used for evaluation"""

    @property
    def is_classification(self) -> bool:
        return False


class XorTask(BaseTask):
    """The four XOR input pairs; output is True iff the inputs differ"""

    name = "xor"
    n_inputs = 2
    n_outputs = 1

    def __init__(self):
        self.samples = [
            TrainingSample(
                input_phases=np.array([a, b]),
                target_phases=np.array([TRUE_PHASE if a != b else FALSE_PHASE]),
            )
            for a in (FALSE_PHASE, TRUE_PHASE)
            for b in (FALSE_PHASE, TRUE_PHASE)
        ]

    @property
    def batch_size(self) -> int:
        return len(self.samples)

    def training_batch(self, rng: np.random.Generator) -> list[TrainingSample]:
        # Every iteration sees all four pairs
        return list(self.samples)

    def test_samples(self) -> list[TrainingSample]:
        return list(self.samples)


class DigitsTask(BaseTask):
    """Class-balanced batches from the digits training split"""

    name = "digits"
    n_inputs = N_PIXELS
    n_outputs = N_CLASSES

    def __init__(self, dataset: DigitsDataset, per_digit: int = 30):
        self.dataset = dataset
        self.per_digit = per_digit
        self._test = dataset.test_samples()

    @property
    def batch_size(self) -> int:
        return N_CLASSES * self.per_digit

    @property
    def is_classification(self) -> bool:
        return True

    def training_batch(self, rng: np.random.Generator) -> list[TrainingSample]:
        return sample_batch(self.dataset, self.per_digit, rng)

    def test_samples(self) -> list[TrainingSample]:
        return list(self._test)


def get_task(name: str, dataset_path: Optional[str] = None, per_digit: int = 30) -> BaseTask:
    """Get the task for a task name"""
    if name == "xor":
        return XorTask()
    if name == "digits":
        if not dataset_path:
            raise ConfigurationError("digits task requires a dataset path")
        return DigitsTask(load_digits(dataset_path), per_digit=per_digit)
    raise ConfigurationError(f"unknown task {name!r}")
