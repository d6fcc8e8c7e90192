"""
Exceptions raised by the oscillator network trainer
"""
from typing import Optional

import numpy as np


class OscillatorError(Exception):
    """Base class for all errors raised by this package"""


class ConfigurationError(OscillatorError, ValueError):
    """Invalid topology, training or experiment configuration"""


class ContractViolation(OscillatorError, ValueError):
    """A function was called with arguments violating its preconditions"""


class ValidationError(OscillatorError, ValueError):
    """Input data outside its allowed range (pixels, labels, phases)"""


class DatasetParseError(OscillatorError, ValueError):
    """A dataset row could not be parsed"""

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.message = message
        self.line_number = line_number

    def __reduce__(self):
        return type(self), (self.message, self.line_number)


class IntegrationError(OscillatorError, RuntimeError):
    """Relaxation could not continue; carries the last accepted state"""

    def __init__(self, message: str, phases: np.ndarray, time: float, step_count: int = 0):
        super().__init__(f"{message} (t={time:.6g}, steps={step_count})")
        self.message = message
        self.phases = phases
        self.time = time
        self.step_count = step_count

    def __reduce__(self):
        return type(self), (self.message, self.phases, self.time, self.step_count)


class NumericalError(IntegrationError):
    """The integrated state became non-finite"""


class SampleSkipError(OscillatorError):
    """A free or nudge relaxation failed, so the sample contributes nothing"""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage} relaxation failed: {cause}")
        self.stage = stage
        self.cause = cause

    def __reduce__(self):
        return type(self), (self.stage, self.cause)


class IterationError(OscillatorError):
    """Every relaxation of a training iteration failed"""

    def __init__(self, message: str, failures: int, iteration: Optional[int] = None):
        super().__init__(message)
        self.failures = failures
        self.iteration = iteration

    def __reduce__(self):
        return type(self), (str(self), self.failures, self.iteration)


class TrainingHaltedError(OscillatorError):
    """Training stopped after too many consecutive failed iterations"""

    def __init__(self, message: str, iteration: int):
        super().__init__(message)
        self.iteration = iteration

    def __reduce__(self):
        return type(self), (str(self), self.iteration)
