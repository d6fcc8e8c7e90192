"""
Energy, cost and analytical gradients of the XY oscillator network

    E = -sum_{pairs} W_ij cos(phi_i - phi_j) - sum_{i not input} h_i cos(phi_i - psi_i)
    C = -sum_{i in out} ln(1 + cos(phi_i - phi_i^target))
    F = E + beta * C

The pair sum runs once over unordered pairs, which equals the usual
1/2 sum over ordered pairs. All functions are pure.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from errors import ContractViolation
from models import ModelParameters, NetworkTopology, ParameterGradients

# Lower clamp for the argument of ln in the cost; keeps the cost and its
# gradient finite when an output is antipodal to its target.
LOG_EPSILON = 1e-12


@dataclass(frozen=True)
class EnergyBreakdown:
    """Internal energy, cost and total energy F = E + beta * C"""
    internal: float
    cost: float
    beta: float

    @property
    def total(self) -> float:
        return self.internal + self.beta * self.cost


def _check_lengths(output_phases: np.ndarray, target_phases: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    output_phases = np.asarray(output_phases, dtype=float)
    target_phases = np.asarray(target_phases, dtype=float)
    if output_phases.shape != target_phases.shape:
        raise ContractViolation(
            f"output and target lengths differ: {output_phases.shape} vs {target_phases.shape}"
        )
    return output_phases, target_phases


def internal_energy(
    phases: np.ndarray, params: ModelParameters, topology: NetworkTopology
) -> float:
    """Internal energy E of the network (frequency units)"""
    phases = np.asarray(phases, dtype=float)
    i, j = topology.pairs.T
    coupling = np.dot(params.weights, np.cos(phases[i] - phases[j]))
    free = topology.free_units
    bias = np.dot(params.bias_strengths, np.cos(phases[free] - params.bias_angles))
    return float(-(coupling + bias))


def distance(output_phases: np.ndarray, target_phases: np.ndarray) -> float:
    """Cosine mismatch D = sum (1 - cos(phi - phi_target)), in [0, 2 * n_out]"""
    output_phases, target_phases = _check_lengths(output_phases, target_phases)
    return float(np.sum(1.0 - np.cos(output_phases - target_phases)))


def cost(
    output_phases: np.ndarray, target_phases: np.ndarray, epsilon: float = LOG_EPSILON
) -> float:
    """Log cost C = -sum ln(max(1 + cos(phi - phi_target), epsilon))"""
    output_phases, target_phases = _check_lengths(output_phases, target_phases)
    argument = np.maximum(1.0 + np.cos(output_phases - target_phases), epsilon)
    return float(-np.sum(np.log(argument)))


def cost_gradient(
    output_phases: np.ndarray, target_phases: np.ndarray, epsilon: float = LOG_EPSILON
) -> np.ndarray:
    """dC/dphi_i = sin(delta) / (1 + cos(delta)) per output, denominator clamped"""
    output_phases, target_phases = _check_lengths(output_phases, target_phases)
    delta = output_phases - target_phases
    return np.sin(delta) / np.maximum(1.0 + np.cos(delta), epsilon)


def energy_breakdown(
    phases: np.ndarray,
    params: ModelParameters,
    topology: NetworkTopology,
    beta: float = 0.0,
    targets: Optional[np.ndarray] = None,
) -> EnergyBreakdown:
    """E, C and F at a phase configuration (C is 0 without targets)"""
    internal = internal_energy(phases, params, topology)
    if targets is None:
        if beta != 0.0:
            raise ContractViolation("nonzero beta requires targets")
        return EnergyBreakdown(internal=internal, cost=0.0, beta=beta)
    phases = np.asarray(phases, dtype=float)
    return EnergyBreakdown(
        internal=internal,
        cost=cost(phases[topology.output_units], targets),
        beta=beta,
    )


def total_energy(
    phases: np.ndarray,
    params: ModelParameters,
    topology: NetworkTopology,
    beta: float = 0.0,
    targets: Optional[np.ndarray] = None,
) -> float:
    return energy_breakdown(phases, params, topology, beta, targets).total


def phase_gradient(
    phases: np.ndarray,
    params: ModelParameters,
    topology: NetworkTopology,
    beta: float = 0.0,
    targets: Optional[np.ndarray] = None,
) -> np.ndarray:
    """dF/dphi for every unit; input entries are zero because inputs are clamped"""
    if beta != 0.0 and targets is None:
        raise ContractViolation("nonzero beta requires targets")
    phases = np.asarray(phases, dtype=float)
    n_units = topology.n_units
    i, j = topology.pairs.T

    pair_terms = params.weights * np.sin(phases[i] - phases[j])
    gradient = (
        np.bincount(i, weights=pair_terms, minlength=n_units)
        - np.bincount(j, weights=pair_terms, minlength=n_units)
    )

    free = topology.free_units
    gradient[free] += params.bias_strengths * np.sin(phases[free] - params.bias_angles)

    if beta != 0.0 and targets is not None:
        outputs = topology.output_units
        gradient[outputs] += beta * cost_gradient(phases[outputs], targets)

    gradient[topology.input_units] = 0.0
    return gradient


def parameter_gradients(
    phases: np.ndarray, params: ModelParameters, topology: NetworkTopology
) -> ParameterGradients:
    """dE/dtheta: -cos(phi_i - phi_j), -cos(phi_i - psi_i), -h_i sin(phi_i - psi_i)"""
    phases = np.asarray(phases, dtype=float)
    i, j = topology.pairs.T
    bias_delta = phases[topology.free_units] - params.bias_angles
    return ParameterGradients(
        weights=-np.cos(phases[i] - phases[j]),
        bias_strengths=-np.cos(bias_delta),
        bias_angles=-params.bias_strengths * np.sin(bias_delta),
    )


def fidelity_identity_check(output_phases: np.ndarray, target_phases: np.ndarray) -> float:
    """Difference between the negative log overlap of per-output two-level states
    and C + n_out ln 2; zero up to rounding.

    Each output prepares cos(phi/2)|0> + sin(phi/2)|1>; the overlap with the
    target state is (1 + cos(phi - phi_target)) / 2.
    """
    output_phases, target_phases = _check_lengths(output_phases, target_phases)
    overlaps = 0.5 * (1.0 + np.cos(output_phases - target_phases))
    negative_log_fidelity = float(-np.sum(np.log(overlaps)))
    return negative_log_fidelity - (
        cost(output_phases, target_phases) + output_phases.size * np.log(2.0)
    )
