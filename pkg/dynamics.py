"""
Relaxation of the oscillator phases under the gradient flow dphi/dt = -dF/dphi

Integration uses classical RK4 with step doubling: every step is taken once
with size h and twice with size h/2, the difference estimates the local error
and controls the next step size. Input units stay clamped at the sample's
input phases throughout.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from config import IntegratorConfig
from energy import phase_gradient, total_energy
from errors import ContractViolation, IntegrationError, NumericalError
from models import ModelParameters, NetworkTopology, canonicalize_phases, circular_difference

logger = logging.getLogger(__name__)

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0
# Two half steps of a 4th order method are 2^4 - 1 times more accurate than
# their difference to the full step
RICHARDSON = 15.0

DEFAULT_CLUSTER_TOL = 1e-2


@dataclass
class Trajectory:
    """Accepted states of one relaxation with the total energy F at each"""
    times: list[float] = field(default_factory=list)
    phases: list[np.ndarray] = field(default_factory=list)
    energies: list[float] = field(default_factory=list)

    def append(self, time: float, phases: np.ndarray, energy: float) -> None:
        self.times.append(time)
        self.phases.append(phases.copy())
        self.energies.append(energy)

    def as_array(self) -> np.ndarray:
        """Rows of (time, phi_0, ..., phi_{N-1})"""
        return np.column_stack([np.array(self.times), np.array(self.phases)])


@dataclass
class EquilibriumResult:
    """Final state of a relaxation with convergence diagnostics"""
    phases: np.ndarray
    residual_norm: float
    elapsed_time: float
    step_count: int
    converged: bool
    rejected_steps: int = 0
    trajectory: Optional[Trajectory] = None


def random_initial_phases(
    topology: NetworkTopology, sample_inputs: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Inputs clamped, hidden and output phases uniform on [-pi, pi)"""
    phases = np.empty(topology.n_units)
    phases[topology.input_units] = sample_inputs
    phases[topology.free_units] = rng.uniform(-np.pi, np.pi, size=len(topology.free_units))
    return phases


def _rk4_step(flow, state: np.ndarray, h: float, k1: np.ndarray) -> np.ndarray:
    k2 = flow(state + 0.5 * h * k1)
    k3 = flow(state + 0.5 * h * k2)
    k4 = flow(state + h * k3)
    return state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def relax(
    initial: np.ndarray,
    params: ModelParameters,
    topology: NetworkTopology,
    sample_inputs: np.ndarray,
    beta: float = 0.0,
    targets: Optional[np.ndarray] = None,
    config: Optional[IntegratorConfig] = None,
    record: bool = False,
) -> EquilibriumResult:
    """Integrate the phases from `initial` towards an equilibrium of F = E + beta * C.

    Raises IntegrationError when the step size underflows `min_step` and
    NumericalError when the state becomes non-finite; both carry the last
    accepted state.
    """
    config = config or IntegratorConfig()
    config.validate()
    if beta != 0.0 and targets is None:
        raise ContractViolation("nonzero beta requires targets")

    sample_inputs = np.asarray(sample_inputs, dtype=float)
    if sample_inputs.shape != (topology.n_in,):
        raise ContractViolation(
            f"expected {topology.n_in} input phases, got {sample_inputs.shape}"
        )
    state = np.array(initial, dtype=float)
    if state.shape != (topology.n_units,):
        raise ContractViolation(f"expected {topology.n_units} phases, got {state.shape}")
    if targets is not None:
        targets = np.asarray(targets, dtype=float)
    inputs, free = topology.input_units, topology.free_units
    state[inputs] = sample_inputs

    def flow(phases: np.ndarray) -> np.ndarray:
        return -phase_gradient(phases, params, topology, beta, targets)

    def residual(velocity: np.ndarray) -> float:
        return float(np.max(np.abs(velocity[free]))) if len(free) else 0.0

    trajectory = Trajectory() if record else None
    if trajectory is not None:
        trajectory.append(0.0, state, total_energy(state, params, topology, beta, targets))

    k1 = flow(state)
    residual_norm = residual(k1)
    t, h = 0.0, config.initial_step
    steps = rejected = 0

    while t < config.horizon:
        if config.early_exit and residual_norm < config.equilibrium_grad_tol:
            break
        h_step = min(h, config.horizon - t)

        full = _rk4_step(flow, state, h_step, k1)
        half = _rk4_step(flow, state, 0.5 * h_step, k1)
        half = _rk4_step(flow, half, 0.5 * h_step, flow(half))
        if not (np.all(np.isfinite(full)) and np.all(np.isfinite(half))):
            raise NumericalError("non-finite phases", state.copy(), t, steps)

        scale = config.abs_tol + config.rel_tol * np.maximum(np.abs(state), np.abs(half))
        error_ratio = float(np.max(np.abs(half - full) / RICHARDSON / scale))

        if error_ratio <= 1.0:
            t += h_step
            steps += 1
            state = half
            state[inputs] = sample_inputs
            k1 = flow(state)
            residual_norm = residual(k1)
            if trajectory is not None:
                trajectory.append(t, state, total_energy(state, params, topology, beta, targets))
        else:
            rejected += 1

        if error_ratio == 0.0:
            factor = MAX_FACTOR
        else:
            factor = min(MAX_FACTOR, max(MIN_FACTOR, SAFETY * error_ratio ** -0.2))
        h = min(h_step * factor, config.max_step)
        if error_ratio > 1.0 and h < config.min_step:
            raise IntegrationError("step size underflow", state.copy(), t, steps)

    return EquilibriumResult(
        phases=state,
        residual_norm=residual_norm,
        elapsed_time=t,
        step_count=steps,
        converged=residual_norm < config.equilibrium_grad_tol,
        rejected_steps=rejected,
        trajectory=trajectory,
    )


@dataclass
class EquilibriumCluster:
    """Distinct equilibrium found by random restarts, with its basin count"""
    representative: np.ndarray
    count: int
    energy: float


@dataclass
class EquilibriumSurvey:
    """Result of enumerating equilibria from random initial states"""
    clusters: list[EquilibriumCluster]
    n_trials: int
    n_converged: int
    n_unconverged: int = 0
    n_failed: int = 0

    def as_pairs(self) -> list[tuple[np.ndarray, int]]:
        return [(c.representative, c.count) for c in self.clusters]

    def to_dict(self, topology: NetworkTopology) -> dict:
        return {
            "n_trials": self.n_trials,
            "n_converged": self.n_converged,
            "n_unconverged": self.n_unconverged,
            "n_failed": self.n_failed,
            "clusters": [
                {
                    "count": c.count,
                    "energy": c.energy,
                    "output_phases": c.representative[topology.output_units].tolist(),
                    "hidden_phases": c.representative[topology.hidden_units].tolist(),
                }
                for c in self.clusters
            ],
        }


def enumerate_equilibria(
    params: ModelParameters,
    topology: NetworkTopology,
    sample_inputs: np.ndarray,
    n_trials: int = 100,
    cluster_tol: float = DEFAULT_CLUSTER_TOL,
    rng_seed: Union[int, np.random.Generator] = 0,
    config: Optional[IntegratorConfig] = None,
) -> EquilibriumSurvey:
    """Relax from `n_trials` random states at beta=0 and group the converged
    results whose phases agree within `cluster_tol` (circular max-norm)."""
    if n_trials < 1:
        raise ContractViolation("n_trials must be at least 1")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)

    clusters: list[EquilibriumCluster] = []
    n_converged = n_unconverged = n_failed = 0
    for trial in range(n_trials):
        initial = random_initial_phases(topology, sample_inputs, rng)
        try:
            result = relax(initial, params, topology, sample_inputs, config=config)
        except IntegrationError as e:
            logger.debug(f"Trial {trial} skipped: {e}")
            n_failed += 1
            continue
        if not result.converged:
            n_unconverged += 1
            continue
        n_converged += 1

        phases = canonicalize_phases(result.phases)
        for cluster in clusters:
            if np.max(np.abs(circular_difference(phases, cluster.representative))) < cluster_tol:
                cluster.count += 1
                break
        else:
            clusters.append(EquilibriumCluster(
                representative=phases,
                count=1,
                energy=total_energy(phases, params, topology),
            ))

    if n_failed or n_unconverged:
        logger.info(
            f"Equilibrium survey: {n_failed} failed and {n_unconverged} unconverged "
            f"of {n_trials} trials"
        )
    clusters.sort(key=lambda c: -c.count)
    return EquilibriumSurvey(
        clusters=clusters,
        n_trials=n_trials,
        n_converged=n_converged,
        n_unconverged=n_unconverged,
        n_failed=n_failed,
    )
