"""
Data models for oscillator networks: topology, parameters, samples and checkpoints

Unit indexing is fixed: inputs occupy [0, N_in), then hidden units, then
outputs. Couplings are stored once per unordered pair (i, j) with i < j, so
W_ij = W_ji by construction. Bias entries exist only for non-input units and
follow the order of `NetworkTopology.free_units`.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional
import json

import numpy as np

from errors import ConfigurationError, ContractViolation

CHECKPOINT_FORMAT = "xy-ep-checkpoint"
CHECKPOINT_VERSION = 1

# Phase vectors are plain float64 arrays of length N (radians)
PhaseConfiguration = np.ndarray


class UnitRole(Enum):
    """Role of an oscillator in the network"""
    INPUT = "input"
    HIDDEN = "hidden"
    OUTPUT = "output"


def canonicalize_phases(phases: np.ndarray) -> np.ndarray:
    """Map phases to their representative in [-pi, pi)"""
    return np.mod(np.asarray(phases, dtype=float) + np.pi, 2 * np.pi) - np.pi


def circular_difference(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Signed shortest angular difference a - b in [-pi, pi)"""
    return canonicalize_phases(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))


def _readonly(values: Any, dtype: type = float) -> np.ndarray:
    array = np.array(values, dtype=dtype)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class NetworkTopology:
    """Unit roles plus the set of trainable couplings"""
    roles: tuple[UnitRole, ...]
    pairs: np.ndarray
    kind: str = "custom"
    layer_sizes: Optional[tuple[int, ...]] = None

    input_units: np.ndarray = field(init=False, repr=False)
    hidden_units: np.ndarray = field(init=False, repr=False)
    output_units: np.ndarray = field(init=False, repr=False)
    free_units: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        roles = tuple(UnitRole(r) for r in self.roles)
        if not roles:
            raise ConfigurationError("topology needs at least one unit")
        order = {UnitRole.INPUT: 0, UnitRole.HIDDEN: 1, UnitRole.OUTPUT: 2}
        ranks = [order[r] for r in roles]
        if ranks != sorted(ranks):
            raise ConfigurationError("units must be ordered inputs, hidden, outputs")

        role_array = np.array([order[r] for r in roles])
        object.__setattr__(self, "roles", roles)
        object.__setattr__(self, "input_units", _readonly(np.flatnonzero(role_array == 0), int))
        object.__setattr__(self, "hidden_units", _readonly(np.flatnonzero(role_array == 1), int))
        object.__setattr__(self, "output_units", _readonly(np.flatnonzero(role_array == 2), int))
        object.__setattr__(self, "free_units", _readonly(np.flatnonzero(role_array != 0), int))

        pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        pairs = np.sort(pairs, axis=1)
        if len(pairs):
            pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
            if np.any(pairs[:, 0] == pairs[:, 1]):
                raise ConfigurationError("self-couplings are not allowed")
            if pairs.min() < 0 or pairs.max() >= len(roles):
                raise ConfigurationError("coupling endpoint out of range")
            if np.any(np.all(np.diff(pairs, axis=0) == 0, axis=1)):
                raise ConfigurationError("duplicate coupling pair")
            n_in = len(self.input_units)
            if np.any(pairs[:, 1] < n_in):
                raise ConfigurationError("input-input couplings are not trainable")
        pairs.setflags(write=False)
        object.__setattr__(self, "pairs", pairs)
        if self.layer_sizes is not None:
            object.__setattr__(self, "layer_sizes", tuple(int(n) for n in self.layer_sizes))

    @property
    def n_units(self) -> int:
        return len(self.roles)

    @property
    def n_in(self) -> int:
        return len(self.input_units)

    @property
    def n_hidden(self) -> int:
        return len(self.hidden_units)

    @property
    def n_out(self) -> int:
        return len(self.output_units)

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    def pair_index(self, i: int, j: int) -> int:
        """Position of the unordered pair {i, j} in `pairs`"""
        lo, hi = min(i, j), max(i, j)
        pos = int(np.searchsorted(self.pairs[:, 0], lo))
        while pos < len(self.pairs) and self.pairs[pos, 0] == lo:
            if self.pairs[pos, 1] == hi:
                return pos
            pos += 1
        raise KeyError(f"no coupling between units {i} and {j}")

    def unit_layers(self) -> np.ndarray:
        """Layer index of every unit (layered topologies only)"""
        if self.layer_sizes is None:
            raise ContractViolation("topology is not layered")
        return np.repeat(np.arange(len(self.layer_sizes)), self.layer_sizes)

    def describe(self) -> str:
        if self.layer_sizes is not None:
            return f"layered {','.join(str(n) for n in self.layer_sizes)}"
        return f"{self.kind} N={self.n_units} ({self.n_in} in, {self.n_hidden} hidden, {self.n_out} out)"


def make_all_to_all(n_in: int, n_hidden: int, n_out: int) -> NetworkTopology:
    """Every pair coupled except input-input pairs"""
    if n_in < 1 or n_out < 1:
        raise ConfigurationError("all-to-all topology needs at least one input and one output")
    if n_hidden < 0:
        raise ConfigurationError("n_hidden must be non-negative")
    n_units = n_in + n_hidden + n_out
    i, j = np.triu_indices(n_units, k=1)
    keep = j >= n_in
    roles = (
        [UnitRole.INPUT] * n_in + [UnitRole.HIDDEN] * n_hidden + [UnitRole.OUTPUT] * n_out
    )
    return NetworkTopology(
        roles=tuple(roles),
        pairs=np.column_stack([i[keep], j[keep]]),
        kind="all_to_all",
    )


def make_layered(layer_sizes: list[int]) -> NetworkTopology:
    """Couplings only between consecutive layers; first layer inputs, last outputs"""
    sizes = [int(n) for n in layer_sizes]
    if len(sizes) < 2:
        raise ConfigurationError("layered topology needs at least 2 layers")
    if any(n < 1 for n in sizes):
        raise ConfigurationError(f"layer sizes must be positive, got {sizes}")

    offsets = np.concatenate([[0], np.cumsum(sizes)])
    blocks = []
    for k in range(len(sizes) - 1):
        lower = np.arange(offsets[k], offsets[k + 1])
        upper = np.arange(offsets[k + 1], offsets[k + 2])
        a, b = np.meshgrid(lower, upper, indexing="ij")
        blocks.append(np.column_stack([a.ravel(), b.ravel()]))

    roles = (
        [UnitRole.INPUT] * sizes[0]
        + [UnitRole.HIDDEN] * sum(sizes[1:-1])
        + [UnitRole.OUTPUT] * sizes[-1]
    )
    return NetworkTopology(
        roles=tuple(roles),
        pairs=np.concatenate(blocks),
        kind="layered",
        layer_sizes=tuple(sizes),
    )


def parameter_count(topology: NetworkTopology) -> int:
    """Couplings plus a (strength, angle) bias pair per non-input unit"""
    return topology.n_pairs + 2 * (topology.n_units - topology.n_in)


def all_to_all_parameter_count(n_units: int, n_in: int) -> int:
    return n_units * (n_units - 1) // 2 - n_in * (n_in - 1) // 2 + 2 * (n_units - n_in)


def layered_parameter_count(layer_sizes: list[int]) -> int:
    weights = sum(a * b for a, b in zip(layer_sizes[:-1], layer_sizes[1:]))
    return weights + 2 * sum(layer_sizes[1:])


@dataclass(frozen=True, eq=False)
class ModelParameters:
    """Trainable set: couplings W per pair, bias strengths h and angles psi per non-input unit"""
    weights: np.ndarray
    bias_strengths: np.ndarray
    bias_angles: np.ndarray

    def __post_init__(self):
        for name in ("weights", "bias_strengths", "bias_angles"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))
        if self.bias_strengths.shape != self.bias_angles.shape:
            raise ContractViolation("bias strengths and angles must have the same length")

    @property
    def size(self) -> int:
        return self.weights.size + self.bias_strengths.size + self.bias_angles.size

    def check_compatible(self, topology: NetworkTopology) -> None:
        if self.weights.shape != (topology.n_pairs,):
            raise ContractViolation(
                f"expected {topology.n_pairs} weights, got {self.weights.shape}"
            )
        n_free = len(topology.free_units)
        if self.bias_strengths.shape != (n_free,):
            raise ContractViolation(f"expected {n_free} bias entries, got {self.bias_strengths.shape}")

    def weight(self, topology: NetworkTopology, i: int, j: int) -> float:
        """Coupling W_ij; identical to W_ji"""
        return float(self.weights[topology.pair_index(i, j)])

    def coupling_matrix(self, topology: NetworkTopology) -> np.ndarray:
        """Dense symmetric N x N coupling matrix with zero diagonal"""
        matrix = np.zeros((topology.n_units, topology.n_units))
        i, j = topology.pairs.T
        matrix[i, j] = self.weights
        matrix[j, i] = self.weights
        return matrix

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.weights, self.bias_strengths, self.bias_angles])

    @classmethod
    def from_vector(cls, topology: NetworkTopology, vector: np.ndarray) -> "ModelParameters":
        n_pairs, n_free = topology.n_pairs, len(topology.free_units)
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (n_pairs + 2 * n_free,):
            raise ContractViolation(f"parameter vector has wrong length {vector.shape}")
        return cls(
            weights=vector[:n_pairs],
            bias_strengths=vector[n_pairs:n_pairs + n_free],
            bias_angles=vector[n_pairs + n_free:],
        )

    def updated(self, gradients: "ParameterGradients", eta: float) -> "ModelParameters":
        """Plain gradient step theta - eta * g"""
        return ModelParameters(
            weights=self.weights - eta * gradients.weights,
            bias_strengths=self.bias_strengths - eta * gradients.bias_strengths,
            bias_angles=self.bias_angles - eta * gradients.bias_angles,
        )


@dataclass
class ParameterGradients:
    """Derivatives laid out like ModelParameters (one weight entry per unordered pair)"""
    weights: np.ndarray
    bias_strengths: np.ndarray
    bias_angles: np.ndarray

    @classmethod
    def zeros(cls, topology: NetworkTopology) -> "ParameterGradients":
        n_free = len(topology.free_units)
        return cls(np.zeros(topology.n_pairs), np.zeros(n_free), np.zeros(n_free))

    def __add__(self, other: "ParameterGradients") -> "ParameterGradients":
        return ParameterGradients(
            self.weights + other.weights,
            self.bias_strengths + other.bias_strengths,
            self.bias_angles + other.bias_angles,
        )

    def __sub__(self, other: "ParameterGradients") -> "ParameterGradients":
        return ParameterGradients(
            self.weights - other.weights,
            self.bias_strengths - other.bias_strengths,
            self.bias_angles - other.bias_angles,
        )

    def scaled(self, factor: float) -> "ParameterGradients":
        return ParameterGradients(
            self.weights * factor,
            self.bias_strengths * factor,
            self.bias_angles * factor,
        )

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.weights, self.bias_strengths, self.bias_angles])


@dataclass(frozen=True, eq=False)
class TrainingSample:
    """Input phases over S_in and target phases over S_out"""
    input_phases: np.ndarray
    target_phases: np.ndarray
    label: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "input_phases", _readonly(self.input_phases))
        object.__setattr__(self, "target_phases", _readonly(self.target_phases))

    def check_compatible(self, topology: NetworkTopology) -> None:
        if self.input_phases.shape != (topology.n_in,):
            raise ContractViolation(
                f"sample has {self.input_phases.size} inputs, topology has {topology.n_in}"
            )
        if self.target_phases.shape != (topology.n_out,):
            raise ContractViolation(
                f"sample has {self.target_phases.size} targets, topology has {topology.n_out}"
            )


@dataclass
class Checkpoint:
    """Topology plus parameters, persisted as a JSON document

    Schema:
        format, version: "xy-ep-checkpoint", 1
        topology: {kind, layer_sizes, roles: ["input"|"hidden"|"output", ...]}
        weights: [[i, j, W_ij], ...] with i < j
        biases: [[unit, h, psi], ...] for every non-input unit
        metadata: free-form (iteration, seed, ...)
    Floats are written with the shortest repr that round-trips exactly.
    """
    topology: NetworkTopology
    params: ModelParameters
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        topology = self.topology
        # Angles drift during training; written in [-pi, pi), untouched if already there
        angles = self.params.bias_angles
        in_range = (angles >= -np.pi) & (angles < np.pi)
        angles = np.where(in_range, angles, canonicalize_phases(angles))
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "topology": {
                "kind": topology.kind,
                "layer_sizes": list(topology.layer_sizes) if topology.layer_sizes else None,
                "roles": [role.value for role in topology.roles],
            },
            "weights": [
                [int(i), int(j), float(w)]
                for (i, j), w in zip(topology.pairs, self.params.weights)
            ],
            "biases": [
                [int(unit), float(h), float(psi)]
                for unit, h, psi in zip(
                    topology.free_units, self.params.bias_strengths, angles
                )
            ],
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Checkpoint":
        if data.get("format") != CHECKPOINT_FORMAT:
            raise ContractViolation(f"not a checkpoint document (format={data.get('format')!r})")
        topo = data["topology"]
        weights = data.get("weights", [])
        topology = NetworkTopology(
            roles=tuple(UnitRole(r) for r in topo["roles"]),
            pairs=np.array([[w[0], w[1]] for w in weights], dtype=np.int64).reshape(-1, 2),
            kind=topo.get("kind", "custom"),
            layer_sizes=tuple(topo["layer_sizes"]) if topo.get("layer_sizes") else None,
        )

        weight_values = np.zeros(topology.n_pairs)
        for i, j, value in weights:
            weight_values[topology.pair_index(i, j)] = value

        free_position = {int(u): k for k, u in enumerate(topology.free_units)}
        n_free = len(topology.free_units)
        strengths, angles = np.zeros(n_free), np.zeros(n_free)
        seen = set()
        for unit, h, psi in data.get("biases", []):
            if unit not in free_position:
                raise ContractViolation(f"bias given for input or unknown unit {unit}")
            strengths[free_position[unit]] = h
            angles[free_position[unit]] = psi
            seen.add(unit)
        if len(seen) != n_free:
            raise ContractViolation("checkpoint is missing bias entries")

        return cls(
            topology=topology,
            params=ModelParameters(weight_values, strengths, angles),
            metadata=data.get("metadata", {}) or {},
        )

    def save(self, filepath: str) -> None:
        """Save checkpoint to file"""
        with open(filepath, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=1)

    @classmethod
    def load(cls, filepath: str) -> "Checkpoint":
        """Load checkpoint from file"""
        with open(filepath, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))
