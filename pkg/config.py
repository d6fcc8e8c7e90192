"""
Configuration for the oscillator network trainer
"""
from dataclasses import dataclass, field, asdict
from typing import Optional
import json
import os

from errors import ConfigurationError

VERSION = "0.1.0"

TASKS = ("xor", "digits")
TOPOLOGY_KINDS = ("all_to_all", "layered")
INIT_SCHEMES = ("xor", "digits")
SWEEP_AXES = ("n_units", "m_init", "beta", "eta")

# Iterations at which confusion matrices are exported for the digits task
DEFAULT_CONFUSION_ITERATIONS: tuple[int, ...] = (0, 10, 50, 100, 1000)


@dataclass
class IntegratorConfig:
    """Adaptive RK4 settings for relaxing the phases to equilibrium"""
    # Model time in frequency^-1 units
    horizon: float = 100.0
    rel_tol: float = 1e-6
    abs_tol: float = 1e-8
    initial_step: float = 0.01
    max_step: float = 1.0
    min_step: float = 1e-10
    equilibrium_grad_tol: float = 1e-6

    # Stop before the horizon once the residual gradient is below tolerance.
    # Disable to integrate for exactly `horizon`.
    early_exit: bool = True

    def validate(self) -> None:
        if self.horizon <= 0:
            raise ConfigurationError(f"horizon must be positive, got {self.horizon}")
        if self.rel_tol <= 0 or self.abs_tol <= 0 or self.equilibrium_grad_tol <= 0:
            raise ConfigurationError("integration tolerances must be positive")
        if not 0 < self.min_step <= self.initial_step <= self.max_step:
            raise ConfigurationError(
                "step sizes must satisfy 0 < min_step <= initial_step <= max_step, got "
                f"{self.min_step}, {self.initial_step}, {self.max_step}"
            )


@dataclass
class TrainConfig:
    """Equilibrium Propagation training settings"""
    beta: float = 0.1
    eta: float = 0.1
    m_init: int = 1
    m_data: int = 4
    n_iterations: int = 1000
    rng_seed: int = 0
    eval_every: int = 10
    # Random initializations per test sample at evaluation time
    eval_m_init: int = 1
    # Evaluations also happen at these iterations regardless of eval_every
    extra_eval_iterations: tuple[int, ...] = ()
    # Processes for the (sample x init) grid; 1 runs serially
    max_workers: int = 1
    # Training halts after more consecutive fully-failed iterations than this
    max_consecutive_failures: int = 3
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)

    def validate(self) -> None:
        if self.beta <= 0:
            raise ConfigurationError(f"beta must be positive, got {self.beta}")
        if self.m_init < 1 or self.m_data < 1 or self.eval_m_init < 1:
            raise ConfigurationError("m_init, m_data and eval_m_init must be at least 1")
        if self.n_iterations < 0:
            raise ConfigurationError("n_iterations must be non-negative")
        if self.eval_every < 1:
            raise ConfigurationError("eval_every must be at least 1")
        if self.max_workers < 1:
            raise ConfigurationError("max_workers must be at least 1")
        self.integrator.validate()


@dataclass
class TopologySpec:
    """Network structure: all-to-all (n_in, n_hidden, n_out) or layered sizes"""
    kind: str = "all_to_all"
    n_in: int = 2
    n_hidden: int = 2
    n_out: int = 1
    layer_sizes: Optional[list[int]] = None

    def validate(self) -> None:
        if self.kind not in TOPOLOGY_KINDS:
            raise ConfigurationError(f"unknown topology kind {self.kind!r}")
        if self.kind == "layered" and not self.layer_sizes:
            raise ConfigurationError("layered topology requires layer_sizes")

    @property
    def n_units(self) -> int:
        if self.kind == "layered" and self.layer_sizes:
            return sum(self.layer_sizes)
        return self.n_in + self.n_hidden + self.n_out

    @property
    def input_count(self) -> int:
        if self.kind == "layered" and self.layer_sizes:
            return self.layer_sizes[0]
        return self.n_in

    @property
    def output_count(self) -> int:
        if self.kind == "layered" and self.layer_sizes:
            return self.layer_sizes[-1]
        return self.n_out


@dataclass
class ExperimentConfig:
    """Main experiment configuration"""
    task: str = "xor"
    topology: TopologySpec = field(default_factory=TopologySpec)
    init_scheme: str = "xor"
    train: TrainConfig = field(default_factory=TrainConfig)

    # Digits only
    dataset_path: Optional[str] = None
    batch_per_digit: int = 30
    confusion_iterations: tuple[int, ...] = DEFAULT_CONFUSION_ITERATIONS

    output_dir: str = field(
        default_factory=lambda: os.getenv("XY_EP_OUTPUT_DIR", "runs")
    )
    replicates: int = 1

    # Iterations used for the learning-speed regression
    speed_window: int = 300

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigurationError(f"unknown task {self.task!r}, expected one of {TASKS}")
        if self.init_scheme not in INIT_SCHEMES:
            raise ConfigurationError(f"unknown init scheme {self.init_scheme!r}")
        if self.replicates < 1:
            raise ConfigurationError("replicates must be at least 1")
        if self.speed_window < 2:
            raise ConfigurationError("speed_window must be at least 2")
        self.topology.validate()
        self.train.validate()

        if self.task == "xor":
            if self.topology.input_count != 2 or self.topology.output_count != 1:
                raise ConfigurationError("xor needs 2 input units and 1 output unit")
            if self.train.m_data != 4:
                raise ConfigurationError("xor trains on all 4 samples per iteration (m_data=4)")
        else:
            if self.topology.input_count != 64 or self.topology.output_count != 10:
                raise ConfigurationError("digits needs 64 input units and 10 output units")
            if not self.dataset_path:
                raise ConfigurationError("digits task requires dataset_path")
            if not os.path.isfile(self.dataset_path):
                raise ConfigurationError(f"dataset file not found: {self.dataset_path}")
            if self.batch_per_digit < 1:
                raise ConfigurationError("batch_per_digit must be at least 1")
            if self.train.m_data != 10 * self.batch_per_digit:
                raise ConfigurationError(
                    f"m_data ({self.train.m_data}) must equal 10 * batch_per_digit "
                    f"({10 * self.batch_per_digit})"
                )

    def to_dict(self) -> dict:
        """Convert to a JSON-serializable dictionary"""
        data = asdict(self)
        data["confusion_iterations"] = list(self.confusion_iterations)
        data["train"]["extra_eval_iterations"] = list(self.train.extra_eval_iterations)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        """Create from dictionary, keeping defaults for missing keys"""
        data = dict(data)
        train_data = dict(data.pop("train", {}) or {})
        integrator_data = train_data.pop("integrator", {}) or {}
        topology_data = data.pop("topology", {}) or {}
        if "extra_eval_iterations" in train_data:
            train_data["extra_eval_iterations"] = tuple(train_data["extra_eval_iterations"])
        if "confusion_iterations" in data:
            data["confusion_iterations"] = tuple(data["confusion_iterations"])
        try:
            integrator = IntegratorConfig(**integrator_data)
            topology = TopologySpec(**topology_data)
            return cls(
                topology=topology,
                train=TrainConfig(integrator=integrator, **train_data),
                **data,
            )
        except TypeError as e:
            raise ConfigurationError(f"invalid configuration key: {e}") from e


def load_config(path: str) -> ExperimentConfig:
    """Load an experiment configuration from a JSON file.

    A run manifest is accepted as well; its embedded config is used.
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError as e:
        raise ConfigurationError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigurationError(f"config file {path} must hold a JSON object")
    if "software_version" in data and isinstance(data.get("config"), dict):
        data = data["config"]
    return ExperimentConfig.from_dict(data)


def xor_config(n_units: int = 5) -> ExperimentConfig:
    """Defaults for the XOR experiments: all-to-all, T=100, eta=0.1, all 4 samples"""
    if n_units < 3:
        raise ConfigurationError("xor needs at least 3 units (2 inputs, 1 output)")
    return ExperimentConfig(
        task="xor",
        topology=TopologySpec(kind="all_to_all", n_in=2, n_hidden=n_units - 3, n_out=1),
        init_scheme="xor",
        train=TrainConfig(eta=0.1, m_data=4, eval_every=10),
    )


def digits_config(
    dataset_path: Optional[str] = None,
    layer_sizes: Optional[list[int]] = None,
    n_hidden: int = 11,
) -> ExperimentConfig:
    """Defaults for the digits experiments: batch 300, M_init=1, test every 5 iterations"""
    if layer_sizes:
        topology = TopologySpec(kind="layered", n_in=layer_sizes[0],
                                n_hidden=sum(layer_sizes[1:-1]),
                                n_out=layer_sizes[-1], layer_sizes=list(layer_sizes))
    else:
        topology = TopologySpec(kind="all_to_all", n_in=64, n_hidden=n_hidden, n_out=10)
    return ExperimentConfig(
        task="digits",
        topology=topology,
        init_scheme="digits",
        dataset_path=dataset_path,
        batch_per_digit=30,
        train=TrainConfig(m_init=1, m_data=300, eval_every=5,
                          extra_eval_iterations=DEFAULT_CONFUSION_ITERATIONS),
    )


def get_config() -> ExperimentConfig:
    """Get the default experiment configuration"""
    return xor_config()
