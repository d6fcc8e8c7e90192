"""Pytest configuration and fixtures"""
import logging
import signal

import numpy as np
import pytest

from config import IntegratorConfig, xor_config
from models import ModelParameters, TrainingSample, make_all_to_all, make_layered
from tasks import FALSE_PHASE, TRUE_PHASE


@pytest.fixture
def fast_integrator():
    """Short horizon and loose tolerances for quick relaxations"""
    return IntegratorConfig(horizon=20.0, rel_tol=1e-5, abs_tol=1e-7, equilibrium_grad_tol=1e-5)


@pytest.fixture
def tight_integrator():
    """Tolerances tight enough for finite-difference comparisons"""
    return IntegratorConfig(
        horizon=400.0, rel_tol=1e-10, abs_tol=1e-12, equilibrium_grad_tol=1e-12
    )


@pytest.fixture
def xor_topology():
    return make_all_to_all(2, 2, 1)


@pytest.fixture
def chain_topology():
    """Input - hidden - output chain"""
    return make_layered([1, 1, 1])


@pytest.fixture
def chain_params():
    return ModelParameters(
        weights=np.array([1.5, 0.8]),
        bias_strengths=np.array([1.0, 0.3]),
        bias_angles=np.array([0.3, -0.4]),
    )


@pytest.fixture
def random_params():
    """Factory for N(0, 1) couplings and biases on any topology"""
    def make(topology, seed=0):
        rng = np.random.default_rng(seed)
        n_free = len(topology.free_units)
        return ModelParameters(
            weights=rng.standard_normal(topology.n_pairs),
            bias_strengths=rng.uniform(-0.5, 0.5, n_free),
            bias_angles=rng.uniform(-np.pi, np.pi, n_free),
        )
    return make


@pytest.fixture
def xor_sample():
    return TrainingSample(
        input_phases=np.array([TRUE_PHASE, FALSE_PHASE]),
        target_phases=np.array([TRUE_PHASE]),
    )


@pytest.fixture
def tiny_xor_config(tmp_path, fast_integrator):
    """Five-unit XOR run with a handful of iterations"""
    config = xor_config(n_units=5)
    config.train.n_iterations = 3
    config.train.eval_every = 2
    config.train.rng_seed = 11
    config.train.integrator = fast_integrator
    config.output_dir = str(tmp_path / "run")
    config.speed_window = 2
    return config


def _digit_row(label: int, variant: int) -> str:
    # first two pixels make every (label, variant) image distinct
    pixels = [label, variant] + [(label * 3 + variant + k) % 17 for k in range(62)]
    return ",".join(str(p) for p in pixels) + f",{label}"


@pytest.fixture
def digits_file(tmp_path):
    """Synthetic optdigits file: 12 records per digit"""
    lines = [_digit_row(label, variant) for variant in range(12) for label in range(10)]
    path = tmp_path / "optdigits.tes"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)


@pytest.fixture(autouse=True)
def restore_process_state():
    """Runs install signal handlers and file logging; undo both after each test"""
    handlers = {sig: signal.getsignal(sig) for sig in (signal.SIGINT, signal.SIGTERM)}
    root = logging.getLogger()
    root_handlers, root_level = list(root.handlers), root.level
    yield
    for sig, handler in handlers.items():
        signal.signal(sig, handler)
    for handler in list(root.handlers):
        if handler not in root_handlers:
            root.removeHandler(handler)
            handler.close()
    for handler in root_handlers:
        if handler not in root.handlers:
            root.addHandler(handler)
    root.setLevel(root_level)
