"""Long-running end-to-end experiments; run with `pytest -m slow`"""
import os

import numpy as np
import pytest

from config import digits_config, xor_config
from dynamics import enumerate_equilibria
from metrics import evaluate_accuracy
from models import circular_difference, make_all_to_all
from runner import ExperimentRunner, sweep, topology_from_spec
from tasks import DigitsTask, XorTask, load_digits
from trainer import InitScheme, init_parameters, train

pytestmark = pytest.mark.slow

OPTDIGITS_PATH = os.getenv("OPTDIGITS_PATH")
needs_digits = pytest.mark.skipif(
    not OPTDIGITS_PATH or not os.path.isfile(OPTDIGITS_PATH),
    reason="set OPTDIGITS_PATH to the optdigits file",
)


def test_xor_converges_in_most_runs():
    """Five-unit XOR: at least 90% of 20 seeded runs end with <D> < 0.05"""
    converged = 0
    for seed in range(20):
        config = xor_config(n_units=5)
        config.train.n_iterations = 1000
        config.train.eval_every = 1000
        config.train.rng_seed = seed
        log = train(XorTask(), topology_from_spec(config.topology), config.train)
        converged += log.distance_trace()[-1][1] < 0.05
    assert converged >= 18


def test_training_removes_multistability_from_outputs():
    config = xor_config(n_units=12)
    config.train.n_iterations = 1000
    config.train.eval_every = 1000
    config.train.rng_seed = 3
    topology = topology_from_spec(config.topology)
    samples = XorTask().test_samples()

    initial = init_parameters(topology, InitScheme.XOR, np.random.default_rng(3))
    before = [
        enumerate_equilibria(initial, topology, s.input_phases, n_trials=50, rng_seed=0)
        for s in samples
    ]
    assert max(len(survey.clusters) for survey in before) >= 2

    log = train(XorTask(), topology, config.train, params=initial)
    outputs = topology.output_units
    for sample in samples:
        survey = enumerate_equilibria(log.params, topology, sample.input_phases, n_trials=50, rng_seed=1)
        reference = survey.clusters[0].representative[outputs]
        for cluster in survey.clusters[1:]:
            gap = np.abs(circular_difference(cluster.representative[outputs], reference))
            assert np.all(gap < 1e-2)


def test_m_init_sweep(tmp_path):
    template = xor_config(n_units=15)
    template.train.n_iterations = 300
    template.train.eval_every = 300
    template.replicates = 10
    template.output_dir = str(tmp_path)
    report = sweep(template, "m_init", [1, 2, 4, 8])

    raw = [p.mean_learning_speed for p in report.points]
    normalized = [p.mean_normalized_speed for p in report.points]
    # non-decreasing within replicate noise
    for slower, faster in zip(raw, raw[1:]):
        assert faster >= 0.8 * slower
    assert int(np.argmax(normalized)) <= 2


def test_unit_count_sweep_slows_down_past_eight(tmp_path):
    """XOR learning speed over N in {5, 8, 12}: the largest network is slower than N=8"""
    template = xor_config(n_units=5)
    template.train.n_iterations = 300
    template.train.eval_every = 300
    template.replicates = 10
    template.output_dir = str(tmp_path)
    report = sweep(template, "n_units", [5, 8, 12])

    assert all(len(p.summaries) == 10 and not p.failures for p in report.points)
    speeds = {p.value: p.mean_learning_speed for p in report.points}
    assert all(speed > 0 for speed in speeds.values())
    assert speeds[8] > speeds[12]
    assert (tmp_path / "sweep_traces.csv").read_text().splitlines()[0] == (
        "iteration,n_units=5,n_units=8,n_units=12"
    )


@needs_digits
def test_untrained_digits_network_near_chance():
    dataset = load_digits(OPTDIGITS_PATH)
    topology = make_all_to_all(64, 11, 10)
    params = init_parameters(topology, InitScheme.DIGITS, np.random.default_rng(0))
    accuracy, confusion = evaluate_accuracy(
        params, topology, dataset.test_samples(), None, np.random.default_rng(1)
    )
    assert 0.0 <= accuracy <= 0.3
    assert confusion.total == 700


@needs_digits
def test_digits_layered_reduced(tmp_path):
    """200 iterations of the (64, 20, 10) network reach 75% test accuracy"""
    config = digits_config(OPTDIGITS_PATH, layer_sizes=[64, 20, 10])
    config.train.n_iterations = 200
    config.train.eval_every = 20
    config.train.extra_eval_iterations = ()
    config.confusion_iterations = (0, 10, 50, 100)
    config.output_dir = str(tmp_path)
    summary = ExperimentRunner(config, install_signal_handlers=False).run()
    assert summary.best_accuracy >= 0.75
    assert (tmp_path / "confusion_matrices.csv").read_text().count("# iteration") >= 2


@needs_digits
def test_digits_batches_cover_every_class():
    task = DigitsTask(load_digits(OPTDIGITS_PATH), per_digit=30)
    batch = task.training_batch(np.random.default_rng(0))
    assert len(batch) == 300
    assert sorted({s.label for s in batch}) == list(range(10))
