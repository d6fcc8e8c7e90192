"""
Command-line entry point for the oscillator network trainer

    python cli.py run --task xor --units 5 --iterations 1000 --seed 7
    python cli.py run --task digits --layers 64,20,10 --iterations 1000 \
        --batch-per-digit 30 --data optdigits.tes
    python cli.py sweep --task xor --units 15 --axis m_init --values 1,2,4,8 --replicates 10
    python cli.py eval --checkpoint runs/final_checkpoint.json --task digits --data optdigits.tes
    python cli.py inspect-equilibria --checkpoint runs/checkpoints/*.json --task xor

Exit status: 0 on success, 1 when training fails at runtime, 2 on configuration errors.
"""
import argparse
import logging
import sys
from concurrent.futures.process import BrokenProcessPool
from pathlib import Path
from typing import Optional

import numpy as np

from artifacts import ArtifactWriter
from config import (
    SWEEP_AXES, ExperimentConfig, TopologySpec, digits_config, get_config, load_config, xor_config,
)
from dynamics import enumerate_equilibria, random_initial_phases, relax
from errors import (
    ConfigurationError, ContractViolation, DatasetParseError, OscillatorError,
    TrainingHaltedError, ValidationError,
)
from metrics import evaluate
from models import Checkpoint
from runner import run_experiment, sweep
from tasks import get_task

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2

LOG_FILE = "experiment.log"


def configure_logging(output_dir: str, verbose: bool = False) -> None:
    """Log to stdout and to experiment.log in the output directory"""
    Path(output_dir).mkdir(parents=True, exist_ok=True)
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[
            logging.StreamHandler(sys.stdout),
            logging.FileHandler(str(Path(output_dir) / LOG_FILE), encoding="utf-8"),
        ],
        force=True,
    )


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigurationError(f"expected comma-separated integers, got {text!r}") from e


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigurationError(f"expected comma-separated numbers, got {text!r}") from e


def _add_experiment_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON experiment config; flags override its values")
    parser.add_argument("--task", choices=["xor", "digits"])
    parser.add_argument("--units", type=int, help="total units of an all-to-all network")
    parser.add_argument("--layers", help="layer sizes of a layered network, e.g. 64,20,10")
    parser.add_argument("--iterations", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--beta", type=float)
    parser.add_argument("--eta", type=float)
    parser.add_argument("--m-init", type=int)
    parser.add_argument("--batch-per-digit", type=int)
    parser.add_argument("--data", help="optdigits file (digits task)")
    parser.add_argument("--output-dir", help="defaults to $XY_EP_OUTPUT_DIR or ./runs")
    parser.add_argument("--replicates", type=int)
    parser.add_argument("--eval-every", type=int)
    parser.add_argument("--workers", type=int, help="processes per training iteration")
    parser.add_argument("--horizon", type=float, help="relaxation time T")
    parser.add_argument(
        "--fixed-horizon", action="store_true",
        help="always integrate for the full horizon instead of stopping at equilibrium",
    )
    parser.add_argument("-v", "--verbose", action="store_true")


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    """Config file (or task defaults) with command-line overrides applied"""
    if args.config:
        config = load_config(args.config)
        if args.task:
            config.task = args.task
            config.init_scheme = args.task
    elif args.task == "digits":
        config = digits_config()
    else:
        config = get_config()
    task = config.task

    if args.layers:
        sizes = _int_list(args.layers)
        if len(sizes) < 2:
            raise ConfigurationError("--layers needs at least two sizes")
        config.topology = TopologySpec(
            kind="layered", n_in=sizes[0], n_hidden=sum(sizes[1:-1]),
            n_out=sizes[-1], layer_sizes=sizes,
        )
    elif args.units is not None:
        n_in, n_out = (2, 1) if task == "xor" else (64, 10)
        config.topology = TopologySpec(
            kind="all_to_all", n_in=n_in, n_hidden=args.units - n_in - n_out, n_out=n_out,
        )
        if config.topology.n_hidden < 0:
            raise ConfigurationError(f"--units {args.units} is too small for the {task} task")

    train = config.train
    if args.iterations is not None:
        train.n_iterations = args.iterations
    if args.seed is not None:
        train.rng_seed = args.seed
    if args.beta is not None:
        train.beta = args.beta
    if args.eta is not None:
        train.eta = args.eta
    if args.m_init is not None:
        train.m_init = args.m_init
    if args.eval_every is not None:
        train.eval_every = args.eval_every
    if args.workers is not None:
        train.max_workers = args.workers
    if args.horizon is not None:
        train.integrator.horizon = args.horizon
    if args.fixed_horizon:
        train.integrator.early_exit = False
    if args.batch_per_digit is not None:
        config.batch_per_digit = args.batch_per_digit
        train.m_data = 10 * args.batch_per_digit
    if args.data:
        config.dataset_path = args.data
    if args.output_dir:
        config.output_dir = args.output_dir
    if args.replicates is not None:
        config.replicates = args.replicates
    return config


def cmd_run(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    config.validate()
    configure_logging(config.output_dir, args.verbose)
    summaries = run_experiment(config)
    for summary in summaries:
        logger.info(
            f"{summary.output_dir}: final <D>={summary.final_mean_distance} "
            f"best accuracy={summary.best_accuracy}"
        )
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    config.validate()
    values: list = _float_list(args.values)
    if args.axis in ("n_units", "m_init"):
        values = [int(v) for v in values]
    configure_logging(config.output_dir, args.verbose)
    report = sweep(config, args.axis, values, max_workers=args.parallel)
    for row in report.rows():
        logger.info(f"{args.axis}={row[0]}: runs={row[1]} failures={row[2]} speed={row[4]} normalized={row[5]}")
    return EXIT_OK


def _load_checkpoint(path: str) -> Checkpoint:
    try:
        return Checkpoint.load(path)
    except FileNotFoundError as e:
        raise ConfigurationError(f"checkpoint not found: {path}") from e


def cmd_eval(args: argparse.Namespace) -> int:
    checkpoint = _load_checkpoint(args.checkpoint)
    if args.task == "digits" and not args.data:
        raise ConfigurationError("digits evaluation requires --data")
    task = get_task(args.task, args.data)
    output_dir = args.output_dir or str(Path(args.checkpoint).parent / "eval")
    configure_logging(output_dir, args.verbose)

    integrator = get_config().train.integrator
    if args.horizon is not None:
        integrator.horizon = args.horizon
    rng = np.random.default_rng(args.seed)
    result = evaluate(
        checkpoint.params, checkpoint.topology, task.test_samples(), integrator, rng,
        classify=task.is_classification, m_init=args.m_init,
    )

    writer = ArtifactWriter(output_dir)
    metrics = result.summary()
    metrics["checkpoint"] = args.checkpoint
    metrics["iteration"] = checkpoint.metadata.get("iteration")
    writer.write_json("metrics.json", metrics)
    if result.confusion is not None:
        iteration = int(checkpoint.metadata.get("iteration", 0))
        writer.path(writer.CONFUSION).write_text(result.confusion.to_csv_block(iteration), encoding="utf-8")
        writer.write_table(
            "predictions.csv",
            ["trial", "predicted"] + [f"score_{k}" for k in range(checkpoint.topology.n_out)],
            [[k, p] + list(s) for k, (p, s) in enumerate(zip(result.predictions, result.scores))],
        )
        logger.info(f"Accuracy {result.accuracy:.4f} on {result.n_samples} test trials")
    logger.info(f"Mean distance {result.mean_distance:.6f}")
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace) -> int:
    checkpoints = [(path, _load_checkpoint(path)) for path in args.checkpoint]
    if args.inputs:
        inputs = [np.array(_float_list(group)) for group in args.inputs.split(";")]
    else:
        if args.task == "digits" and not args.data:
            raise ConfigurationError("digits inputs require --data")
        samples = get_task(args.task, args.data).test_samples()[: args.max_samples]
        inputs = [s.input_phases for s in samples]

    output_dir = args.output_dir or str(Path(args.checkpoint[0]).parent / "equilibria")
    configure_logging(output_dir, args.verbose)
    writer = ArtifactWriter(output_dir)
    integrator = get_config().train.integrator

    report = []
    for path, checkpoint in checkpoints:
        topology, params = checkpoint.topology, checkpoint.params
        entry = {"checkpoint": path, "iteration": checkpoint.metadata.get("iteration"), "inputs": []}
        for k, sample_inputs in enumerate(inputs):
            survey = enumerate_equilibria(
                params, topology, sample_inputs, n_trials=args.trials,
                cluster_tol=args.cluster_tol, rng_seed=args.seed, config=integrator,
            )
            entry["inputs"].append({"input_phases": sample_inputs.tolist(), **survey.to_dict(topology)})
            logger.info(
                f"{path} input {k}: {len(survey.clusters)} equilibria from "
                f"{survey.n_converged}/{survey.n_trials} converged trials"
            )

            rng = np.random.default_rng(args.seed)
            for trial in range(args.dump_trajectories):
                initial = random_initial_phases(topology, sample_inputs, rng)
                result = relax(initial, params, topology, sample_inputs, config=integrator, record=True)
                if result.trajectory is not None:
                    stem = Path(path).stem
                    writer.write_trajectory(
                        f"trajectories/{stem}_input{k}_trial{trial}.txt", result.trajectory
                    )
        report.append(entry)

    writer.write_json("equilibria.json", report)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Train coupled phase-oscillator networks with Equilibrium Propagation"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="train and evaluate one experiment")
    _add_experiment_arguments(run)
    run.set_defaults(handler=cmd_run)

    sweep_parser = commands.add_parser("sweep", help="replicated runs over a grid of one parameter")
    _add_experiment_arguments(sweep_parser)
    sweep_parser.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sweep_parser.add_argument("--values", required=True, help="comma-separated values")
    sweep_parser.add_argument("--parallel", type=int, default=1, help="concurrent runs")
    sweep_parser.set_defaults(handler=cmd_sweep)

    eval_parser = commands.add_parser("eval", help="evaluate a checkpoint on the test set")
    eval_parser.add_argument("--checkpoint", required=True)
    eval_parser.add_argument("--task", choices=["xor", "digits"], default="xor")
    eval_parser.add_argument("--data")
    eval_parser.add_argument("--seed", type=int, default=0)
    eval_parser.add_argument("--m-init", type=int, default=1)
    eval_parser.add_argument("--horizon", type=float)
    eval_parser.add_argument("--output-dir")
    eval_parser.add_argument("-v", "--verbose", action="store_true")
    eval_parser.set_defaults(handler=cmd_eval)

    inspect = commands.add_parser("inspect-equilibria", help="enumerate equilibria of checkpoints")
    inspect.add_argument("--checkpoint", required=True, nargs="+")
    inspect.add_argument("--task", choices=["xor", "digits"], default="xor")
    inspect.add_argument("--data")
    inspect.add_argument("--inputs", help="input phases, e.g. '1.57,-1.57;-1.57,-1.57'")
    inspect.add_argument("--max-samples", type=int, default=4)
    inspect.add_argument("--trials", type=int, default=100)
    inspect.add_argument("--cluster-tol", type=float, default=1e-2)
    inspect.add_argument("--seed", type=int, default=0)
    inspect.add_argument("--dump-trajectories", type=int, default=0,
                         help="recorded relaxations per input written as columnar text")
    inspect.add_argument("--output-dir")
    inspect.add_argument("-v", "--verbose", action="store_true")
    inspect.set_defaults(handler=cmd_inspect)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except (ConfigurationError, ValidationError, DatasetParseError, ContractViolation) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except TrainingHaltedError as e:
        logger.error(f"Training failed: {e}")
        return EXIT_FAILURE
    except OscillatorError as e:
        logger.error(f"Run failed: {e}", exc_info=True)
        return EXIT_FAILURE
    except BrokenProcessPool as e:
        logger.error(f"Worker process died: {e}", exc_info=True)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
