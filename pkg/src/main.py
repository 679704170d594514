from __future__ import annotations

import argparse
import dataclasses
import logging
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from src.baselines import HeuristicPolicy
from src.config import get_logger, get_settings, setup_logging
from src.constants import (
    PACKAGE_VERSION, WORLD_FORMAT_VERSION, MODEL_FORMAT_VERSION, REPORT_FORMAT_VERSION, FEATURE_SCHEMA_VERSION,
    GENERATOR_NAMES, SPLITS, SPLIT_TRAIN, SPLIT_TEST, SPLIT_VALIDATION, DEFAULT_NUM_NODES, DEFAULT_RESOLUTION,
    DEFAULT_HORIZON, DEFAULT_NUM_RAYS, DEFAULT_FOV, DEFAULT_MAX_RANGE, DEFAULT_MOTION_PENALTY, ALGORITHM_CLI_NAMES,
    HEURISTIC_CLI_NAMES, ORACLE_KINDS, ORACLE_GREEDY, ORACLE_GCB, MIX_SCHEDULES, SUITES, POLICY_RANDOM, POLICY_ORACLE,
    EXIT_OK, EXIT_RUNTIME_ERROR, EXIT_USAGE_ERROR,
)
from src.dataset_store_service import DatasetStoreService, ENCODINGS, ENCODING_BINARY, ENCODING_JSON
from src.evaluation_service import EvaluationService, write_outputs
from src.exceptions import InfoGatherError, InvalidConfigError
from src.learner import load_policy
from src.models import ProblemSpec, SensorConfig
from src.policies import ClairvoyantPolicy, Policy, RandomPolicy
from src.train_config import train_config_from_dict
from src.training_service import TrainingService, save_outcome
from src.verification_service import VerificationService, format_table
from src.worldgen import generate_dataset

# Set up logger for this module
logger = get_logger(__name__)


def version_text() -> str:
    return (f"info-gather {PACKAGE_VERSION} (worlds {WORLD_FORMAT_VERSION}, models {MODEL_FORMAT_VERSION}, "
            f"reports {REPORT_FORMAT_VERSION}, feature schema {FEATURE_SCHEMA_VERSION})")


def parse_dims(text: str) -> tuple:
    try:
        height, width = (int(part) for part in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"Invalid grid dims '{text}': expected HxW, e.g. 64x64")
    return height, width


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="info-gather", description="Imitation-learned information gathering")
    parser.add_argument("--version", action="version", version=version_text())
    parser.add_argument("--threads", type=int, default=None, help="Cap on worker threads (default: IGI_THREADS)")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING, ERROR (default: IGI_LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True)

    worldgen = sub.add_parser("worldgen", help="Generate train/test/validation world files")
    worldgen.add_argument("--generator", required=True, choices=GENERATOR_NAMES)
    worldgen.add_argument("--count", type=int, default=100, help="Worlds in the train split")
    worldgen.add_argument("--test-count", type=int, default=None, help="Worlds in the test split (default: --count)")
    worldgen.add_argument("--validation-count", type=int, default=None,
                          help="Worlds in the validation split (default: --count)")
    worldgen.add_argument("--splits", nargs="+", choices=SPLITS, default=list(SPLITS))
    worldgen.add_argument("--seed", type=int, default=None)
    worldgen.add_argument("--grid", type=parse_dims, default=(64, 64))
    worldgen.add_argument("--nodes", type=int, default=DEFAULT_NUM_NODES)
    worldgen.add_argument("--resolution", type=float, default=DEFAULT_RESOLUTION)
    worldgen.add_argument("--intensity", type=float, default=None, help="Poisson forest intensity per cell")
    worldgen.add_argument("--encoding", choices=ENCODINGS, default=ENCODING_BINARY)
    worldgen.add_argument("--output-dir", default=None)

    train = sub.add_parser("train", help="Train a learnt policy")
    train.add_argument("--config", default=None, help="Training config JSON; flags override its values")
    train.add_argument("--algo", choices=sorted(ALGORITHM_CLI_NAMES), default=None)
    train.add_argument("--train", dest="train_file", required=True, help="Train world file")
    train.add_argument("--val", dest="val_file", required=True, help="Validation world file")
    train.add_argument("--iters", type=int, default=None)
    train.add_argument("--episodes", type=int, default=None)
    train.add_argument("--actions-per-state", type=int, default=None)
    train.add_argument("--horizon", type=int, default=None)
    train.add_argument("--budget", type=float, default=None)
    train.add_argument("--oracle", choices=ORACLE_KINDS, default=None)
    train.add_argument("--mix-schedule", choices=MIX_SCHEDULES, default=None)
    train.add_argument("--mix-decay", type=float, default=None)
    train.add_argument("--num-trees", type=int, default=None)
    train.add_argument("--max-depth", type=int, default=None)
    train.add_argument("--min-samples-leaf", type=int, default=None)
    train.add_argument("--num-rays", type=int, default=None)
    train.add_argument("--max-range", type=float, default=None)
    train.add_argument("--seed", type=int, default=None)
    train.add_argument("--output-dir", default=None)

    evaluate = sub.add_parser("eval", help="Evaluate policies on a test world file")
    evaluate.add_argument("--test", dest="test_file", required=True)
    evaluate.add_argument("--policy", dest="policies", action="append", required=True,
                          help=f"'{POLICY_ORACLE}', '{POLICY_RANDOM}', a heuristic "
                               f"({', '.join(HEURISTIC_CLI_NAMES)}) or a policy file; repeatable")
    evaluate.add_argument("--motion-penalty", type=float, default=0.0,
                          help=f"Per-meter penalty for heuristics (the budgeted experiments use {DEFAULT_MOTION_PENALTY})")
    evaluate.add_argument("--horizon", type=int, default=DEFAULT_HORIZON)
    evaluate.add_argument("--budget", type=float, default=None)
    evaluate.add_argument("--oracle", choices=ORACLE_KINDS, default=None)
    evaluate.add_argument("--num-rays", type=int, default=DEFAULT_NUM_RAYS)
    evaluate.add_argument("--fov", type=float, default=DEFAULT_FOV)
    evaluate.add_argument("--max-range", type=float, default=DEFAULT_MAX_RANGE)
    evaluate.add_argument("--seed", type=int, default=None)
    evaluate.add_argument("--output-dir", default=None)

    verify = sub.add_parser("verify", help="Run the exhaustive reference suites")
    verify.add_argument("--suite", dest="suites", action="append", choices=SUITES, default=None)
    verify.add_argument("--seed", type=int, default=None)
    verify.add_argument("--scale", type=float, default=1.0, help="Multiplier on instances per suite")
    return parser


def log_effective_config(command: str, config: dict) -> None:
    logger.info(f"Effective {command} config:\n{json.dumps(config, indent=2, sort_keys=True, default=str)}")


def cmd_worldgen(args, settings) -> int:
    output_dir = Path(args.output_dir or settings.output_dir)
    seed = settings.seed if args.seed is None else args.seed
    counts = {
        SPLIT_TRAIN: args.count,
        SPLIT_TEST: args.count if args.test_count is None else args.test_count,
        SPLIT_VALIDATION: args.count if args.validation_count is None else args.validation_count,
    }
    log_effective_config("worldgen", {
        "generator": args.generator, "counts": {s: counts[s] for s in args.splits}, "seed": seed,
        "grid": list(args.grid), "nodes": args.nodes, "resolution": args.resolution, "intensity": args.intensity,
        "encoding": args.encoding, "output_dir": str(output_dir), "threads": settings.threads,
    })
    output_dir.mkdir(parents=True, exist_ok=True)
    store = DatasetStoreService(args.encoding)
    suffix = ".json" if args.encoding == ENCODING_JSON else ".igw"
    for split in args.splits:
        dataset = generate_dataset(args.generator, args.grid, counts[split], seed, args.nodes, split,
                                   settings.threads, args.resolution, args.intensity)
        store.save(dataset, str(output_dir / f"{split}{suffix}"))
    return EXIT_OK


def _train_overrides(args) -> dict:
    flags = {
        "algorithm": ALGORITHM_CLI_NAMES.get(args.algo) if args.algo else None,
        "iterations": args.iters,
        "episodes_per_iteration": args.episodes,
        "actions_labeled_per_state": args.actions_per_state,
        "horizon": args.horizon,
        "budget": args.budget,
        "oracle": args.oracle,
        "mix_schedule": args.mix_schedule,
        "mix_decay": args.mix_decay,
        "seed": args.seed,
    }
    forest = {"num_trees": args.num_trees, "max_depth": args.max_depth, "min_samples_leaf": args.min_samples_leaf}
    sensor = {"num_rays": args.num_rays, "max_range": args.max_range}
    overrides = {k: v for k, v in flags.items() if v is not None}
    if any(v is not None for v in forest.values()):
        overrides["forest"] = {k: v for k, v in forest.items() if v is not None}
    if any(v is not None for v in sensor.values()):
        overrides["sensor"] = {k: v for k, v in sensor.items() if v is not None}
    return overrides


DEFAULT_TRAIN_CONFIG = Path(__file__).parent / "train_config.json"


def load_train_data(path: str) -> dict:
    with open(path, "r") as f:
        data = json.load(f)
    if not isinstance(data, dict):
        raise InvalidConfigError(f"Error in {path}: training config must be an object")
    return data


def cmd_train(args, settings) -> int:
    # Bundled defaults, then the config file, then flags
    data = load_train_data(str(DEFAULT_TRAIN_CONFIG))
    if args.config:
        for key, value in load_train_data(args.config).items():
            if isinstance(value, dict) and isinstance(data.get(key), dict):
                data[key] = {**data[key], **value}
            else:
                data[key] = value
    data.setdefault("seed", settings.seed)
    for key, value in _train_overrides(args).items():
        if isinstance(value, dict):
            data[key] = {**data.get(key, {}), **value}
        else:
            data[key] = value
    try:
        config = train_config_from_dict(data)
    except (TypeError, ValueError) as e:
        raise InvalidConfigError(f"Invalid training config: {e}")
    output_dir = Path(args.output_dir or settings.output_dir)

    for path in (args.train_file, args.val_file):
        if not Path(path).is_file():
            raise FileNotFoundError(f"World file not found: {path}")
    log_effective_config("train", {**config.to_dict(), "train_file": args.train_file, "val_file": args.val_file,
                                   "output_dir": str(output_dir), "threads": settings.threads})

    store = DatasetStoreService()
    train_worlds = store.load(args.train_file)
    val_worlds = store.load(args.val_file)
    service = TrainingService(threads=settings.threads)
    outcome = service.train(config, train_worlds, val_worlds)
    policy_path = save_outcome(outcome, str(output_dir))
    logger.info(f"Training finished: selected iteration {outcome.report.selected_iteration}, policy at {policy_path}")
    return EXIT_OK


def resolve_policy(name: str, motion_penalty: float, oracle_kind: str) -> Policy:
    if name == POLICY_ORACLE:
        return ClairvoyantPolicy(oracle_kind)
    if name == POLICY_RANDOM:
        return RandomPolicy()
    if name in HEURISTIC_CLI_NAMES:
        return HeuristicPolicy.from_cli_name(name, motion_penalty)
    if not Path(name).is_file():
        raise FileNotFoundError(f"Policy file not found: {name}")
    return load_policy(name, name=name)


def cmd_eval(args, settings) -> int:
    spec = ProblemSpec.unconstrained(args.horizon) if args.budget is None else ProblemSpec.budgeted(args.horizon,
                                                                                                   args.budget)
    oracle_kind = args.oracle or (ORACLE_GCB if spec.is_budgeted else ORACLE_GREEDY)
    sensor = SensorConfig(num_rays=args.num_rays, fov=args.fov, max_range=args.max_range)
    seed = settings.seed if args.seed is None else args.seed
    output_dir = Path(args.output_dir or settings.output_dir)
    if not Path(args.test_file).is_file():
        raise FileNotFoundError(f"World file not found: {args.test_file}")
    policies = [resolve_policy(name, args.motion_penalty, oracle_kind) for name in args.policies]
    log_effective_config("eval", {
        "test_file": args.test_file, "policies": args.policies, "spec": spec.to_dict(), "oracle": oracle_kind,
        "sensor": sensor.to_dict(), "motion_penalty": args.motion_penalty, "seed": seed,
        "output_dir": str(output_dir), "threads": settings.threads,
    })

    dataset = DatasetStoreService().load(args.test_file)
    service = EvaluationService(sensor, settings.threads)
    results = service.compare(policies, dataset, spec, seed)
    write_outputs(results, str(output_dir))
    return EXIT_OK


def cmd_verify(args, settings) -> int:
    seed = settings.seed if args.seed is None else args.seed
    log_effective_config("verify", {"suites": args.suites or list(SUITES), "seed": seed, "scale": args.scale})
    results = VerificationService(seed, args.scale).run(args.suites)
    print(format_table(results))
    failed = [r for r in results if not r.passed]
    for r in failed:
        print(f"{r.name}: failing seeds {', '.join(str(s) for s in r.failing_seeds)}")
    return EXIT_RUNTIME_ERROR if failed else EXIT_OK


COMMANDS = {"worldgen": cmd_worldgen, "train": cmd_train, "eval": cmd_eval, "verify": cmd_verify}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Command-line entry point; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        settings = get_settings()
        if args.threads is not None:
            if args.threads < 1:
                raise InvalidConfigError(f"Invalid --threads {args.threads}: must be >= 1")
            settings = dataclasses.replace(settings, threads=args.threads)
        setup_logging(level=args.log_level or settings.log_level, log_file=settings.log_file)
    except InvalidConfigError as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return EXIT_USAGE_ERROR

    try:
        return COMMANDS[args.command](args, settings)
    except InvalidConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_USAGE_ERROR
    except (InfoGatherError, OSError) as e:
        logger.error(f"{args.command} failed: {e}", exc_info=logger.isEnabledFor(logging.DEBUG))
        return EXIT_RUNTIME_ERROR
    except json.JSONDecodeError as e:
        logger.error(f"Malformed JSON: {e}")
        return EXIT_USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
