#!/usr/bin/env python3
"""
FBNet Point Cloud Completion
Command line entry point
"""

import argparse
import logging
import os
import sys
from logging.handlers import RotatingFileHandler

from config.config import PROFILES, LoggingConfig, MetricConfig, PathConfig, load_train_config

TRAIN_FIELDS = (
    "learning_rate",
    "decay_factor",
    "decay_every",
    "beta1",
    "beta2",
    "batch_size",
    "epochs",
    "seed",
    "precision",
    "profile",
    "device",
    "num_workers",
    "tau",
    "time_steps",
    "feedback",
    "init_strategy",
    "pooling",
)


def check_dependencies():
    """Check if all required dependencies are installed"""
    required_packages = ["torch", "numpy", "pandas", "scipy", "sklearn", "matplotlib", "dotenv"]

    missing_packages = []
    for package in required_packages:
        try:
            __import__(package)
        except ImportError:
            missing_packages.append(package)

    if missing_packages:
        print(
            f"Missing required packages: {', '.join(missing_packages)}\n\n"
            f"Install all requirements with:\npip install -r requirements.txt",
            file=sys.stderr,
        )
        return False
    return True


def setup_directories():
    """Setup required directories"""
    for directory in (PathConfig.LOGS_DIR, PathConfig.DATA_DIR, PathConfig.RUNS_DIR):
        if not os.path.exists(directory):
            os.makedirs(directory)


def setup_logging(level: str = LoggingConfig.LOG_LEVEL):
    """Setup application logging"""
    os.makedirs(os.path.dirname(LoggingConfig.LOG_FILE), exist_ok=True)

    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format=LoggingConfig.LOG_FORMAT,
        handlers=[
            RotatingFileHandler(
                LoggingConfig.LOG_FILE,
                maxBytes=LoggingConfig.MAX_LOG_SIZE_MB * 1024 * 1024,
                backupCount=LoggingConfig.BACKUP_COUNT,
                encoding="utf-8",
            ),
            logging.StreamHandler(sys.stdout),
        ],
    )
    return logging.getLogger(LoggingConfig.LOGGER_NAME)


def add_train_flags(parser: argparse.ArgumentParser):
    """Flags mirroring TrainConfig; unset flags fall through to the config file and environment"""
    parser.add_argument("--config", help="dotenv-style KEY=value file of training settings")
    parser.add_argument("--learning-rate", type=float)
    parser.add_argument("--decay-factor", type=float)
    parser.add_argument("--decay-every", type=int)
    parser.add_argument("--beta1", type=float)
    parser.add_argument("--beta2", type=float)
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--precision", choices=("float32", "float64"))
    parser.add_argument("--profile", choices=PROFILES)
    parser.add_argument("--device")
    parser.add_argument("--num-workers", type=int)
    parser.add_argument("--tau", type=float)
    parser.add_argument("--time-steps", type=int)
    parser.add_argument("--feedback", action=argparse.BooleanOptionalAction, default=None)
    parser.add_argument("--init-strategy", choices=("A", "B", "C", "D", "E"))
    parser.add_argument("--pooling", choices=("adaptgp", "point", "graph"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fbnet", description="Feedback network for point cloud completion")
    parser.add_argument("--log-level", default=LoggingConfig.LOG_LEVEL)
    commands = parser.add_subparsers(dest="command", required=True)

    cmd = commands.add_parser("train", help="train on a dataset manifest")
    cmd.add_argument("--manifest", required=True)
    cmd.add_argument("--output-dir", default=os.path.join(PathConfig.RUNS_DIR, "train"))
    cmd.add_argument("--plot", action="store_true", help="also write learning curves")
    add_train_flags(cmd)

    cmd = commands.add_parser("eval", help="evaluate a checkpoint per time step")
    cmd.add_argument("--checkpoint", required=True)
    cmd.add_argument("--manifest", required=True)
    cmd.add_argument("--split", default="test", choices=("train", "val", "test"))
    cmd.add_argument("--time-steps", type=int)
    cmd.add_argument("--tau", type=float, default=MetricConfig.FSCORE_TAU)
    cmd.add_argument("--run-id")
    cmd.add_argument("--out", help="metric report CSV")
    cmd.add_argument("--per-shape", help="per-shape metric CSV")
    cmd.add_argument("--no-mmd", action="store_true")

    cmd = commands.add_parser("ablate", help="train and evaluate an ablation suite")
    cmd.add_argument("--suite", required=True)
    cmd.add_argument("--manifest", required=True)
    cmd.add_argument("--output-dir", default=os.path.join(PathConfig.RUNS_DIR, "ablation"))
    add_train_flags(cmd)

    cmd = commands.add_parser("complete", help="complete one XYZ file")
    cmd.add_argument("--checkpoint", required=True)
    cmd.add_argument("--input", required=True)
    cmd.add_argument("--output", required=True)
    cmd.add_argument("--time-steps", type=int)

    cmd = commands.add_parser("gen-data", help="generate a synthetic dataset")
    cmd.add_argument("--out-dir", default=PathConfig.DATA_DIR)
    cmd.add_argument("--num-shapes", type=int, default=64)
    cmd.add_argument("--seed", type=int, default=0)
    cmd.add_argument("--complete-size", type=int, default=1024)
    cmd.add_argument("--partial-size", type=int, default=512)
    cmd.add_argument("--keep-ratio", type=float, default=0.5)
    cmd.add_argument("--views-per-shape", type=int, default=1)
    cmd.add_argument("--val-fraction", type=float, default=0.1)
    cmd.add_argument("--test-fraction", type=float, default=0.1)
    cmd.add_argument("--workers", type=int, default=0)

    cmd = commands.add_parser("report-params", help="count learnable parameters")
    group = cmd.add_mutually_exclusive_group()
    group.add_argument("--checkpoint")
    group.add_argument("--profile", choices=PROFILES)
    return parser


def train_config_from_args(args):
    overrides = {name: getattr(args, name, None) for name in TRAIN_FIELDS}
    return load_train_config(args.config, overrides)


def run_command(args, logger) -> int:
    # heavy imports after the dependency check
    from src.data import DatasetManifest, generate_dataset
    from src.metrics import write_metric_reports
    from src import trainer

    logger.info(f"Running command: {args.command}")
    if args.command == "train":
        cfg = train_config_from_args(args)
        manifest = DatasetManifest.load(args.manifest)
        manifest.validate(parse=False)
        result = trainer.train(cfg, manifest, args.output_dir)
        if args.plot:
            trainer.plot_history(result.history_csv, os.path.join(args.output_dir, "history.png"))
        print(f"checkpoint: {result.checkpoint}\nbest val CD-L2: {result.best_val_cd:.6f}")

    elif args.command == "eval":
        manifest = DatasetManifest.load(args.manifest)
        result = trainer.evaluate(
            args.checkpoint,
            manifest,
            split=args.split,
            time_steps=args.time_steps,
            tau=args.tau,
            run_id=args.run_id,
            with_mmd=not args.no_mmd,
        )
        if args.out:
            write_metric_reports(result.reports, args.out)
        if args.per_shape:
            result.per_shape.to_csv(args.per_shape, index=False, encoding="utf-8")
        for report in result.reports:
            print(f"{report.run_id}: CD-L2 {report.cd_l2:.6f}  CD-L1 {report.cd_l1:.6f}  F1 {report.f1:.4f}")

    elif args.command == "ablate":
        cfg = train_config_from_args(args)
        manifest = DatasetManifest.load(args.manifest)
        manifest.validate(parse=False)
        print(trainer.ablate(args.suite, cfg, manifest, args.output_dir).to_string(index=False))

    elif args.command == "complete":
        trainer.complete(args.checkpoint, args.input, args.output, time_steps=args.time_steps)

    elif args.command == "gen-data":
        manifest = generate_dataset(
            args.out_dir,
            args.num_shapes,
            seed=args.seed,
            complete_size=args.complete_size,
            partial_size=args.partial_size,
            keep_ratio=args.keep_ratio,
            views_per_shape=args.views_per_shape,
            val_fraction=args.val_fraction,
            test_fraction=args.test_fraction,
            workers=args.workers,
        )
        print(f"{len(manifest)} pairs written to {args.out_dir}")

    elif args.command == "report-params":
        print(trainer.report_params(checkpoint=args.checkpoint, profile=args.profile))

    return 0


def main(argv=None) -> int:
    """Main application entry point"""
    args = build_parser().parse_args(argv)

    if not check_dependencies():
        return 1

    setup_directories()
    logger = setup_logging(args.log_level)

    from src.exceptions import FBNetError

    try:
        return run_command(args, logger)
    except FBNetError as e:
        logger.error(f"{type(e).__name__}: {str(e)}")
        print(f"error: {str(e)}", file=sys.stderr)
        return e.exit_code
    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        return 130


if __name__ == "__main__":
    sys.exit(main())
