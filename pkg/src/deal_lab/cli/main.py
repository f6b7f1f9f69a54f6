"""``deal-lab`` entry point: argument parsing, thread limits and exit codes."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERIC = 0, 1, 2, 3, 4
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML experiment config (defaults apply to missing keys)")
    common.add_argument("--seed", type=int, help="override the seed this command consumes")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--force", action="store_true", help="replace an existing output directory")
    common.add_argument("--dry-run", action="store_true", help="validate inputs and print the plan without running")
    common.add_argument("--threads", type=int, help="BLAS thread count (set before numpy loads)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="deal-lab", description="Discrepancy-based active learning lab on synthetic segmentation data.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("gen-data", parents=[common], help="render the synthetic dataset; --seed sets the dataset seed")
    p = sub.add_parser("gen-cams", parents=[common], help="train the classifier and write CAM triples; --seed sets the classifier seed")
    p.add_argument("--data", type=Path, required=True, help="dataset directory from gen-data")
    p = sub.add_parser("audit-cams", parents=[common], help="count CAM nesting violations")
    p.add_argument("--cams", type=Path, required=True, help="CAM directory from gen-cams")
    p = sub.add_parser("run-al", parents=[common], help="active-learning experiment; --seed runs that single seed")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--cams", type=Path, required=True)
    p.add_argument("--strategy", action="append", help="strategy to run (repeatable); overrides [al] strategies")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--kfold", action="store_true", help="run every configured fold")
    mode.add_argument("--ablation", action="store_true", help="produce the four-row ablation table")
    p = sub.add_parser("report", parents=[common], help="merge run directories into one summary")
    p.add_argument("runs", nargs="+", type=Path, help="run directories from run-al")
    return parser


def _config(args):
    from .config import load_config

    config = load_config(args.config)
    if args.seed is not None:
        section, key = {"gen-data": ("dataset", "seed"), "gen-cams": ("classifier", "seed")}.get(args.command, ("al", "seeds"))
        config = config.with_overrides(section, **{key: [args.seed] if key == "seeds" else args.seed})
    return config


def _dispatch(args) -> int:
    from . import commands

    config = _config(args)
    if args.command == "audit-cams":
        return commands.audit_cams(config, args.cams)
    if args.out is None and not args.dry_run:
        from ..errors import ConfigError

        raise ConfigError(f"{args.command} needs --out")
    if args.command == "gen-data":
        if args.dry_run:
            print(f"plan: {sum(config['dataset']['counts'])} samples of {config['dataset']['image_size']} px, seed {config['dataset']['seed']}")
            return EXIT_OK
        return commands.gen_data(config, args.out, args.force)
    if args.command == "gen-cams":
        if args.dry_run:
            print(f"plan: classifier {config['classifier']['epochs']} epochs, CRF {'on' if config['cam']['use_crf'] else 'off'}")
            return EXIT_OK
        return commands.gen_cams(config, args.data, args.out, args.force)
    if args.command == "run-al":
        return commands.run_al(config, args.data, args.cams, args.out, args.force, args.strategy, args.kfold, args.ablation, args.dry_run)
    return commands.report(args.runs, args.out, args.force)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        for var in THREAD_VARS:
            os.environ[var] = str(args.threads)
    level = logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    logging.getLogger("deal_lab").setLevel(level)
    from ..errors import ConfigError, MissingArtifactError, NumericError

    try:
        return _dispatch(args)
    except MissingArtifactError as exc:
        logging.error("missing artifact: %s", exc)
        return EXIT_MISSING
    except ConfigError as exc:
        logging.error("config error: %s", exc)
        return EXIT_CONFIG
    except NumericError as exc:
        logging.error("numeric failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
