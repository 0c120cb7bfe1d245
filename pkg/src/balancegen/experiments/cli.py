"""Command-line front end.

Usage::

    balancegen <command> --config <path> [--force] [--seed N] [--out DIR]

Commands run the pipeline through the named stage (earlier stages are
executed or skipped via their fingerprints): ``prepare``, ``train-gan``,
``generate``, ``filter``, ``train-clf``, ``evaluate``, ``report``.
``toy`` materializes just the procedural dataset, ``sweep`` runs the
limited-data sweep. Exit status is 0 on success and 1 with the failing
stage named on stderr otherwise.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .config import load_config
from .pipeline import StageError, run_pipeline
from .sweep import run_limited_data_sweep
from .toy import make_toy_dataset

_STAGE_COMMANDS = {
    "prepare": "prepare",
    "train-gan": "train-gan",
    "generate": "generate",
    "filter": "filter",
    "train-clf": "train-clf",
    "evaluate": "evaluate",
    "metrics": "metrics",
    "report": "report",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="balancegen",
        description="Conditional-GAN data balancing pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in list(_STAGE_COMMANDS) + ["toy", "sweep"]:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config (YAML)")
        p.add_argument("--force", action="store_true", help="rebuild stale stages")
        p.add_argument("--seed", type=int, default=None, help="override master seed")
        p.add_argument("--out", default=None, help="override output directory")
    return parser


def _load(args) -> "ExperimentConfig":
    config = load_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, master_seed=args.seed)
    if args.out is not None:
        config = dataclasses.replace(config, out_dir=args.out)
    return config


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    config = _load(args)
    try:
        if args.command == "toy":
            spec = config.dataset.toy
            if spec is None:
                print("config has no dataset.toy section", file=sys.stderr)
                return 1
            out = Path(config.out_dir) / "toy"
            from ..seeding import derive_seed

            make_toy_dataset(
                out,
                counts=tuple(spec.counts),
                seed=derive_seed(config.master_seed, "dataset", "toy"),
                style=spec.style,
                image_size=spec.image_size,
            )
            print(f"toy dataset written to {out}")
        elif args.command == "sweep":
            rows = run_limited_data_sweep(config, force=args.force)
            print(f"sweep complete: {len(rows)} result rows under {config.out_dir}/sweep")
        else:
            out = run_pipeline(config, through=_STAGE_COMMANDS[args.command], force=args.force)
            print(f"pipeline complete through {args.command}: {out}")
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
