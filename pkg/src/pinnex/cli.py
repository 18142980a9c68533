"""Command-line entry point: ``pinnex <command> --config run.yaml --out DIR``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import RunConfig, load_config

# subcommand -> task; 'fit' trains the bGEV point-process model
COMMANDS = {"simulate": "simulate", "fit": "bgev_pp", "predict": "predict", "score": "score",
            "bootstrap": "bootstrap", "sweep": "sweep", "gradcheck": "gradcheck",
            "threshold": "threshold", "occurrence": "occurrence"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pinnex", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {COMMANDS[name]} task")
        p.add_argument("--config", help="YAML or JSON run configuration")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--workers", type=int, default=1, help="worker processes for sub-runs")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--data", help="override the dataset path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .runner import run

    task = COMMANDS[args.command]
    overrides = {"task": task}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.data:
        overrides["data"] = args.data
    try:
        cfg = load_config(args.config) if args.config else RunConfig.from_dict({"task": task})
        cfg = cfg.with_overrides(**overrides)
        report = run(cfg, args.out, workers=max(1, args.workers))
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"pinnex {args.command}: error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps({"task": task, "out": args.out, "keys": sorted(report)}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
