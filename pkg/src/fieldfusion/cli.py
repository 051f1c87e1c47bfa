"""Command-line entry point: ``fieldfusion COMMAND --config scene.cfg``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .blending import STRATEGIES
from .harness.config import ConfigError, load_config, validate
from .harness.experiment import COMMANDS, run_experiment
from .harness.presets import PRESETS, preset_config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fieldfusion", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", type=Path, help="scene config file")
        src.add_argument("--preset", choices=sorted(PRESETS), help="built-in scene")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--strategy", choices=STRATEGIES)
        p.add_argument("--gamma", type=float, help="blending rate")
        p.add_argument("--tau", type=float, help="distance test ratio")
        p.add_argument("--budget", type=int, help="samples per ray")
        p.add_argument("--gamma-steps", type=int, help="points in the gamma sweep grid")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--workers", type=int, default=None, help="threads for independent renders")
        p.add_argument("-v", "--verbose", action="store_true")
    show = sub.add_parser("show-preset", help="print a built-in scene config")
    show.add_argument("name", choices=sorted(PRESETS))
    return parser


def _apply_overrides(cfg, args) -> None:
    if args.seed is not None:
        cfg.seed = args.seed
    if args.strategy is not None:
        cfg.blend.strategy = args.strategy
    if args.gamma is not None:
        cfg.blend.gamma = args.gamma
    if args.tau is not None:
        cfg.blend.tau = args.tau
    if args.budget is not None:
        cfg.blend.budget = args.budget
    if args.gamma_steps is not None:
        cfg.blend.gamma_steps = args.gamma_steps
    if args.out is not None:
        cfg.output = str(args.out)
    validate(cfg, "<command line>")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "show-preset":
        sys.stdout.write(PRESETS[args.name])
        return 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.config is not None:
            cfg = load_config(args.config)
            base = args.config.parent
        else:
            cfg = preset_config(args.preset)
            base = Path(".")
        _apply_overrides(cfg, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    status = run_experiment(cfg, args.command, base, args.workers)
    if status:
        print(f"error: {args.command} failed (see log above)", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
