"""Command-line entry point.

    memadm encode --config run.json --out outdir [--seed N] [--threads N]

Exit status: 0 on success, 2 for configuration errors, 3 for runtime or
numerical failures.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import pipeline
from .config import RunConfig, load_config, validate_config
from .errors import ConfigError, MemadmError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

log = logging.getLogger("memadm")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="memadm", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in [
        ("encode", "filterbank + adaptive loop; writes events, traces, rates, cochleagram"),
        ("compare", "adaptive run against a fixed threshold with the same spike budget"),
        ("characterize-device", "pulse a device model, fit its relaxation, sample a population"),
        ("rate-sweep", "spike count of a tone against the rate law over threshold currents"),
    ]:
        s = sub.add_parser(name, help=text, description=text)
        s.add_argument("--config", help="JSON config file or a previous run's manifest.json")
        s.add_argument("--out", help="output directory (overrides output_dir in the config)")
        s.add_argument("--seed", type=int, help="run seed (overrides the config)")
        s.add_argument("--threads", type=int, default=1, help="worker threads for per-channel encoding")
    return p


def _resolve(args) -> RunConfig:
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1", "--threads")
    if args.seed is not None and args.seed < 0:
        raise ConfigError("--seed must be >= 0", "--seed")
    overrides = {"seed": args.seed, "output_dir": args.out}
    cfg = load_config(args.config, **overrides) if args.config else validate_config({}, **overrides)
    if not cfg.output_dir:
        raise ConfigError("no output directory: pass --out or set output_dir", "output_dir")
    return cfg


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with np.errstate(invalid="raise", divide="raise", over="raise"):
            if args.command == "encode":
                summary = pipeline.cmd_encode(cfg, cfg.output_dir, threads=args.threads)
            elif args.command == "compare":
                summary = pipeline.cmd_compare(cfg, cfg.output_dir, threads=args.threads)
            elif args.command == "characterize-device":
                summary = pipeline.cmd_characterize_device(cfg, cfg.output_dir)
            else:
                summary = pipeline.cmd_rate_sweep(cfg, cfg.output_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MemadmError, ValueError, ArithmeticError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
