"""Command line entry point: ``jpcomp run`` and ``jpcomp sweep``."""

import argparse
import json
import logging
import math
import sys

from .config import load_config
from .errors import ConfigurationError
from .experiment import run_scenario, run_sweep


def _parse_value(text):
    low = text.strip().lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("inf", "infinity"):
        return math.inf
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text.strip()


def build_parser():
    parser = argparse.ArgumentParser(
        prog="jpcomp", description="Joint-transmission CoMP beamforming simulator")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate one configuration")
    run.add_argument("--config", required=True, help="flat YAML configuration file")
    run.add_argument("--seed", type=int, help="override the configured seed")
    run.add_argument("--out", help="CSV output path (default: standard output)")

    sweep = sub.add_parser("sweep", help="repeat a configuration over one parameter")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--axis", required=True, help="configuration field to vary")
    sweep.add_argument("--values", required=True, help="comma separated values")
    sweep.add_argument("--seeds", type=int, default=1, help="seeds per value")
    sweep.add_argument("--out-dir", default=".", help="directory for per-value CSVs")
    sweep.add_argument("--workers", type=int, default=1, help="parallel processes")
    return parser


def _summary_line(summary):
    keys = ("algorithm", "seed", "frames", "final_sum_rate", "mean_effective_rate")
    return json.dumps({k: summary[k] for k in keys if k in summary})


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.command == "run":
            if args.seed is not None:
                cfg = cfg.replace(seed=args.seed)
            if args.out:
                result = run_scenario(cfg, args.out)
            else:
                result = run_scenario(cfg, sys.stdout)
            print(_summary_line(result.summary),
                  file=sys.stdout if args.out else sys.stderr)
            if "error" in result.summary:
                print(f"error: {result.summary['error']}", file=sys.stderr)
                return 2
            return 0
        values = [_parse_value(v) for v in args.values.split(",") if v.strip()]
        rows = run_sweep(cfg, args.axis, values, args.seeds, args.out_dir,
                         args.workers)
        failed = False
        for row in rows:
            print(json.dumps(row))
            failed |= bool(row["errors"])
        return 2 if failed else 0
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
