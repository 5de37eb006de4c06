"""Command line entry point.

    hidsim run SCENARIO [--trace FILE] [--metrics FILE] [--seed N] [--mode MODE]
    hidsim compare BASELINE_METRICS VARIANT_METRICS

Exit codes: 0 success, 1 usage error, 2 configuration error, 3 the run
broke one of the simulator's invariants. Set HIDSIM_LOG (e.g. DEBUG) for
log output on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from typing import List, Optional

from .metrics import CompareError, MetricsReport, collect, compare
from .scenario import MODES, ConfigError, load_scenario
from .simcore import SimError
from .simulation import InvariantViolation, Simulation

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_INVARIANT = 3

log = logging.getLogger("hidsim")


def _write(path: str, text: str) -> None:
    if path == "-":
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def cmd_run(args: argparse.Namespace) -> int:
    try:
        sc = load_scenario(args.scenario)
        if args.seed is not None:
            # one seed drives everything random, the sensor layout included
            sc = dataclasses.replace(sc, seed=args.seed,
                                     topology=dataclasses.replace(sc.topology, rng_seed=args.seed))
        if args.mode is not None:
            sc = dataclasses.replace(sc, mode=args.mode)
        sim = Simulation(sc)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        sim.run()
    except (InvariantViolation, SimError) as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    report = collect(sim)
    if args.trace:
        _write(args.trace, sim.trace_text())
    if args.metrics:
        _write(args.metrics, report.to_json())
    if args.metrics != "-":
        sys.stdout.write(report.summary())
    return EXIT_OK


def _load_report(path: str) -> MetricsReport:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return MetricsReport.from_json(fh.read())
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"{path}: not a metrics report ({exc})") from exc


def cmd_compare(args: argparse.Namespace) -> int:
    try:
        base, variant = _load_report(args.baseline), _load_report(args.variant)
        ratios = compare(base, variant)
    except (ConfigError, CompareError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(ratios, sort_keys=True, indent=1))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hidsim", description="Hierarchical sensor-network IDS simulator")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one scenario file")
    r.add_argument("scenario", help="scenario YAML file")
    r.add_argument("--trace", metavar="FILE", help="write the event trace here ('-' for stdout)")
    r.add_argument("--metrics", metavar="FILE", help="write the metrics JSON here ('-' for stdout)")
    r.add_argument("--seed", type=int, help="override the scenario and layout seeds")
    r.add_argument("--mode", choices=MODES, help="override the IDS deployment mode")
    r.set_defaults(func=cmd_run)
    c = sub.add_parser("compare", help="variant/baseline ratios of two metrics files")
    c.add_argument("baseline")
    c.add_argument("variant")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    level = os.environ.get("HIDSIM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
