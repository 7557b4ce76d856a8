"""Command line front end.

Exit codes: 0 success (for ``diff``: traces equivalent), 2 validation
error or trace divergence, 3 runtime fault (kernel error, causality or
pacing violation, unreadable input).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .bus import CausalityFault
from .coordinator import KernelError
from .devs import ModelError
from .metrics import MetricsError, compare_traces, render_metrics
from .pacing import PacingViolation
from .runner import run_scenario
from .scenario import ScenarioError, default_scenario_text, parse_scenario
from .simtime import TimeOverflowError
from .vcs import MODES, VcsError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adhocsim",
                                description="ad-hoc network simulation runner")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a scenario")
    run.add_argument("scenario", nargs="?", help="scenario TOML file")
    run.add_argument("--mode", choices=MODES, help="override the scenario mode")
    run.add_argument("--seed", type=int, help="override the scenario seed")
    run.add_argument("--trace", metavar="PATH", help="write the event trace here")
    run.add_argument("--metrics", metavar="PATH", help="write metrics here instead of stdout")
    run.add_argument("--print-defaults", action="store_true",
                     help="print a scenario file with every default and exit")

    diff = sub.add_parser("diff", help="compare two trace files")
    diff.add_argument("trace_a")
    diff.add_argument("trace_b")
    diff.add_argument("--payload-only", action="store_true",
                      help="compare delivered payload multisets, ignoring timestamps")

    val = sub.add_parser("validate", help="check a scenario file")
    val.add_argument("scenario")
    return p


def _load_scenario(path: str):
    try:
        with open(path, "r", encoding="utf-8") as f:
            return parse_scenario(f.read())
    except OSError as e:
        raise ScenarioError([f"cannot read {path}: {e}"]) from e


def _cmd_run(args) -> int:
    if args.print_defaults:
        sys.stdout.write(default_scenario_text())
        return EXIT_OK
    if not args.scenario:
        sys.stderr.write("run: a scenario file is required (or --print-defaults)\n")
        return EXIT_VALIDATION
    cfg = _load_scenario(args.scenario)
    if args.mode:
        cfg = replace(cfg, mode=args.mode)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    result = run_scenario(cfg, trace_path=args.trace)
    text = render_metrics(result.metrics)
    if args.metrics:
        with open(args.metrics, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_diff(args) -> int:
    try:
        with open(args.trace_a, "r", encoding="utf-8") as f:
            a = f.readlines()
        with open(args.trace_b, "r", encoding="utf-8") as f:
            b = f.readlines()
    except OSError as e:
        sys.stderr.write(f"diff: {e}\n")
        return EXIT_RUNTIME
    report = compare_traces(a, b, payload_only=args.payload_only)
    sys.stdout.write(report.render())
    return EXIT_OK if report.equivalent else EXIT_VALIDATION


def _cmd_validate(args) -> int:
    _load_scenario(args.scenario)
    sys.stdout.write("ok\n")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "diff":
            return _cmd_diff(args)
        return _cmd_validate(args)
    except ScenarioError as e:
        for err in e.errors:
            sys.stderr.write(f"error: {err}\n")
        return EXIT_VALIDATION
    except (KernelError, ModelError, CausalityFault, PacingViolation,
            TimeOverflowError, MetricsError, VcsError, OSError) as e:
        sys.stderr.write(f"fault: {e}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
