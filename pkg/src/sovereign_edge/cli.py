"""``sovereign-sim``: run scenarios, check reports against expectations.

Exit status: 0 when every check matches its expected value, 1 when a check
or expectation fails, 2 for usage, parse, validation or I/O errors.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .report import (
    SchemaMismatch,
    build_report,
    load_expectations,
    load_report,
    make_expectations,
    render_text,
    verify,
    write_outputs,
)
from .scenario import ScenarioError, bundled_scenarios, load_scenario
from .sim import World, analyze

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2


def resolve_scenario(name: str) -> Path:
    path = Path(name)
    if path.exists():
        return path
    bundled = bundled_scenarios()
    if name in bundled:
        return bundled[name]
    return path  # let the loader report the missing file


def run_scenario(scenario, checks_only: bool = False, trials: int | None = None):
    world = None if checks_only else World(scenario).run()
    analysis = analyze(scenario, world, trials)
    return build_report(scenario, world, analysis), world


def cmd_run(args) -> int:
    scenario = load_scenario(resolve_scenario(args.scenario))
    if args.seed_override is not None:
        scenario = scenario.with_seed(args.seed_override)
    if args.trials is not None:
        scenario = replace(scenario, worm_trials=args.trials,
                           latency_probes=max(scenario.latency_probes, args.trials))
    report, world = run_scenario(scenario, args.checks_only)
    if args.out:
        write_outputs(report, Path(args.out), world)
    if not args.quiet:
        sys.stdout.write(render_text(report))
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def cmd_verify(args) -> int:
    diffs = verify(load_report(args.report), load_expectations(args.expectations))
    for d in diffs:
        print(f"DIFF {d}")
    print("verify: pass" if not diffs else f"verify: {len(diffs)} difference(s)")
    return EXIT_OK if not diffs else EXIT_CHECK_FAILED


def cmd_expect(args) -> int:
    text = make_expectations(load_report(args.report), args.rel_tol)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_list(args) -> int:
    for name, path in bundled_scenarios().items():
        print(f"{name}\t{path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sovereign-sim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and write its report")
    run.add_argument("--scenario", required=True, help="scenario file or bundled scenario name")
    run.add_argument("--out", help="output directory for report and logs")
    run.add_argument("--seed-override", type=int, help="replace the scenario seed")
    run.add_argument("--trials", type=int, help="Monte Carlo trials for worm and latency statistics")
    run.add_argument("--checks-only", action="store_true", help="skip the fleet simulation")
    run.add_argument("--quiet", action="store_true", help="do not print the text report")
    run.set_defaults(func=cmd_run)

    ver = sub.add_parser("verify", help="compare a report.jsonl with an expectations file")
    ver.add_argument("report")
    ver.add_argument("expectations")
    ver.set_defaults(func=cmd_verify)

    exp = sub.add_parser("expect", help="write an expectations file from a report.jsonl")
    exp.add_argument("report")
    exp.add_argument("--out")
    exp.add_argument("--rel-tol", type=float, default=0.25)
    exp.set_defaults(func=cmd_expect)

    ls = sub.add_parser("list", help="list bundled scenarios")
    ls.set_defaults(func=cmd_list)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if getattr(args, "trials", None) is not None and args.trials < 1:
        print("error: --trials must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (ScenarioError, SchemaMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
