"""Run reports, expectation files and report verification.

A report has two renderings of the same content: ``report.txt`` for people
and ``report.jsonl`` for tools.  Both are pure functions of the run, so the
same (scenario, seed) gives byte-identical files.  Formats are documented in
``docs/report_format.md``.
"""

from __future__ import annotations

import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .records import dumps, to_record
from .scenario import Scenario
from .sim import OPERATIONAL_CHECKS, STRUCTURAL_CHECKS, Analysis, World, enforcement_label, measurements
from .timebase import to_seconds

SCHEMA = "sovereign-edge-report/1"
DEFAULT_REL_TOL = 0.25

# what a connected terminal is expected to show: the properties fail
CONNECTED_FAILS = frozenset(STRUCTURAL_CHECKS) | {"session_confinement"}


class SchemaMismatch(Exception):
    pass


@dataclass(frozen=True)
class CheckLine:
    name: str
    holds: bool
    expected: bool
    detail: str

    @property
    def passed(self) -> bool:
        return self.holds == self.expected


@dataclass
class RunReport:
    header: dict[str, Any]
    checks: list[CheckLine]
    measurements: dict[str, float | int]
    reduction: Any
    anomalies: list[Any] = field(default_factory=list)
    actions: list[Any] = field(default_factory=list)
    revocations: list[Any] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def expected_value(scenario: Scenario, check: str) -> bool:
    if check in scenario.expected_checks:
        return scenario.expected_checks[check]
    if check == "physical_adversary_channels":
        return True  # the physical adversary always keeps some channel
    if scenario.mode == "connected":
        return check not in CONNECTED_FAILS
    return True


def build_report(scenario: Scenario, world: World | None, analysis: Analysis) -> RunReport:
    header = {
        "schema": SCHEMA,
        "scenario": scenario.name,
        "mode": scenario.mode,
        "seed": scenario.seed,
        "channel": scenario.channel.kind.value,
        "enforcement": enforcement_label(scenario.channel),
        "cycle_period_s": to_seconds(scenario.channel.cycle_period),
        "duration_s": to_seconds(scenario.duration),
        "terminals": scenario.terminals,
        "checks_only": world is None,
    }
    order = list(STRUCTURAL_CHECKS) + list(OPERATIONAL_CHECKS) + ["physical_adversary_channels"]
    checks = [
        CheckLine(name, r.holds, expected_value(scenario, name), r.detail)
        for name in order if (r := analysis.checks.get(name)) is not None
    ]
    rep = RunReport(header, checks, measurements(world, analysis), analysis.reduction)
    if world is not None:
        rep.anomalies = list(world.backend.anomaly_log)
        rep.actions = list(world.backend.actions)
        rep.revocations = list(world.backend.revocations)
    return rep


def render_jsonl(report: RunReport) -> str:
    lines = [json.dumps({"record": "header", **report.header}, sort_keys=True)]
    for c in report.checks:
        lines.append(json.dumps({"record": "check", "name": c.name, "holds": c.holds,
                                 "expected": c.expected, "passed": c.passed, "detail": c.detail},
                                sort_keys=True))
    for name, value in report.measurements.items():
        lines.append(json.dumps({"record": "measurement", "name": name, "value": value},
                                sort_keys=True))
    lines.append(json.dumps({"record": "reduction", "report": to_record(report.reduction)},
                            sort_keys=True))
    for kind, items in (("anomaly", report.anomalies), ("action", report.actions),
                        ("revocation", report.revocations)):
        for item in items:
            lines.append(json.dumps({"record": kind, "data": json.loads(dumps(item))},
                                    sort_keys=True))
    lines.append(json.dumps({"record": "summary", "passed": report.passed,
                             "failed_checks": [c.name for c in report.checks if not c.passed]},
                            sort_keys=True))
    return "".join(line + "\n" for line in lines)


def render_text(report: RunReport) -> str:
    h = report.header
    out = [
        f"scenario {h['scenario']}  mode={h['mode']}  seed={h['seed']}",
        f"channel {h['channel']} ({h['enforcement']})  cycle={h['cycle_period_s']:g}s  "
        f"terminals={h['terminals']}  duration={h['duration_s']:.0f}s",
        "",
        "checks",
    ]
    width = max((len(c.name) for c in report.checks), default=10)
    for c in report.checks:
        mark = "PASS" if c.passed else "FAIL"
        out.append(f"  {mark}  {c.name:<{width}}  holds={str(c.holds).lower():<5}  "
                   f"expected={str(c.expected).lower():<5}  {c.detail}")
    out += ["", "measurements"]
    mwidth = max((len(k) for k in report.measurements), default=10)
    for k, v in report.measurements.items():
        out.append(f"  {k:<{mwidth}}  {v}")
    red = report.reduction
    out += ["", f"threat-model reduction ({red.mode})", "  attack class                    status"]
    for row in red.eliminated:
        out.append(f"  {row.attack_class:<30}  {row.status:<28}  [{', '.join(row.evidence)}]")
    out += ["", "  residual class (physical adversary)  mitigation"]
    for row in red.residual:
        out.append(f"  {row.attack_class:<35}  {row.mitigation}")
    out += [
        "",
        f"  residual risk, sovereign terminal: {red.residual_risk_sovereign}",
        f"  residual risk, connected terminal: {red.residual_risk_connected}",
        f"  difference: {red.risk_delta}",
        "",
        "  assumptions",
    ]
    out += [f"    - {a}" for a in red.assumptions]
    if report.anomalies:
        out += ["", "anomaly log"]
        for f in report.anomalies:
            out.append(f"  t={to_seconds(f.flagged_at):.0f}s  {f.device.hex()}  {f.kind}  "
                       f"elapsed={to_seconds(f.elapsed):.0f}s  threshold={to_seconds(f.threshold):.0f}s")
    if report.actions:
        out += ["", "operator actions"]
        for a in report.actions:
            out.append(f"  t={to_seconds(a.issued_at):.0f}s  tier {int(a.tier)} {a.tier.name}  "
                       f"{a.device.hex()}  resolution={a.resolution}")
    out += ["", f"result: {'PASS' if report.passed else 'FAIL'}"]
    return "\n".join(out) + "\n"


def write_outputs(report: RunReport, out_dir: Path, world: World | None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.txt").write_text(render_text(report), encoding="utf-8")
    (out_dir / "report.jsonl").write_text(render_jsonl(report), encoding="utf-8")
    if world is not None:
        (out_dir / "trace.jsonl").write_text(world.trace.to_jsonl(), encoding="utf-8")
        (out_dir / "telemetry.jsonl").write_text(world.backend.export_telemetry(), encoding="utf-8")


# -- verification ----------------------------------------------------------


def load_report(path: str | Path) -> dict[str, Any]:
    header = None
    checks: dict[str, bool] = {}
    values: dict[str, float] = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaMismatch(f"{path}:{n}: not JSON ({exc.msg})") from None
        kind = rec.get("record")
        if kind == "header":
            header = rec
        elif kind == "check":
            checks[rec["name"]] = rec["holds"]
        elif kind == "measurement":
            values[rec["name"]] = rec["value"]
    if header is None or header.get("schema") != SCHEMA:
        raise SchemaMismatch(f"{path}: missing or unknown schema (want {SCHEMA})")
    return {"header": header, "checks": checks, "measurements": values}


def load_expectations(path: str | Path) -> dict[str, Any]:
    try:
        doc = tomllib.loads(Path(path).read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise SchemaMismatch(f"{path}: {exc}") from None
    if doc.get("schema") != SCHEMA:
        raise SchemaMismatch(f"{path}: missing or unknown schema (want {SCHEMA})")
    unknown = set(doc) - {"schema", "scenario", "checks", "measurements"}
    if unknown:
        raise SchemaMismatch(f"{path}: unknown key {sorted(unknown)[0]}")
    for name, bound in doc.get("measurements", {}).items():
        if not isinstance(bound, dict) or not set(bound) <= {"value", "rel_tol", "abs_tol", "min", "max"}:
            raise SchemaMismatch(f"{path}: measurements.{name} must be a table of value/rel_tol/abs_tol/min/max")
    return doc


@dataclass(frozen=True)
class Difference:
    field: str
    expected: Any
    actual: Any

    def __str__(self) -> str:
        return f"{self.field}: expected {self.expected}, got {self.actual}"


def verify(report: dict[str, Any], expectations: dict[str, Any]) -> list[Difference]:
    diffs = []
    scenario = expectations.get("scenario")
    if scenario is not None and scenario != report["header"]["scenario"]:
        diffs.append(Difference("scenario", scenario, report["header"]["scenario"]))
    for name, want in sorted(expectations.get("checks", {}).items()):
        got = report["checks"].get(name)
        if got != want:
            diffs.append(Difference(f"checks.{name}", want, got))
    for name, bound in sorted(expectations.get("measurements", {}).items()):
        got = report["measurements"].get(name)
        if got is None:
            diffs.append(Difference(f"measurements.{name}", bound, None))
            continue
        if "min" in bound and got < bound["min"]:
            diffs.append(Difference(f"measurements.{name}", f">= {bound['min']}", got))
        if "max" in bound and got > bound["max"]:
            diffs.append(Difference(f"measurements.{name}", f"<= {bound['max']}", got))
        if "value" in bound:
            want = bound["value"]
            if not math.isclose(got, want, rel_tol=bound.get("rel_tol", 0.0),
                                abs_tol=bound.get("abs_tol", 0.0)):
                diffs.append(Difference(f"measurements.{name}", want, got))
    return diffs


def _toml_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    return json.dumps(v)


def make_expectations(report: dict[str, Any], rel_tol: float = DEFAULT_REL_TOL) -> str:
    """Expectation file that the given report passes."""
    lines = [f"schema = {_toml_value(SCHEMA)}",
             f"scenario = {_toml_value(report['header']['scenario'])}", "", "[checks]"]
    for name, holds in sorted(report["checks"].items()):
        lines.append(f"{name} = {_toml_value(holds)}")
    lines += ["", "[measurements]"]
    for name, value in sorted(report["measurements"].items()):
        lines.append(f"{name} = {{ value = {_toml_value(value)}, rel_tol = {rel_tol!r}, abs_tol = 1e-9 }}")
    return "\n".join(lines) + "\n"
