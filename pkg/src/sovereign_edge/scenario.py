"""Declarative scenario files.

Scenarios are TOML documents with fixed sections; see ``docs/scenario_format.md``
for the grammar.  Loading happens in two steps: :func:`parse_scenario` turns
text into nested tables (raising :class:`ParseError` with a line and column),
then :func:`build_scenario` checks every field and produces a
:class:`Scenario` (raising :class:`ValidationError` naming the field).
"""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .channel import ChannelConfig, ChannelKind
from .threatgraph import WormKind
from .timebase import DAY, HOUR, MINUTE, SECOND

MODES = ("sovereign", "connected")


class ScenarioError(Exception):
    pass


class ParseError(ScenarioError):
    def __init__(self, source: str, line: int | None, column: int | None, message: str):
        self.source = source
        self.line = line
        self.column = column
        self.message = message
        where = source if line is None else f"{source}:{line}:{column}"
        super().__init__(f"{where}: {message}")


class ValidationError(ScenarioError):
    def __init__(self, field_path: str, message: str):
        self.field = field_path
        super().__init__(f"{field_path}: {message}")


@dataclass(frozen=True)
class Revocation:
    device: int
    at: int


@dataclass(frozen=True)
class Suppression:
    device: int
    at: int


@dataclass(frozen=True)
class FirmwareRelease:
    size_bytes: int
    version: int
    at: int
    chunk_bytes: int


@dataclass(frozen=True)
class Scenario:
    name: str
    mode: str
    seed: int
    duration: int
    channel: ChannelConfig
    terminals: int
    usb_whitelist: tuple[tuple[int, int, int], ...]
    ttl: int
    quantile: float
    min_samples: int
    sweep_period: int
    escalation_delay: int
    session_interval: int
    session_jitter: float
    session_length: int
    payload_bytes: int
    provision_lead: int
    graph_vertices: int
    graph_mean_out_degree: float
    graph_vendor_fraction: float
    worm_kinds: tuple[WormKind, ...]
    infection_probabilities: tuple[float, ...]
    worm_trials: int
    scan_rate: int
    compromised_companions: tuple[int, ...] = ()
    absent_companions: tuple[int, ...] = ()
    revocations: tuple[Revocation, ...] = ()
    suppressions: tuple[Suppression, ...] = ()
    firmware: tuple[FirmwareRelease, ...] = ()
    latency_probes: int = 0
    expected_checks: dict[str, bool] = field(default_factory=dict)

    def with_seed(self, seed: int) -> Scenario:
        return replace(self, seed=seed)


_LOCATION = re.compile(r"\(at line (\d+), column (\d+)\)")


def parse_scenario(text: str, source: str = "<scenario>") -> dict[str, Any]:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        msg = str(exc)
        m = _LOCATION.search(msg)
        line = int(m.group(1)) if m else None
        col = int(m.group(2)) if m else None
        raise ParseError(source, line, col, _LOCATION.sub("", msg).strip()) from None


class _Section:
    """Typed field access with dotted-path error messages."""

    def __init__(self, data: dict, path: str):
        if not isinstance(data, dict):
            raise ValidationError(path, "must be a table")
        self.data = data
        self.path = path
        self.used: set[str] = set()

    def _get(self, key, default, required):
        self.used.add(key)
        if key not in self.data:
            if required:
                raise ValidationError(f"{self.path}.{key}", "is required")
            return default
        return self.data[key]

    def int(self, key, default=None, required=False, minimum=None, maximum=None):
        v = self._get(key, default, required)
        if isinstance(v, bool) or not isinstance(v, int):
            raise ValidationError(f"{self.path}.{key}", f"expected integer, got {v!r}")
        if minimum is not None and v < minimum:
            raise ValidationError(f"{self.path}.{key}", f"must be >= {minimum}")
        if maximum is not None and v > maximum:
            raise ValidationError(f"{self.path}.{key}", f"must be <= {maximum}")
        return v

    def num(self, key, default=None, required=False, lo=None, hi=None):
        v = self._get(key, default, required)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ValidationError(f"{self.path}.{key}", f"expected number, got {v!r}")
        if (lo is not None and v < lo) or (hi is not None and v > hi):
            raise ValidationError(f"{self.path}.{key}", f"must lie in [{lo}, {hi}]")
        return float(v)

    def str(self, key, default=None, required=False, choices=None):
        v = self._get(key, default, required)
        if not isinstance(v, str):
            raise ValidationError(f"{self.path}.{key}", f"expected string, got {v!r}")
        if choices is not None and v not in choices:
            raise ValidationError(f"{self.path}.{key}", f"must be one of {', '.join(choices)}")
        return v

    def bool(self, key, default=None, required=False):
        v = self._get(key, default, required)
        if not isinstance(v, bool):
            raise ValidationError(f"{self.path}.{key}", f"expected boolean, got {v!r}")
        return v

    def list(self, key, default=()):
        v = self._get(key, default, False)
        if not isinstance(v, (list, tuple)):
            raise ValidationError(f"{self.path}.{key}", "expected array")
        return list(v)

    def finish(self) -> None:
        extra = sorted(set(self.data) - self.used)
        if extra:
            raise ValidationError(f"{self.path}.{extra[0]}", "unknown field")


SECTIONS = ("scenario", "channel", "fleet", "sessions", "graph", "adversary", "firmware", "expect")


def _seconds(sec: _Section, key: str, unit: int, default: float) -> int:
    return round(sec.num(key, default, lo=0) * unit)


def build_scenario(doc: dict[str, Any]) -> Scenario:
    unknown = sorted(set(doc) - set(SECTIONS))
    if unknown:
        raise ValidationError(unknown[0], "unknown section")
    head = _Section(doc.get("scenario", {}), "scenario")
    name = head.str("name", required=True)
    mode = head.str("mode", "sovereign", choices=MODES)
    seed = head.int("seed", required=True, minimum=0)
    duration = _seconds(head, "duration_days", DAY, 30)
    head.finish()

    ch = _Section(doc.get("channel", {}), "channel")
    kinds = [k.value for k in ChannelKind]
    kind = ChannelKind(ch.str("kind", ChannelKind.SATELLITE_BROADCAST.value, choices=kinds))
    try:
        channel = ChannelConfig(
            kind=kind,
            throughput_bps=ch.int("throughput_bps", 50_000_000, minimum=1),
            cycle_period=_seconds(ch, "cycle_period_s", SECOND, 300),
            loss_rate=ch.num("loss_rate", 0.0, lo=0.0, hi=0.999),
            policy_intact=ch.bool("policy_intact", True),
        )
    except ValueError as exc:
        raise ValidationError("channel", str(exc)) from None
    ch.finish()

    fl = _Section(doc.get("fleet", {}), "fleet")
    terminals = fl.int("terminals", 4, minimum=1)
    whitelist = []
    for i, entry in enumerate(fl.list("usb_whitelist")):
        if (not isinstance(entry, list) or len(entry) != 3
                or not all(isinstance(x, int) and not isinstance(x, bool) for x in entry)):
            raise ValidationError(f"fleet.usb_whitelist[{i}]", "expected [vendor, product, class]")
        whitelist.append(tuple(entry))
    ttl = _seconds(fl, "ttl_s", SECOND, 60)
    quantile = fl.num("quantile", 0.999, lo=0.5, hi=1.0)
    min_samples = fl.int("min_samples", 20, minimum=1)
    sweep_period = _seconds(fl, "sweep_period_s", SECOND, 3600)
    escalation = _seconds(fl, "escalation_h", HOUR, 24)
    fl.finish()
    if sweep_period <= 0:
        raise ValidationError("fleet.sweep_period_s", "must be positive")

    se = _Section(doc.get("sessions", {}), "sessions")
    interval = _seconds(se, "interval_h", HOUR, 24)
    jitter = se.num("jitter", 0.2, lo=0.0, hi=0.9)
    length = _seconds(se, "duration_min", MINUTE, 15)
    payload_bytes = se.int("payload_bytes", 2048, minimum=1)
    lead = _seconds(se, "provision_lead_h", HOUR, 1)
    se.finish()
    if interval <= 0:
        raise ValidationError("sessions.interval_h", "must be positive")
    if lead <= channel.cycle_period:
        raise ValidationError("sessions.provision_lead_h", "must exceed one broadcast cycle")

    gr = _Section(doc.get("graph", {}), "graph")
    vertices = gr.int("vertices", 60, minimum=2)
    degree = gr.num("mean_out_degree", 3.0, lo=0.0)
    vendor_fraction = gr.num("vendor_fraction", 0.05, lo=0.0, hi=1.0)
    gr.finish()

    ad = _Section(doc.get("adversary", {}), "adversary")
    worm_names = [k.value for k in WormKind]
    worms = []
    for i, w in enumerate(ad.list("worm", worm_names)):
        if w not in worm_names:
            raise ValidationError(f"adversary.worm[{i}]", f"must be one of {', '.join(worm_names)}")
        worms.append(WormKind(w))
    probs = []
    for i, p in enumerate(ad.list("infection_probability", [0.1, 0.5, 1.0])):
        if isinstance(p, bool) or not isinstance(p, (int, float)) or not 0 < p <= 1:
            raise ValidationError(f"adversary.infection_probability[{i}]", "must lie in (0, 1]")
        probs.append(float(p))
    worm_trials = ad.int("worm_trials", 20, minimum=1)
    scan_rate = ad.int("scan_rate", 8, minimum=1)
    compromised = tuple(_device_list(ad, "compromised_companions", terminals))
    absent = tuple(_device_list(ad, "absent_companions", terminals))
    revocations = tuple(
        Revocation(d, t) for d, t in _timed(ad, "revocations", terminals, "at_h", HOUR)
    )
    suppressions = tuple(
        Suppression(d, t) for d, t in _timed(ad, "suppressions", terminals, "at_day", DAY)
    )
    probes = ad.int("latency_probes", 0, minimum=0)
    ad.finish()

    releases = []
    fw_doc = doc.get("firmware", [])
    if isinstance(fw_doc, dict):
        fw_doc = [fw_doc]
    for i, entry in enumerate(fw_doc):
        fw = _Section(entry, f"firmware[{i}]")
        releases.append(FirmwareRelease(
            size_bytes=fw.int("size_bytes", required=True, minimum=1),
            version=fw.int("version", required=True, minimum=2),
            at=_seconds(fw, "at_h", HOUR, 1),
            chunk_bytes=fw.int("chunk_bytes", 1 << 19, minimum=1, maximum=1 << 19),
        ))
        fw.finish()

    ex = doc.get("expect", {})
    if not isinstance(ex, dict) or not all(isinstance(v, bool) for v in ex.values()):
        raise ValidationError("expect", "must map check names to booleans")

    return Scenario(
        name=name, mode=mode, seed=seed, duration=duration, channel=channel,
        terminals=terminals, usb_whitelist=tuple(whitelist), ttl=ttl, quantile=quantile,
        min_samples=min_samples, sweep_period=sweep_period, escalation_delay=escalation,
        session_interval=interval, session_jitter=jitter, session_length=length,
        payload_bytes=payload_bytes, provision_lead=lead, graph_vertices=vertices,
        graph_mean_out_degree=degree, graph_vendor_fraction=vendor_fraction,
        worm_kinds=tuple(worms), infection_probabilities=tuple(probs), worm_trials=worm_trials,
        scan_rate=scan_rate, compromised_companions=compromised, absent_companions=absent,
        revocations=revocations, suppressions=suppressions, firmware=tuple(releases),
        latency_probes=probes, expected_checks=dict(ex),
    )


def _device_list(sec: _Section, key: str, terminals: int) -> list[int]:
    out = []
    for i, d in enumerate(sec.list(key)):
        if isinstance(d, bool) or not isinstance(d, int) or not 1 <= d <= terminals:
            raise ValidationError(f"{sec.path}.{key}[{i}]", f"terminal index must lie in [1, {terminals}]")
        out.append(d)
    if len(set(out)) != len(out):
        raise ValidationError(f"{sec.path}.{key}", "duplicate terminal index")
    return out


def _timed(sec: _Section, key: str, terminals: int, time_key: str, unit: int):
    out = []
    for i, entry in enumerate(sec.list(key)):
        sub = _Section(entry, f"{sec.path}.{key}[{i}]")
        d = sub.int("device", required=True, minimum=1)
        if d > terminals:
            raise ValidationError(f"{sub.path}.device", f"terminal index must lie in [1, {terminals}]")
        out.append((d, _seconds(sub, time_key, unit, 0)))
        sub.finish()
    return out


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc.strerror or exc}") from None
    return build_scenario(parse_scenario(text, str(path)))


def bundled_scenarios() -> dict[str, Path]:
    root = Path(__file__).parent / "scenarios"
    return {p.stem: p for p in sorted(root.glob("*.toml")) if not p.stem.endswith(".expect")}
