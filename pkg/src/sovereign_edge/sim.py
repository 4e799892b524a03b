"""Deterministic discrete-event world for one scenario.

Time is integer microseconds.  Every random draw comes from a
``random.Random`` seeded from the scenario seed and a fixed stream name, so a
(scenario, seed) pair always produces the same run.  Events at the same tick
are ordered by a fixed priority, then by insertion order.
"""

from __future__ import annotations

import heapq
import json
import os
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

from .channel import ChannelConfig, Enforcement, OpticalLink
from .companion import CompanionDevice, LifecycleEvent
from .fleet import FleetBackend, RevokedDevice, Tier
from .optical import LifecycleKind
from .scenario import Scenario
from .session_crypto import AuthFailure, Expired, SessionMismatch
from .terminal import NoPendingPayload, RevokedTerminal, Terminal
from .threatgraph import (
    PHYSICAL_ADVERSARY,
    REMOTE_ADVERSARY,
    CheckResult,
    NetworkGraph,
    WormKind,
    botnet_enrollment_check,
    connected_surface,
    lateral_paths,
    random_institutional_graph,
    reduction_report,
    remote_compromise_channels,
    remote_surface,
    simulate_worm,
    sovereign_surface,
)
from .timebase import to_seconds
from .trace import NETWORK, Trace
from .wire import DeviceId, PayloadType

# same-tick ordering
P_OPERATOR = 0
P_CYCLE = 1
P_DELIVERY = 2
P_SESSION = 3
P_SWEEP = 4

CONNECTED_TERMINAL = "terminal"

STRUCTURAL_CHECKS = (
    "remote_surface_empty",
    "remote_compromise_none",
    "terminal_outside_graph",
    "graph_isolation",
    "worm_isolation",
    "botnet_not_enrollable",
    "vendor_pivot_isolation",
)
OPERATIONAL_CHECKS = (
    "session_confinement",
    "stage_ordering",
    "push_only_management",
    "verify_before_parse",
    "revocation_latency_bound",
    "absence_only_flags",
)


def stream(seed: int, name: str) -> random.Random:
    return random.Random(f"{seed}/{name}")


@dataclass
class Site:
    index: int
    terminal: Terminal
    companion: CompanionDevice
    suppressed_at: int | None = None

    @property
    def device(self) -> DeviceId:
        return self.terminal.device


@dataclass
class SessionRecord:
    patient: int
    device: str
    session: str
    scheduled_at: int
    outcome: str = "pending"


@dataclass
class WormSummary:
    kind: WormKind
    probability: float
    trials: int = 0
    terminal_infections: int = 0
    incomplete: int = 0
    infected_fraction_sum: float = 0.0
    ticks_sum: int = 0


class World:
    def __init__(self, scenario: Scenario, audit: bool = True):
        self.scenario = scenario
        seed = scenario.seed
        self.trace = Trace()
        self.audit = audit
        self.sensitive: list[bytes] = []
        self._schedule_rng = stream(seed, "schedule")
        self._payload_rng = stream(seed, "payload")
        self.backend = FleetBackend(
            scenario.channel, rng=stream(seed, "backend"), ttl=scenario.ttl,
            quantile=scenario.quantile, min_samples=scenario.min_samples, trace=self.trace,
        )
        self.backend.swap_handler = self._swap
        self.sites: dict[DeviceId, Site] = {}
        self.patients: dict[int, DeviceId] = {}
        self.sessions: list[SessionRecord] = []
        self.firmware_done: list[tuple[int, int, int]] = []
        self._next_index = 1
        self._events: list = []
        self._seq = 0
        self._cycles: set[int] = set()
        self.now = 0
        for patient in range(1, scenario.terminals + 1):
            site = self._new_site(patient)
            self.patients[patient] = site.device
            if patient in scenario.compromised_companions:
                site.companion.compromised = True
            if patient in scenario.absent_companions:
                site.companion.present = False

    # -- actors ------------------------------------------------------------

    def _new_site(self, patient: int) -> Site:
        device = DeviceId.from_index(self._next_index)
        self._next_index += 1
        terminal = Terminal(device, self.backend.verification_key, self.scenario.channel,
                            usb_whitelist=self.scenario.usb_whitelist, trace=self.trace)
        companion = CompanionDevice(
            f"patient{patient}",
            OpticalLink(terminal.name, f"companion:patient{patient}"),
            backend=self._uplink, trace=self.trace,
        )
        self.backend.register(device, self.now)
        site = Site(patient, terminal, companion)
        self.sites[device] = site
        return site

    def _uplink(self, event: LifecycleEvent, now: int) -> None:
        self.backend.ingest_lifecycle(event, now)
        if event.kind is LifecycleKind.SESSION_START:
            self.backend.resolve_on_session(event.device, now)

    def _swap(self, device: DeviceId, now: int) -> DeviceId:
        old = self.sites[device]
        old.terminal.quarantined = True
        site = self._new_site(old.index)
        site.companion.compromised = old.companion.compromised
        site.companion.present = old.companion.present
        self.patients[old.index] = site.device
        return site.device

    # -- event loop --------------------------------------------------------

    def at(self, time: int, priority: int, fn: Callable, *args) -> None:
        heapq.heappush(self._events, (time, priority, self._seq, fn, args))
        self._seq += 1

    def run(self) -> World:
        sc = self.scenario
        for patient in sorted(self.patients):
            first = sc.provision_lead + self._schedule_rng.randrange(sc.session_interval)
            self.at(first - sc.provision_lead, P_OPERATOR, self._provision, patient, first)
        for rev in sc.revocations:
            self.at(rev.at, P_OPERATOR, self._revoke, rev.device)
        for sup in sc.suppressions:
            device = self.patients[sup.device]
            self.sites[device].suppressed_at = sup.at
        for release in sc.firmware:
            self.at(release.at, P_OPERATOR, self._release, release)
        t = sc.sweep_period
        while t <= sc.duration:
            self.at(t, P_SWEEP, self._sweep)
            t += sc.sweep_period
        while self._events and self._events[0][0] <= sc.duration:
            time, _, _, fn, args = heapq.heappop(self._events)
            self.now = time
            fn(*args)
        return self

    def _ensure_cycle(self) -> None:
        boundary = self.backend.next_cycle(self.now)
        if boundary not in self._cycles:
            self._cycles.add(boundary)
            self.at(boundary, P_CYCLE, self._cycle, boundary)

    def _cycle(self, boundary: int) -> None:
        self._cycles.discard(boundary)
        for delivery in self.backend.run_cycle(boundary):
            self.at(delivery.delivered_at, P_DELIVERY, self._deliver, delivery)

    def _deliver(self, delivery) -> None:
        # one footprint: every terminal hears every packet and filters by address
        for site in list(self.sites.values()):
            if site.terminal.endpoint.push(delivery.data, self.now):
                for packet in site.terminal.poll():
                    if (packet.payload_type is PayloadType.TROUBLESHOOT_COMMAND
                            and packet.destination == site.device
                            and site.terminal.display is not None):
                        # the visiting operator reads the screen in person
                        self.backend.record_visit_reading(site.device, site.terminal.display,
                                                          self.now)

    # -- scripted behaviour ------------------------------------------------

    def _provision(self, patient: int, session_at: int) -> None:
        sc = self.scenario
        device = self.patients[patient]
        plaintext = self._payload_rng.randbytes(sc.payload_bytes)
        try:
            _, frame = self.backend.provision_session(device, plaintext, self.now)
        except RevokedDevice:
            record = SessionRecord(patient, device.hex(), "", session_at, "refused_revoked")
            self.sessions.append(record)
        else:
            if self.audit:
                self.sensitive.append(plaintext)
            record = SessionRecord(patient, device.hex(), frame.session_id.hex(), session_at)
            self.sessions.append(record)
            self.at(session_at, P_SESSION, self._session, record, device, frame.session_id)
            self._ensure_cycle()
        del plaintext
        jitter = 1.0 + sc.session_jitter * (2.0 * self._schedule_rng.random() - 1.0)
        nxt = session_at + max(1, round(sc.session_interval * jitter))
        self.at(nxt - sc.provision_lead, P_OPERATOR, self._provision, patient, nxt)

    def _session(self, record: SessionRecord, device: DeviceId, session_id: bytes) -> None:
        site = self.sites[device]
        now = self.now
        if site.terminal.quarantined:
            record.outcome = "terminal_swapped"
            self.backend.retire_session(session_id)
            return
        if site.suppressed_at is not None and now >= site.suppressed_at:
            record.outcome = "suppressed"
            self.backend.retire_session(session_id)
            return
        frame = self.backend.issue_key_frame(session_id, now)
        if self.audit:
            self.sensitive.append(bytes(frame.k_priv))
        receipt = site.companion.present_key_frame(frame, now)
        try:
            result = site.terminal.run_session(session_id, receipt.message, now,
                                               duration=self.scenario.session_length)
        except (NoPendingPayload, RevokedTerminal, Expired, SessionMismatch, AuthFailure) as exc:
            record.outcome = type(exc).__name__
            self.backend.retire_session(session_id)
            return
        finally:
            del frame
        self.backend.retire_session(session_id)
        record.outcome = "completed"
        site.companion.relay_lifecycle(result.start_code, now)
        site.companion.scan_output(result.output, result.output.displayed_at)
        self.at(result.end_code.timestamp, P_SESSION, site.companion.relay_lifecycle,
                result.end_code, result.end_code.timestamp)

    def _revoke(self, patient: int) -> None:
        self.backend.revoke(self.patients[patient], self.now)
        self._ensure_cycle()

    def _release(self, release) -> None:
        image = self._payload_rng.randbytes(release.size_bytes)
        self.backend.queue_update(image, release.version, self.now, chunk_size=release.chunk_bytes)
        boundary = self.backend.next_cycle(self.now)
        self.firmware_done.append((release.version, boundary, release.size_bytes))
        self._ensure_cycle()

    def _sweep(self) -> None:
        for flag in self.backend.sweep(self.now):
            self._escalate(flag.device, Tier.REMOTE_RESTART)

    def _escalate(self, device: DeviceId, tier: Tier) -> None:
        if device not in self.backend.flags:
            return
        self.backend.respond(device, tier, self.now)
        if tier is not Tier.ONSITE_SWAP:
            self._ensure_cycle()
            self.at(self.now + self.scenario.escalation_delay, P_OPERATOR, self._escalate,
                    device, Tier(tier + 1))


# -- structural analysis ---------------------------------------------------


def terminal_names(world: World | None, scenario: Scenario) -> list[str]:
    if world is not None:
        return sorted(s.terminal.name for s in world.sites.values())
    return [f"terminal:{DeviceId.from_index(i).hex()}" for i in range(1, scenario.terminals + 1)]


def build_graph(scenario: Scenario, rng: random.Random) -> NetworkGraph:
    g = random_institutional_graph(scenario.graph_vertices, rng, scenario.graph_mean_out_degree,
                                   scenario.graph_vendor_fraction)
    if scenario.mode == "connected":
        names = g.names
        g.add_device(CONNECTED_TERMINAL, labels=("terminal",))
        sources = set(g.labelled("vendor")) | set(rng.sample(names, min(3, len(names))))
        for name in sorted(sources):
            g.add_edge(name, CONNECTED_TERMINAL)
        for name in rng.sample(names, min(2, len(names))):
            g.add_edge(CONNECTED_TERMINAL, name)
    return g


def _worm_trial(scenario: Scenario, trial: int, outside: list[str]) -> list[tuple]:
    rng = stream(scenario.seed, f"worm/{trial}")
    g = build_graph(scenario, rng)
    candidates = [n for n in g.names if n != CONNECTED_TERMINAL]
    out = []
    for kind in scenario.worm_kinds:
        for p in scenario.infection_probabilities:
            seeds = None if kind is WormKind.SUPPLY_CHAIN_SEEDED else [rng.choice(candidates)]
            o = simulate_worm(g, kind, seeds, rng=rng, probability=p,
                              scan_rate=scenario.scan_rate, outside=outside)
            hit = bool(o.outside_infected) or CONNECTED_TERMINAL in o.infected
            out.append((kind, p, hit, o.complete, len(o.infected) / len(g), o.ticks))
    return out


def run_worms(scenario: Scenario, outside: list[str], trials: int | None = None,
              workers: int | None = None) -> list[WormSummary]:
    trials = scenario.worm_trials if trials is None else trials
    workers = workers or min(8, os.cpu_count() or 1)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(lambda i: _worm_trial(scenario, i, outside), range(trials)))
    summaries = {(k, p): WormSummary(k, p) for k in scenario.worm_kinds
                 for p in scenario.infection_probabilities}
    for trial in results:  # reduce in trial order
        for kind, p, hit, complete, frac, ticks in trial:
            s = summaries[(kind, p)]
            s.trials += 1
            s.terminal_infections += hit
            s.incomplete += not complete
            s.infected_fraction_sum += frac
            s.ticks_sum += ticks
    return list(summaries.values())


def latency_probes(config: ChannelConfig, count: int, seed: int) -> list[int]:
    """Independent single-revocation runs at random request times."""
    rng = stream(seed, "latency")
    out = []
    for _ in range(count):
        backend = FleetBackend(config, rng=rng)
        device = DeviceId.from_index(1)
        backend.register(device)
        requested = rng.randrange(0, 10 * config.cycle_period)
        rev = backend.revoke(device, requested)
        backend.run_cycle(backend.next_cycle(requested))
        out.append(rev.latency)
    return out


def _contains_secret(blob: bytes, secrets: list[bytes]) -> bool:
    for s in secrets:
        if s in blob or s.hex().encode() in blob:
            return True
    return False


@dataclass
class Analysis:
    checks: dict[str, CheckResult]
    worms: list[WormSummary]
    reduction: object
    probes: list[int] = field(default_factory=list)


def analyze(scenario: Scenario, world: World | None = None, trials: int | None = None) -> Analysis:
    config = scenario.channel
    sovereign = scenario.mode == "sovereign"
    surface = sovereign_surface(config) if sovereign else connected_surface()
    checks: dict[str, CheckResult] = {}

    def record(name: str, holds: bool, detail: str = "") -> None:
        checks[name] = CheckResult(name, bool(holds), detail)

    rs = remote_surface(surface)
    record("remote_surface_empty", not rs, ",".join(sorted(i.name for i in rs)) or "empty")
    rc = remote_compromise_channels(surface, REMOTE_ADVERSARY)
    record("remote_compromise_none", not rc, ",".join(sorted(rc)) or "none")
    physical = remote_compromise_channels(surface, PHYSICAL_ADVERSARY)

    graph = build_graph(scenario, stream(scenario.seed, "graph"))
    names = terminal_names(world, scenario)
    targets = names if sovereign else [CONNECTED_TERMINAL]
    in_graph = [t for t in targets if t in graph]
    record("terminal_outside_graph", not in_graph, f"{len(graph)} vertices")
    reached = sorted({src for src in graph.names for t in targets
                      if src != t and lateral_paths(graph, src, t).reachable})
    record("graph_isolation", not reached, f"{len(reached)} sources reach a terminal")
    vendors = graph.labelled("vendor")
    pivots = [v for v in vendors for t in targets if lateral_paths(graph, v, t).reachable]
    record("vendor_pivot_isolation", not pivots, f"{len(vendors)} vendor vertices")

    worms = run_worms(scenario, names, trials)
    hits = sum(w.terminal_infections for w in worms)
    record("worm_isolation", hits == 0, f"{hits} terminal infections")

    if sovereign:
        subjects = [s.terminal for s in world.sites.values()] if world else [config]
        enrollments = [botnet_enrollment_check(s) for s in subjects]
        enrollable = [e for e in enrollments if e.enrollable]
        record("botnet_not_enrollable", not enrollable,
               enrollments[0].reason if enrollments else "")
    else:
        e = botnet_enrollment_check(CONNECTED_TERMINAL, graph)
        record("botnet_not_enrollable", not e.enrollable, e.reason)

    if world is not None:
        _operational_checks(world, record)
    if not sovereign:
        record("session_confinement", False, "session material crosses the network interface")
    elif "session_confinement" not in checks:
        record("session_confinement", True, "checks-only: structural")

    caveats = [
        "lifecycle uplink is unauthenticated; a compromised companion can forge or skew events",
        "a compromised companion sees session key frames inside the expiry window",
    ]
    report = reduction_report(surface, graph, config, checks, scenario.mode, caveats)
    report_physical = ",".join(f"{k}={v.name}" for k, v in sorted(physical.items()))
    checks["physical_adversary_channels"] = CheckResult(
        "physical_adversary_channels", bool(physical), report_physical)
    probes = latency_probes(config, scenario.latency_probes, scenario.seed) if scenario.latency_probes else []
    return Analysis(checks, worms, report, probes)


def _operational_checks(world: World, record) -> None:
    trace = world.trace
    stage_kinds = ("stage1_payload_received", "stage2_key_received", "stage3_decrypted",
                   "stage4_output_displayed")
    by_session: dict[str, dict[str, object]] = {}
    for ev in trace.of_kind(*stage_kinds):
        by_session.setdefault(ev.detail["session"], {})[ev.kind] = ev
    completed = [s for s in world.sessions if s.outcome == "completed"]
    bad_order = 0
    for s in completed:
        evs = by_session.get(s.session, {})
        chain = [evs.get(k) for k in stage_kinds]
        if any(e is None for e in chain) or not all(
                (a.time, a.seq) < (b.time, b.seq) for a, b in zip(chain, chain[1:])):
            bad_order += 1
    record("stage_ordering", bad_order == 0, f"{len(completed)} completed sessions")

    network_blob = "".join(
        json.dumps(e.detail, sort_keys=True) for e in trace.on_channel(NETWORK)
    ).encode()
    leak = _contains_secret(network_blob, world.sensitive)
    purged = all(e.detail.get("purged") is True for e in trace.of_kind("key_purged"))
    record("session_confinement", not leak and purged,
           f"{len(world.sensitive)} secrets scanned on {len(trace.on_channel(NETWORK))} network events")

    network_actors = {e.actor for e in trace.on_channel(NETWORK)}
    record("push_only_management", all(a.startswith("companion:") for a in network_actors),
           "network events only from companions")

    ok = True
    for site in world.sites.values():
        accepts, parses = site.terminal.decoder_stats
        ok &= parses <= accepts
    record("verify_before_parse", ok, "parse counter never exceeds signature accepts")

    cycle = world.scenario.channel.cycle_period
    over = 0
    for rev in world.backend.revocations:
        if rev.delivered_at is None:
            continue
        bound = cycle + rev.service_time + (rev.attempts - 1) * cycle
        over += rev.latency > bound
    record("revocation_latency_bound", over == 0, f"{len(world.backend.revocations)} revocations")
    record("absence_only_flags", all(f.kind == "inactivity" for f in world.backend.anomaly_log),
           f"{len(world.backend.anomaly_log)} flags")


def measurements(world: World | None, analysis: Analysis) -> dict[str, float | int]:
    m: dict[str, float | int] = {}
    for w in analysis.worms:
        key = f"worm_{w.kind.value.lower()}_p{round(w.probability * 100):03d}"
        m[f"{key}_terminal_infections"] = w.terminal_infections
        m[f"{key}_mean_infected_fraction"] = round(w.infected_fraction_sum / max(1, w.trials), 6)
        m[f"{key}_mean_ticks"] = round(w.ticks_sum / max(1, w.trials), 3)
    if analysis.probes:
        m["latency_probe_max_s"] = to_seconds(max(analysis.probes))
        m["latency_probe_count"] = len(analysis.probes)
    if world is None:
        return m
    backend = world.backend
    outcomes: dict[str, int] = {}
    for s in world.sessions:
        outcomes[s.outcome] = outcomes.get(s.outcome, 0) + 1
    for k, v in outcomes.items():
        m[f"sessions_{k.lower()}"] = v
    m["sessions_scheduled"] = len(world.sessions)
    m["broadcast_cycles"] = len(world.trace.of_kind("broadcast_cycle"))
    m["broadcast_bytes"] = sum(e.detail["bytes"] for e in world.trace.of_kind("broadcast_cycle"))
    m["packets_rejected"] = len(world.trace.of_kind("packet_rejected"))
    lat = [r.latency for r in backend.revocations if r.latency is not None]
    m["revocations"] = len(backend.revocations)
    if lat:
        m["revocation_latency_max_s"] = to_seconds(max(lat))
        m["revocation_latency_mean_s"] = round(to_seconds(sum(lat)) / len(lat), 6)
    applied = world.trace.of_kind("update_applied")
    for version, boundary, size in world.firmware_done:
        done = [e.time for e in applied if e.detail["version"] == version]
        if done:
            m[f"firmware_v{version}_delivery_s"] = to_seconds(max(done) - boundary)
            m[f"firmware_v{version}_terminals"] = len(done)
    m["anomaly_flags"] = len(backend.anomaly_log)
    for tier in Tier:
        m[f"operator_tier{int(tier)}_actions"] = sum(1 for a in backend.actions if a.tier == tier)
    m["key_exposures"] = sum(len(s.companion.exposures) for s in world.sites.values())
    m["telemetry_events"] = sum(len(v) for v in backend.telemetry.values())
    return dict(sorted(m.items()))


def enforcement_label(config: ChannelConfig) -> str:
    if config.enforcement is Enforcement.HARDWARE:
        return "hardware"
    return "policy-intact" if config.policy_intact else "policy-broken"

