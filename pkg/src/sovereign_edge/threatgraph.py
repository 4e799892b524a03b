"""Structural threat analysis: attack surfaces, the remote-compromise
condition, lateral movement over institutional graphs, worm outbreaks,
botnet enrollment and the threat-model reduction report.

The terminal under analysis is never a vertex of a :class:`NetworkGraph`
unless it actually has a network interface.  Every graph result about it
follows from that membership test, and the simulations are here to show the
test is doing the work.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .channel import (
    ChannelConfig,
    ChannelKind,
    Enforcement,
    OutboundResult,
    RF_KINDS,
    attempt_outbound,
    make_endpoint,
)
from .records import persistable
from .wire import DeviceId

EXHAUSTIVE_PATH_LIMIT = 12
ALWAYS = 1 << 53


class ThreatGraphError(Exception):
    pass


class UnknownSource(ThreatGraphError):
    pass


class NoNetworkInterface(ThreatGraphError):
    """Raised when a device without a network interface is put into a graph."""


class IncompleteChecks(ThreatGraphError):
    pass


# -- attack surface --------------------------------------------------------


class Channel(enum.Enum):
    NETWORK = "Network"
    OPTICAL = "Optical"
    PHYSICAL = "Physical"
    ACOUSTIC = "Acoustic"


class Reachability(enum.Enum):
    REMOTE = "Remote"
    LINE_OF_SIGHT = "LineOfSight"
    CONTACT = "Contact"
    RF_PROXIMITY = "RfProximity"


class Exploitability(enum.Enum):
    UNAUTHENTICATED = "Unauthenticated"
    AUTHENTICATED = "Authenticated"
    HARDWARE_GATED = "HardwareGated"
    PHYSICALLY_GATED = "PhysicallyGated"


class Direction(enum.Enum):
    INBOUND = "Inbound"
    OUTBOUND = "Outbound"
    BIDIRECTIONAL = "Bidirectional"


@dataclass(frozen=True)
class InterfaceTriple:
    channel: Channel
    reachability: Reachability
    exploitability: Exploitability

    def __post_init__(self) -> None:
        if not (isinstance(self.channel, Channel) and isinstance(self.reachability, Reachability)
                and isinstance(self.exploitability, Exploitability)):
            raise TypeError("all three triple fields must be set")


@dataclass(frozen=True)
class Interface:
    name: str
    triple: InterfaceTriple
    direction: Direction = Direction.INBOUND

    @property
    def reachability(self) -> Reachability:
        return self.triple.reachability


@dataclass(frozen=True)
class SystemSurface:
    name: str
    interfaces: tuple[Interface, ...] = ()

    def __post_init__(self) -> None:
        names = [i.name for i in self.interfaces]
        if len(set(names)) != len(names):
            raise ValueError("interface names must be unique")

    def by_reachability(self, r: Reachability) -> frozenset[Interface]:
        return frozenset(i for i in self.interfaces if i.reachability is r)

    @property
    def remote(self) -> frozenset[Interface]:
        return self.by_reachability(Reachability.REMOTE)

    @property
    def line_of_sight(self) -> frozenset[Interface]:
        return self.by_reachability(Reachability.LINE_OF_SIGHT)

    @property
    def contact(self) -> frozenset[Interface]:
        return self.by_reachability(Reachability.CONTACT)

    @property
    def rf_proximity(self) -> frozenset[Interface]:
        return self.by_reachability(Reachability.RF_PROXIMITY)

    def __getitem__(self, name: str) -> Interface:
        for i in self.interfaces:
            if i.name == name:
                return i
        raise KeyError(name)


def _iface(name, c, r, e, d=Direction.INBOUND) -> Interface:
    return Interface(name, InterfaceTriple(c, r, e), d)


def _physical_interfaces(usb_whitelisted: bool) -> list[Interface]:
    usb_gate = Exploitability.HARDWARE_GATED if usb_whitelisted else Exploitability.UNAUTHENTICATED
    return [
        _iface("usb", Channel.PHYSICAL, Reachability.CONTACT, usb_gate),
        _iface("camera", Channel.OPTICAL, Reachability.LINE_OF_SIGHT, Exploitability.PHYSICALLY_GATED),
        _iface("microphone", Channel.ACOUSTIC, Reachability.LINE_OF_SIGHT,
               Exploitability.PHYSICALLY_GATED),
        _iface("display", Channel.OPTICAL, Reachability.LINE_OF_SIGHT,
               Exploitability.PHYSICALLY_GATED, Direction.OUTBOUND),
        _iface("chassis", Channel.PHYSICAL, Reachability.CONTACT, Exploitability.PHYSICALLY_GATED),
    ]


def inbound_interface(config: ChannelConfig) -> Interface:
    """The terminal's inbound-channel interface under one deployment configuration."""
    if config.enforcement is Enforcement.POLICY and not config.policy_intact:
        # the hardware can transmit and nothing stops it: an ordinary NIC
        return _iface("inbound_receiver", Channel.NETWORK, Reachability.REMOTE,
                      Exploitability.AUTHENTICATED, Direction.BIDIRECTIONAL)
    if config.kind in RF_KINDS:
        return _iface("inbound_receiver", Channel.PHYSICAL, Reachability.RF_PROXIMITY,
                      Exploitability.AUTHENTICATED)
    # diode or managed IP with outbound blocked: injection needs access to the
    # terminal-side segment
    return _iface("inbound_receiver", Channel.NETWORK, Reachability.CONTACT,
                  Exploitability.AUTHENTICATED)


def sovereign_surface(config: ChannelConfig | None = None) -> SystemSurface:
    config = config or ChannelConfig(ChannelKind.SATELLITE_BROADCAST)
    return SystemSurface("sovereign", (inbound_interface(config), *_physical_interfaces(True)))


def connected_surface() -> SystemSurface:
    net = [
        _iface("nic", Channel.NETWORK, Reachability.REMOTE, Exploitability.UNAUTHENTICATED,
               Direction.BIDIRECTIONAL),
        _iface("lan", Channel.NETWORK, Reachability.REMOTE, Exploitability.UNAUTHENTICATED,
               Direction.BIDIRECTIONAL),
        _iface("wifi", Channel.NETWORK, Reachability.REMOTE, Exploitability.AUTHENTICATED,
               Direction.BIDIRECTIONAL),
        _iface("bluetooth", Channel.NETWORK, Reachability.REMOTE, Exploitability.UNAUTHENTICATED,
               Direction.BIDIRECTIONAL),
        _iface("remote_management", Channel.NETWORK, Reachability.REMOTE,
               Exploitability.AUTHENTICATED, Direction.BIDIRECTIONAL),
    ]
    return SystemSurface("connected", (*net, *_physical_interfaces(False)))


def remote_surface(surface: SystemSurface) -> frozenset[Interface]:
    return surface.remote


# -- remote compromise condition -------------------------------------------


class AdversaryClass(enum.Enum):
    REMOTE = "Remote"
    PHYSICAL = "Physical"


@dataclass(frozen=True)
class AdversaryModel:
    kind: AdversaryClass
    holds_signing_key: bool = False


REMOTE_ADVERSARY = AdversaryModel(AdversaryClass.REMOTE)
PHYSICAL_ADVERSARY = AdversaryModel(AdversaryClass.PHYSICAL)


class Verdict(enum.IntEnum):
    NO = 0
    CONDITIONAL = 1
    YES = 2


@dataclass(frozen=True)
class ConditionRow:
    interface: str
    adversary: AdversaryClass
    writable: Verdict
    readable: Verdict
    reachable: Verdict

    @property
    def satisfied(self) -> Verdict:
        return min(self.writable, self.readable, self.reachable)


def _writable(i: Interface, adv: AdversaryModel) -> Verdict:
    e = i.triple.exploitability
    physical = adv.kind is AdversaryClass.PHYSICAL
    if e is Exploitability.UNAUTHENTICATED:
        return Verdict.YES
    if e is Exploitability.AUTHENTICATED:
        if adv.holds_signing_key:
            return Verdict.YES
        # only by compromising the signing infrastructure itself
        return Verdict.CONDITIONAL if physical else Verdict.NO
    if e is Exploitability.HARDWARE_GATED:
        # needs a device that passes (or spoofs) the whitelist
        return Verdict.CONDITIONAL if physical else Verdict.NO
    return Verdict.YES if physical else Verdict.NO


def _readable(i: Interface) -> Verdict:
    return Verdict.NO if i.direction is Direction.OUTBOUND else Verdict.YES


def _reachable(i: Interface, adv: AdversaryModel) -> Verdict:
    if adv.kind is AdversaryClass.PHYSICAL:
        return Verdict.YES
    return Verdict.YES if i.reachability is Reachability.REMOTE else Verdict.NO


def condition_table(surface: SystemSurface, adversary: AdversaryModel) -> list[ConditionRow]:
    return [
        ConditionRow(i.name, adversary.kind, _writable(i, adversary), _readable(i),
                     _reachable(i, adversary))
        for i in surface.interfaces
    ]


def remote_compromise_channels(surface: SystemSurface, adversary: AdversaryModel
                               ) -> dict[str, Verdict]:
    """Interfaces meeting writable, readable and reachable at once.

    Values are ``YES`` or ``CONDITIONAL``; interfaces that fail any condition
    are absent.
    """
    return {
        row.interface: row.satisfied
        for row in condition_table(surface, adversary)
        if row.satisfied is not Verdict.NO
    }


# -- institutional graph ---------------------------------------------------


@dataclass(frozen=True)
class Device:
    name: str
    network_interfaces: int = 1
    labels: frozenset[str] = frozenset()


class NetworkGraph:
    """Directed graph over devices that have network interfaces."""

    def __init__(self) -> None:
        self._devices: list[Device] = []
        self._index: dict[str, int] = {}
        self._edges: dict[tuple[int, int], bool] = {}

    def add_device(self, device: Device | str, network_interfaces: int | None = None,
                   labels: Iterable[str] = ()) -> int:
        if isinstance(device, str):
            device = Device(device, 1 if network_interfaces is None else network_interfaces,
                            frozenset(labels))
        if device.network_interfaces <= 0:
            raise NoNetworkInterface(f"{device.name} has no network interface")
        if device.name in self._index:
            raise ValueError(f"duplicate vertex {device.name}")
        self._index[device.name] = len(self._devices)
        self._devices.append(device)
        return self._index[device.name]

    def add_edge(self, u: str, v: str, vulnerable: bool = True) -> None:
        self._edges[(self._index[u], self._index[v])] = vulnerable

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]], names: Sequence[str] | None = None,
                   labels: Mapping[int, Iterable[str]] | None = None) -> NetworkGraph:
        g = cls()
        names = list(names) if names is not None else [f"v{i}" for i in range(n)]
        labels = labels or {}
        for i in range(n):
            g.add_device(names[i], labels=labels.get(i, ()))
        for u, v in edges:
            if u != v:
                g._edges[(int(u), int(v))] = True
        return g

    def __contains__(self, name: object) -> bool:
        return name in self._index

    def __len__(self) -> int:
        return len(self._devices)

    @property
    def names(self) -> list[str]:
        return [d.name for d in self._devices]

    def index(self, name: str) -> int:
        return self._index[name]

    def labelled(self, label: str) -> list[str]:
        return [d.name for d in self._devices if label in d.labels]

    def edges(self) -> list[tuple[int, int]]:
        return sorted(self._edges)

    def out_degree(self, name: str) -> int:
        i = self._index[name]
        return sum(1 for (u, _) in self._edges if u == i)

    def csr(self, vulnerable_only: bool = False) -> tuple[np.ndarray, np.ndarray]:
        n = len(self._devices)
        edges = sorted(e for e, vuln in self._edges.items() if vuln or not vulnerable_only)
        indptr = np.zeros(n + 1, dtype=np.int64)
        for u, _ in edges:
            indptr[u + 1] += 1
        np.cumsum(indptr, out=indptr)
        indices = np.fromiter((v for _, v in edges), dtype=np.int64, count=len(edges))
        return indptr, indices

    def bitmasks(self) -> list[int]:
        masks = [0] * len(self._devices)
        for u, v in self._edges:
            masks[u] |= 1 << v
        return masks


def random_institutional_graph(n: int, rng: random.Random, mean_out_degree: float = 3.0,
                               vendor_fraction: float = 0.05) -> NetworkGraph:
    p = min(1.0, mean_out_degree / max(1, n - 1))
    edges = [(u, v) for u in range(n) for v in range(n) if u != v and rng.random() < p]
    n_vendor = max(1, round(vendor_fraction * n))
    vendors = set(rng.sample(range(n), n_vendor))
    labels = {i: ("vendor",) for i in vendors}
    return NetworkGraph.from_edges(n, edges, labels=labels)


@dataclass(frozen=True)
class LateralResult:
    source: str
    target: str
    target_in_graph: bool
    reachable: bool
    paths: tuple[tuple[str, ...], ...] | None
    """Every simple path, when the graph is small enough to enumerate."""

    @property
    def empty(self) -> bool:
        return not self.reachable


def lateral_paths(graph: NetworkGraph, source: str, target: str,
                  limit: int = EXHAUSTIVE_PATH_LIMIT) -> LateralResult:
    if source not in graph:
        raise UnknownSource(source)
    if target not in graph:
        return LateralResult(source, target, False, False, ())
    s, t = graph.index(source), graph.index(target)
    if len(graph) <= limit:
        names = graph.names
        found = kernels.simple_paths(graph.bitmasks(), s, t, 1 << 62)
        paths = tuple(tuple(names[v] for v in p) for p in found)
        return LateralResult(source, target, True, bool(paths), paths)
    indptr, indices = graph.csr()
    mask = kernels.reach_closure(indptr, indices, np.array([s], dtype=np.int64))
    return LateralResult(source, target, True, s != t and bool(mask[t]), None)


def path_census(adjacency: np.ndarray, source: int, target: int) -> tuple[np.ndarray, np.ndarray]:
    """Batch path counting over many small graphs given as bitmask rows.

    Returns per-graph simple-path counts and an order-independent fingerprint
    of each graph's path set.
    """
    adjacency = np.ascontiguousarray(adjacency, dtype=np.uint64)
    return kernels.path_census(adjacency, source, target)


# -- worms -----------------------------------------------------------------


class WormKind(enum.Enum):
    SCANNING = "Scanning"
    TOPOLOGICAL = "Topological"
    SUPPLY_CHAIN_SEEDED = "SupplyChainSeeded"


@dataclass(frozen=True)
class WormOutcome:
    kind: WormKind
    seeds: tuple[str, ...]
    infected_at: dict[str, int]
    ticks: int
    closure: frozenset[str]
    outside: frozenset[str]

    @property
    def infected(self) -> frozenset[str]:
        return frozenset(self.infected_at)

    @property
    def outside_infected(self) -> frozenset[str]:
        return self.infected & self.outside

    @property
    def complete(self) -> bool:
        return self.infected == self.closure


def _seed64(rng) -> int:
    if isinstance(rng, int):
        return rng & ((1 << 64) - 1)
    return rng.getrandbits(64)


def simulate_worm(graph: NetworkGraph, kind: WormKind, seeds: Iterable[str] | None = None,
                  rng=0, probability: float = 1.0, scan_rate: int = 8,
                  max_ticks: int = 1_000_000, outside: Iterable[str] = ()) -> WormOutcome:
    """Run one outbreak to quiescence (or ``max_ticks``).

    ``outside`` names devices that exist in the scenario but are not graph
    vertices, such as the air-gapped terminal.  The kernels only know vertex
    indices, so there is no way for them to be touched; the outcome still
    reports them so callers can check.
    """
    if not 0.0 <= probability <= 1.0:
        raise ValueError("probability must be in [0, 1]")
    kind = WormKind(kind)
    if seeds is None:
        if kind is WormKind.SUPPLY_CHAIN_SEEDED:
            seeds = graph.labelled("vendor")
        else:
            seeds = graph.names[:1]
    seeds = tuple(seeds)
    missing = [s for s in seeds if s not in graph]
    if missing:
        raise UnknownSource(", ".join(missing))
    outside = frozenset(o for o in outside if o not in graph)
    seed_idx = np.array(sorted({graph.index(s) for s in seeds}), dtype=np.int64)
    indptr, indices = graph.csr()
    p_threshold = ALWAYS if probability >= 1.0 else int(probability * ALWAYS)
    infected_at, ticks = kernels.worm_spread(
        indptr, indices, seed_idx, 1 if kind is WormKind.SCANNING else 0,
        p_threshold, scan_rate, _seed64(rng), max_ticks,
    )
    closure_mask = kernels.reach_closure(indptr, indices, seed_idx)
    names = graph.names
    return WormOutcome(
        kind=kind,
        seeds=seeds,
        infected_at={names[i]: int(t) for i, t in enumerate(infected_at) if t >= 0},
        ticks=int(ticks),
        closure=frozenset(names[i] for i in np.flatnonzero(closure_mask)),
        outside=outside,
    )


# -- botnet enrollment -----------------------------------------------------


@dataclass(frozen=True)
class Enrollment:
    enrollable: bool
    reason: str
    conditional: bool = False


NO_OUTBOUND = "no outbound network communication"


def botnet_enrollment_check(subject, graph: NetworkGraph | None = None) -> Enrollment:
    """Can ``subject`` reach command-and-control infrastructure?

    ``subject`` is a :class:`ChannelConfig`, anything with an inbound
    ``endpoint`` (a terminal), or a vertex name together with ``graph``.
    """
    if isinstance(subject, str):
        if graph is None or subject not in graph:
            return Enrollment(False, "no network interface")
        if graph.out_degree(subject) > 0:
            return Enrollment(True, "outbound edges in institutional graph")
        return Enrollment(False, "no outbound edges")
    if isinstance(subject, ChannelConfig):
        endpoint = make_endpoint(subject, DeviceId.from_index(0))
    else:
        endpoint = subject.endpoint
    result = attempt_outbound(endpoint, b"c2-hello")
    if result is OutboundResult.STRUCTURALLY_IMPOSSIBLE:
        return Enrollment(False, NO_OUTBOUND)
    if result is OutboundResult.POLICY_VIOLATION:
        return Enrollment(False, "outbound blocked by policy", conditional=True)
    return Enrollment(True, "outbound policy not in force", conditional=True)


# -- reduction report ------------------------------------------------------


@persistable
@dataclass(frozen=True)
class CheckResult:
    name: str
    holds: bool
    detail: str = ""


REQUIRED_CHECKS = (
    "remote_surface_empty",
    "remote_compromise_none",
    "terminal_outside_graph",
    "graph_isolation",
    "worm_isolation",
    "botnet_not_enrollable",
    "vendor_pivot_isolation",
    "session_confinement",
)

# (attack class, connected-terminal status, checks that eliminate it)
ELIMINATED_CLASSES = (
    ("Remote code execution", "Possible via NIC", ("remote_surface_empty", "remote_compromise_none")),
    ("Network scanning", "Terminal visible", ("terminal_outside_graph",)),
    ("Lateral movement", "Possible via institutional graph", ("graph_isolation",)),
    ("Worm propagation", "Possible", ("worm_isolation",)),
    ("Botnet enrollment", "Possible", ("botnet_not_enrollable",)),
    ("Man-in-the-middle", "Possible", ("graph_isolation", "session_confinement")),
    ("Remote credential theft", "Possible", ("remote_surface_empty",)),
    ("C2 callback", "Possible", ("botnet_not_enrollable",)),
    ("Network-based APT", "Possible", ("remote_surface_empty", "remote_compromise_none")),
    ("Vendor network pivot", "Possible", ("vendor_pivot_isolation",)),
)

RESIDUAL_CLASSES = (
    ("Optical key capture", "Short key-frame expiry window, physical security", "camera"),
    ("Optical output capture", "Physical security, display orientation", "display"),
    ("USB device injection", "Vendor/product/class whitelist plus attestation", "usb"),
    ("Chassis intrusion", "Tamper detection, volatile wipe", "chassis"),
    ("RF injection near antenna", "Physical security perimeter", "inbound_receiver"),
    ("Broadcast injection", "Signature verification before parsing", "inbound_receiver"),
)

ASSUMPTIONS = (
    ("hardware_trust", "Terminal hardware, enclave and firmware uncompromised in manufacture; modeled as a trust flag."),
    ("cryptographic_primitives", "AES-256-GCM, HMAC-SHA256, Ed25519 and X25519 treated as computationally secure."),
    ("authenticated_inbound", "Every inbound packet passes signature verification before any parsing."),
    ("physical_perimeter", "Terminal sits inside a physical security perimeter."),
)


@persistable
@dataclass(frozen=True)
class ReductionRow:
    attack_class: str
    status: str
    evidence: tuple[str, ...]


@persistable
@dataclass(frozen=True)
class ResidualRow:
    attack_class: str
    mitigation: str
    interface: str
    adversary: str = "physical"


@persistable
@dataclass(frozen=True)
class ReductionReport:
    mode: str
    eliminated: tuple[ReductionRow, ...]
    residual: tuple[ResidualRow, ...]
    residual_risk_sovereign: str
    residual_risk_connected: str
    risk_delta: str
    assumptions: tuple[str, ...]
    checks: tuple[CheckResult, ...] = field(default=())


def reduction_report(surface: SystemSurface, graph: NetworkGraph | None, config: ChannelConfig,
                     checks: Mapping[str, CheckResult], mode: str = "sovereign",
                     companion_caveats: Sequence[str] = ()) -> ReductionReport:
    missing = [c for c in REQUIRED_CHECKS if c not in checks]
    if missing:
        raise IncompleteChecks(", ".join(missing))
    conditional_tier = config.enforcement is Enforcement.POLICY and not config.policy_intact
    rows = []
    for name, connected_status, cited in ELIMINATED_CLASSES:
        if all(checks[c].holds for c in cited):
            status = "Eliminated"
        elif mode == "connected":
            status = connected_status
        elif conditional_tier:
            status = "Conditional"
        else:
            status = "Possible"
        rows.append(ReductionRow(name, status, cited))
    residual = tuple(
        ResidualRow(name, mitigation, iface)
        for name, mitigation, iface in RESIDUAL_CLASSES
        if any(i.name == iface for i in surface.interfaces)
    )
    assumptions = [f"{key}: {text}" for key, text in ASSUMPTIONS]
    if config.enforcement is Enforcement.POLICY:
        assumptions.append(
            f"policy_intact={str(config.policy_intact).lower()}: {config.kind.value} retains "
            "transmit hardware; unidirectionality holds only while the outbound policy does."
        )
    else:
        assumptions.append(f"{config.kind.value}: receiver has no transmit path (hardware).")
    assumptions.extend(f"companion: {c}" for c in companion_caveats)
    if graph is not None:
        assumptions.append(f"graph: {len(graph)} vertices, {len(graph.edges())} directed edges")
    return ReductionReport(
        mode=mode,
        eliminated=tuple(rows),
        residual=residual,
        residual_risk_sovereign="physical (irreducible minimum)",
        residual_risk_connected="physical + network",
        risk_delta="network (strictly positive)",
        assumptions=tuple(assumptions),
        checks=tuple(checks[c] for c in REQUIRED_CHECKS),
    )
