"""Inbound channel configurations, receive-only endpoints and the optical link.

Hardware-enforced endpoints (:class:`InboundEndpoint`) have no send method at
all.  Policy-enforced endpoints (:class:`PolicyEndpoint`) do, because the
hardware underneath can transmit; the send raises :class:`PolicyViolation`
while the outbound-blocking policy is intact.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Sequence

from .optical import OPTICAL_MESSAGE_TYPES
from .timebase import SECOND, transmission_ticks
from .wire import DeviceId, encode_packet, SignedPacket

DEFAULT_THROUGHPUT_BPS = 50_000_000
DEFAULT_CYCLE_PERIOD = 300 * SECOND


class ChannelKind(enum.Enum):
    SATELLITE_BROADCAST = "SatelliteBroadcast"
    TERRESTRIAL_BROADCAST = "TerrestrialBroadcast"
    RADIO_DATACAST = "RadioDatacast"
    HARDWARE_DIODE = "HardwareDiode"
    MANAGED_IP_OUTBOUND_DISABLED = "ManagedIpOutboundDisabled"
    FIVE_G_BROADCAST_PROFILE = "FiveGBroadcastProfile"


class Enforcement(enum.Enum):
    HARDWARE = "Hardware"
    POLICY = "Policy"


HARDWARE_KINDS = frozenset(
    {
        ChannelKind.SATELLITE_BROADCAST,
        ChannelKind.TERRESTRIAL_BROADCAST,
        ChannelKind.RADIO_DATACAST,
        ChannelKind.HARDWARE_DIODE,
    }
)
RF_KINDS = frozenset(
    {
        ChannelKind.SATELLITE_BROADCAST,
        ChannelKind.TERRESTRIAL_BROADCAST,
        ChannelKind.RADIO_DATACAST,
        ChannelKind.FIVE_G_BROADCAST_PROFILE,
    }
)


def enforcement_for(kind: ChannelKind) -> Enforcement:
    return Enforcement.HARDWARE if kind in HARDWARE_KINDS else Enforcement.POLICY


@dataclass(frozen=True)
class ChannelConfig:
    kind: ChannelKind
    throughput_bps: int = DEFAULT_THROUGHPUT_BPS
    cycle_period: int = DEFAULT_CYCLE_PERIOD
    loss_rate: float = 0.0
    policy_intact: bool = True
    enforcement: Enforcement | None = None

    def __post_init__(self) -> None:
        expected = enforcement_for(self.kind)
        if self.enforcement is None:
            object.__setattr__(self, "enforcement", expected)
        elif self.enforcement is not expected:
            raise ValueError(f"{self.kind.value} requires {expected.value} enforcement")
        if self.throughput_bps <= 0:
            raise ValueError("throughput_bps must be positive")
        if self.cycle_period <= 0:
            raise ValueError("cycle_period must be positive")
        if not 0.0 <= self.loss_rate < 1.0:
            raise ValueError("loss_rate must be in [0, 1)")
        if self.enforcement is Enforcement.HARDWARE and not self.policy_intact:
            raise ValueError("policy_intact only applies to policy-enforced channels")

    @property
    def unidirectional(self) -> str:
        """``"Yes"`` or ``"Conditional"``, as the configuration tiers are tabulated."""
        return "Yes" if self.enforcement is Enforcement.HARDWARE else "Conditional"


class PolicyViolation(Exception):
    """Outbound transmission blocked by policy on a policy-enforced endpoint."""


class NoLineOfSight(Exception):
    pass


class OutboundResult(enum.Enum):
    STRUCTURALLY_IMPOSSIBLE = "StructurallyImpossible"
    POLICY_VIOLATION = "PolicyViolation"
    SENT = "Sent"


class InboundEndpoint:
    """Receive side of the inbound channel at one terminal."""

    def __init__(self, device: DeviceId, config: ChannelConfig):
        self.device = device
        self.config = config
        self.enabled = True
        self._queue: list[tuple[int, bytes]] = []

    def push(self, data: bytes, at: int) -> bool:
        """Channel-side delivery; returns False when reception is disabled."""
        if not self.enabled:
            return False
        self._queue.append((at, data))
        return True

    def receive(self) -> list[tuple[int, bytes]]:
        items, self._queue = self._queue, []
        return items

    @property
    def pending(self) -> int:
        return len(self._queue)


class PolicyEndpoint(InboundEndpoint):
    """Endpoint on bidirectional hardware whose outbound path is blocked by policy."""

    def __init__(self, device: DeviceId, config: ChannelConfig):
        super().__init__(device, config)
        self.policy_intact = config.policy_intact
        self.sent: list[bytes] = []

    def send(self, data: bytes) -> OutboundResult:
        if self.policy_intact:
            raise PolicyViolation("OUTPUT chain DROP")
        self.sent.append(bytes(data))
        return OutboundResult.SENT


def make_endpoint(config: ChannelConfig, device: DeviceId) -> InboundEndpoint:
    if config.enforcement is Enforcement.HARDWARE:
        return InboundEndpoint(device, config)
    return PolicyEndpoint(device, config)


def attempt_outbound(endpoint: InboundEndpoint, data: bytes) -> OutboundResult:
    """Analyzer probe: what happens if code on the receiver tries to transmit."""
    send = getattr(endpoint, "send", None)
    if send is None:
        return OutboundResult.STRUCTURALLY_IMPOSSIBLE
    try:
        return send(data)
    except PolicyViolation:
        return OutboundResult.POLICY_VIOLATION


@dataclass(frozen=True)
class SizedPayload:
    """An opaque broadcast object known only by its serialized size."""

    label: str
    size: int


def wire_size(item: Any) -> int:
    if isinstance(item, (bytes, bytearray)):
        return len(item)
    if isinstance(item, SignedPacket):
        return len(encode_packet(item))
    if isinstance(item, SizedPayload):
        return item.size
    size = getattr(item, "wire_size", None)
    if size is None:
        raise TypeError(f"cannot size broadcast item {type(item).__name__}")
    return int(size)


@dataclass(frozen=True)
class DeliveryEvent:
    index: int
    item: Any = field(repr=False)
    size: int
    first_attempt_at: int
    delivered_at: int
    attempts: int

    @property
    def losses(self) -> int:
        return self.attempts - 1


def schedule_broadcast(
    config: ChannelConfig, items: Sequence[Any], start_time: int, rng=None
) -> list[DeliveryEvent]:
    """Serialize ``items`` back-to-back from ``start_time``.

    Each item's first transmission completes at ``start_time`` plus the
    cumulative serialization time of everything up to and including it.
    Each loss (independent Bernoulli, ``config.loss_rate``) pushes reception
    to the same slot of the next carousel cycle.
    """
    if config.loss_rate > 0 and rng is None:
        raise ValueError("a random source is required when loss_rate > 0")
    events = []
    cumulative = 0
    for index, item in enumerate(items):
        size = wire_size(item)
        cumulative += size
        first = start_time + transmission_ticks(cumulative, config.throughput_bps)
        attempts = 1
        if config.loss_rate > 0:
            while rng.random() < config.loss_rate:
                attempts += 1
        events.append(
            DeliveryEvent(
                index=index,
                item=item,
                size=size,
                first_attempt_at=first,
                delivered_at=first + (attempts - 1) * config.cycle_period,
                attempts=attempts,
            )
        )
    return events


@dataclass
class OpticalLink:
    """Line-of-sight optical path between a terminal screen/camera and a companion."""

    terminal: str
    companion: str
    line_of_sight: bool = True


@dataclass(frozen=True)
class OpticalReceipt:
    message: Any = field(repr=False)
    delivered_at: int


def deliver_optical(link: OpticalLink, message: Any, now: int) -> OpticalReceipt:
    if not isinstance(message, OPTICAL_MESSAGE_TYPES):
        raise TypeError(f"{type(message).__name__} cannot travel on an optical link")
    if not link.line_of_sight:
        raise NoLineOfSight(f"{link.companion} has no line of sight to {link.terminal}")
    return OpticalReceipt(message, now)
