"""Fleet backend: provisioning, push-only broadcast queue, revocation,
lifecycle telemetry with per-terminal cadence learning, operator tiers.

Every byte the backend sends a terminal goes through :meth:`FleetBackend.run_cycle`
as a signed broadcast packet.  There is no other path.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

from .channel import ChannelConfig, DeliveryEvent, schedule_broadcast
from .companion import LifecycleEvent
from .optical import LifecycleKind
from .records import dumps, persistable
from .session_crypto import (
    DEFAULT_TTL,
    OpticalKeyFrame,
    SessionKeypair,
    encrypt_payload,
    generate_session,
)
from .timebase import HOUR, next_boundary
from .trace import BROADCAST as BROADCAST_CH, INTERNAL, PHYSICAL, Trace
from .wire import (
    BROADCAST,
    COMPONENT_FIRMWARE,
    DeviceId,
    FirmwareChunk,
    PacketFields,
    PayloadType,
    SignedPacket,
    SigningKeypair,
    encode_command,
    encode_packet,
    encode_revocation,
    sign_packet,
)

DEFAULT_QUANTILE = 0.999
DEFAULT_MIN_SAMPLES = 20
DEFAULT_SWEEP_PERIOD = HOUR
DEFAULT_CHUNK_BYTES = 1 << 19


class FleetError(Exception):
    pass


class UnknownDevice(FleetError):
    pass


class RevokedDevice(FleetError):
    pass


class NoOutstandingFlag(FleetError):
    pass


class Tier(enum.IntEnum):
    REMOTE_RESTART = 1
    IN_PERSON_TROUBLESHOOT = 2
    ONSITE_SWAP = 3


@dataclass
class ProvisioningRecord:
    device: DeviceId
    registered_at: int
    revoked: bool = False
    quarantined: bool = False
    replaced_by: DeviceId | None = None


@persistable
@dataclass(frozen=True)
class AnomalyFlag:
    """Inactivity finding.  Carries no cause: absence is all that is observable."""

    device: DeviceId
    flagged_at: int
    last_session_at: int
    elapsed: int
    threshold: int
    kind: str = "inactivity"


@persistable
@dataclass
class OperatorAction:
    tier: Tier
    device: DeviceId
    issued_at: int
    command_sequence: int | None = None
    resolution: str | None = None
    resolved_at: int | None = None
    replacement: DeviceId | None = None


@persistable
@dataclass
class RevocationRecord:
    device: DeviceId
    requested_at: int
    sequence: int
    cycle_at: int | None = None
    delivered_at: int | None = None
    service_time: int | None = None
    attempts: int | None = None

    @property
    def latency(self) -> int | None:
        return None if self.delivered_at is None else self.delivered_at - self.requested_at


@dataclass
class CadenceModel:
    """Empirical distribution of start-to-start intervals for one terminal."""

    device: DeviceId
    quantile: float = DEFAULT_QUANTILE
    min_samples: int = DEFAULT_MIN_SAMPLES
    samples: list[int] = field(default_factory=list)
    last_start: int | None = None
    last_seen: int | None = None
    _threshold: int | None = field(default=None, repr=False, compare=False)

    @property
    def ready(self) -> bool:
        return len(self.samples) >= self.min_samples

    def threshold(self) -> int | None:
        """Smallest sample with empirical CDF >= quantile."""
        if not self.ready:
            return None
        if self._threshold is None:
            ordered = sorted(self.samples)
            k = max(1, math.ceil(self.quantile * len(ordered)))
            self._threshold = ordered[min(k, len(ordered)) - 1]
        return self._threshold

    def observe(self, event: LifecycleEvent) -> None:
        start = event.session_start
        if self.last_seen is None or start > self.last_seen:
            self.last_seen = start
        if event.kind is LifecycleKind.SESSION_END:
            if self.last_start is not None and start > self.last_start:
                self.samples.append(start - self.last_start)
                self._threshold = None
            if self.last_start is None or start > self.last_start:
                self.last_start = start


@dataclass
class _Queued:
    order: int
    packet: SignedPacket
    enqueued_at: int
    revocation: RevocationRecord | None = None


@dataclass(frozen=True)
class BroadcastDelivery:
    packet: SignedPacket
    data: bytes
    event: DeliveryEvent

    @property
    def delivered_at(self) -> int:
        return self.event.delivered_at


@dataclass
class PhysicalVisit:
    device: DeviceId
    at: int
    diagnostic: object | None = None


class FleetBackend:
    def __init__(
        self,
        config: ChannelConfig,
        rng=None,
        ttl: int = DEFAULT_TTL,
        quantile: float = DEFAULT_QUANTILE,
        min_samples: int = DEFAULT_MIN_SAMPLES,
        cycle_phase: int = 0,
        trace: Trace | None = None,
    ):
        self.config = config
        self.rng = rng
        self.ttl = ttl
        self.quantile = quantile
        self.min_samples = min_samples
        self.cycle_phase = cycle_phase
        self.trace = trace if trace is not None else Trace()
        self._signing = SigningKeypair.generate(rng)
        self.registry: dict[DeviceId, ProvisioningRecord] = {}
        self.telemetry: dict[DeviceId, list[LifecycleEvent]] = {}
        self.cadence: dict[DeviceId, CadenceModel] = {}
        self.flags: dict[DeviceId, AnomalyFlag] = {}
        self.anomaly_log: list[AnomalyFlag] = []
        self.actions: list[OperatorAction] = []
        self.visits: list[PhysicalVisit] = []
        self.revocations: list[RevocationRecord] = []
        self.swap_handler: Callable[[DeviceId, int], DeviceId] | None = None
        self._queue: list[_Queued] = []
        self._order = 0
        self._sequences: dict[tuple[bytes, int], int] = {}
        self._sessions: dict[bytes, SessionKeypair] = {}
        self._session_ids: set[bytes] = set()

    @property
    def verification_key(self):
        """Public half of the signing key, for provisioning terminals."""
        return self._signing.public

    # -- registry ----------------------------------------------------------

    def register(self, device: DeviceId, now: int = 0) -> ProvisioningRecord:
        if device in self.registry:
            raise ValueError(f"device {device} already registered")
        record = ProvisioningRecord(device, now)
        self.registry[device] = record
        self.telemetry[device] = []
        self.cadence[device] = CadenceModel(device, self.quantile, self.min_samples)
        return record

    def _record(self, device: DeviceId) -> ProvisioningRecord:
        try:
            return self.registry[device]
        except KeyError:
            raise UnknownDevice(str(device)) from None

    # -- broadcast queue ---------------------------------------------------

    def _next_sequence(self, destination: DeviceId, ptype: PayloadType) -> int:
        key = (destination.value, int(ptype))
        seq = self._sequences.get(key, 0) + 1
        self._sequences[key] = seq
        return seq

    def _enqueue(self, ptype: PayloadType, destination: DeviceId, body: bytes, now: int,
                 revocation: RevocationRecord | None = None) -> SignedPacket:
        seq = revocation.sequence if revocation else self._next_sequence(destination, ptype)
        packet = sign_packet(PacketFields(ptype, destination, seq, body), self._signing.private)
        self._queue.append(_Queued(self._order, packet, now, revocation))
        self._order += 1
        self.trace.emit(now, "queued", "backend", INTERNAL, payload_type=ptype.name,
                        destination=destination.hex(), sequence=seq)
        return packet

    @property
    def queue_depth(self) -> int:
        return len(self._queue)

    def next_cycle(self, t: int) -> int:
        return next_boundary(t, self.config.cycle_period, self.cycle_phase)

    def run_cycle(self, boundary: int) -> list[BroadcastDelivery]:
        """Transmit everything queued, back-to-back from ``boundary``."""
        items, self._queue = self._queue, []
        if not items:
            return []
        encoded = [encode_packet(q.packet) for q in items]
        events = schedule_broadcast(self.config, encoded, boundary, self.rng)
        out = []
        for q, data, ev in zip(items, encoded, events):
            if q.revocation is not None:
                q.revocation.cycle_at = boundary
                q.revocation.delivered_at = ev.delivered_at
                q.revocation.service_time = ev.first_attempt_at - boundary
                q.revocation.attempts = ev.attempts
            out.append(BroadcastDelivery(q.packet, data, ev))
        self.trace.emit(boundary, "broadcast_cycle", "backend", BROADCAST_CH,
                        packets=len(items), bytes=sum(len(d) for d in encoded))
        return out

    # -- sessions ----------------------------------------------------------

    def provision_session(self, device: DeviceId, plaintext: bytes, now: int
                          ) -> tuple[SignedPacket, OpticalKeyFrame]:
        record = self._record(device)
        if record.revoked or record.quarantined:
            raise RevokedDevice(str(device))
        keys = generate_session(self.rng)
        while keys.session_id in self._session_ids:
            keys = generate_session(self.rng)
        self._session_ids.add(keys.session_id)
        self._sessions[keys.session_id] = keys
        payload = encrypt_payload(plaintext, keys.k_pub, keys.session_id, self.rng)
        packet = self._enqueue(PayloadType.SESSION_PAYLOAD, device, payload.to_bytes(), now)
        return packet, keys.key_frame(now, self.ttl)

    def issue_key_frame(self, session_id: bytes, now: int) -> OpticalKeyFrame:
        """Fresh TTL window for a provisioned session (companion fetch at session start)."""
        return self._sessions[session_id].key_frame(now, self.ttl)

    def retire_session(self, session_id: bytes) -> None:
        keys = self._sessions.pop(session_id, None)
        if keys is not None:
            keys.discard()

    # -- fleet commands ----------------------------------------------------

    def revoke(self, device: DeviceId, now: int) -> RevocationRecord:
        record = self._record(device)
        record.revoked = True
        rev = RevocationRecord(device, now, self._next_sequence(device, PayloadType.REVOCATION))
        self.revocations.append(rev)
        self._enqueue(PayloadType.REVOCATION, device, encode_revocation(device), now, rev)
        return rev

    def queue_update(self, image: bytes, version: int, now: int, chunk_size: int = DEFAULT_CHUNK_BYTES,
                     component: int = COMPONENT_FIRMWARE,
                     destination: DeviceId = BROADCAST) -> list[SignedPacket]:
        count = max(1, -(-len(image) // chunk_size))
        packets = []
        for index in range(count):
            chunk = FirmwareChunk(component, version, index, count,
                                  image[index * chunk_size:(index + 1) * chunk_size])
            packets.append(self._enqueue(PayloadType.FIRMWARE_CHUNK, destination,
                                         chunk.to_bytes(), now))
        return packets

    def queue_command(self, device: DeviceId, ptype: PayloadType, now: int) -> SignedPacket:
        self._record(device)
        command_id = self._order + 1
        return self._enqueue(ptype, device, encode_command(command_id), now)

    # -- telemetry ---------------------------------------------------------

    def ingest_lifecycle(self, event: LifecycleEvent, now: int
                         ) -> tuple[CadenceModel, AnomalyFlag | None]:
        model = self.cadence.get(event.device)
        if model is None:
            # unauthenticated uplink: unknown devices are logged, not modelled
            self.trace.emit(now, "telemetry_unknown_device", "backend", INTERNAL,
                            device=event.device.hex())
            return CadenceModel(event.device, self.quantile, self.min_samples), None
        self.telemetry[event.device].append(event)
        model.observe(event)
        if event.kind is LifecycleKind.SESSION_START:
            self.flags.pop(event.device, None)
        return model, self.flags.get(event.device)

    def sweep(self, now: int) -> list[AnomalyFlag]:
        raised = []
        for device, model in self.cadence.items():
            record = self.registry[device]
            if record.revoked or record.quarantined or device in self.flags:
                continue
            threshold = model.threshold()
            if threshold is None or model.last_seen is None:
                continue
            elapsed = now - model.last_seen
            if elapsed > threshold:
                flag = AnomalyFlag(device, now, model.last_seen, elapsed, threshold)
                self.flags[device] = flag
                self.anomaly_log.append(flag)
                raised.append(flag)
                self.trace.emit(now, "anomaly_flag", "backend", INTERNAL,
                                device=device.hex(), elapsed=elapsed, threshold=threshold)
        return raised

    def export_telemetry(self) -> str:
        lines = []
        for device in sorted(self.telemetry):
            lines.extend(dumps(e) for e in self.telemetry[device])
        return "".join(line + "\n" for line in lines)

    # -- operator response -------------------------------------------------

    def respond(self, device: DeviceId, tier: Tier, now: int) -> OperatorAction:
        if device not in self.flags:
            raise NoOutstandingFlag(str(device))
        action = OperatorAction(Tier(tier), device, now)
        if tier == Tier.REMOTE_RESTART:
            packet = self.queue_command(device, PayloadType.RESTART_COMMAND, now)
            action.command_sequence = packet.sequence
        elif tier == Tier.IN_PERSON_TROUBLESHOOT:
            packet = self.queue_command(device, PayloadType.TROUBLESHOOT_COMMAND, now)
            action.command_sequence = packet.sequence
            self.visits.append(PhysicalVisit(device, now))
            self.trace.emit(now, "physical_visit_started", "operator", PHYSICAL,
                            device=device.hex())
        elif tier == Tier.ONSITE_SWAP:
            if self.swap_handler is None:
                raise FleetError("no field service attached for onsite swaps")
            replacement = self.swap_handler(device, now)
            record = self.registry[device]
            record.quarantined = True
            record.replaced_by = replacement
            if replacement not in self.registry:
                self.register(replacement, now)
            self.flags.pop(device, None)
            action.replacement = replacement
            action.resolution = "swapped"
            action.resolved_at = now
            self.trace.emit(now, "onsite_swap", "operator", PHYSICAL, device=device.hex(),
                            replacement=replacement.hex())
        self.actions.append(action)
        return action

    def record_visit_reading(self, device: DeviceId, diagnostic, now: int) -> PhysicalVisit:
        """The visiting operator reads the terminal screen in person."""
        for visit in reversed(self.visits):
            if visit.device == device and visit.diagnostic is None:
                visit.diagnostic = diagnostic
                break
        else:
            raise FleetError(f"no open visit for {device}")
        for action in reversed(self.actions):
            if action.device == device and action.tier == Tier.IN_PERSON_TROUBLESHOOT:
                action.resolution = "diagnostic_read_on_site"
                action.resolved_at = now
                break
        self.trace.emit(now, "diagnostic_read", "operator", PHYSICAL, device=device.hex())
        return visit

    def resolve_on_session(self, device: DeviceId, now: int) -> None:
        """A session-start after a Tier 1 restart confirms delivery."""
        for action in self.actions:
            if action.device == device and action.tier == Tier.REMOTE_RESTART and action.resolution is None:
                action.resolution = "confirmed_by_session_start"
                action.resolved_at = now
