"""The air-gapped terminal actor.

A terminal owns a receive-only inbound endpoint, a packet decoder holding the
fleet's public verification key, a screen and camera (the optical link) and a
USB whitelist.  It has no way to originate network traffic: nothing in this
module constructs a send.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from typing import Callable

from .channel import ChannelConfig, InboundEndpoint, make_endpoint
from .optical import LifecycleCode, LifecycleKind, SessionOutputFrame
from .session_crypto import (
    AuthFailure,
    EncryptedSessionPayload,
    Expired,
    OpticalKeyFrame,
    SessionMismatch,
    accept_optical_frame,
    decrypt_payload,
)
from .timebase import MINUTE, SECOND
from .trace import BROADCAST, DISPLAY, INTERNAL, OPTICAL, Trace
from .wire import (
    BROADCAST as BROADCAST_ADDRESS,
    DeviceId,
    FirmwareChunk,
    PacketDecoder,
    PayloadType,
    Rejection,
    SignedPacket,
    COMPONENT_FIRMWARE,
    COMPONENT_MODEL,
    decode_revocation,
)

DEFAULT_INFERENCE_TIME = 3 * SECOND
DEFAULT_SESSION_LENGTH = 15 * MINUTE


class TerminalError(Exception):
    pass


class RevokedTerminal(TerminalError):
    pass


class UnknownPayloadType(TerminalError):
    pass


class NoPendingPayload(TerminalError):
    pass


class UsbResult(enum.Enum):
    ENUMERATED = "Enumerated"
    BLOCKED = "Blocked"


@dataclass(frozen=True)
class UsbDescriptor:
    vendor_id: int
    product_id: int
    device_class: int

    def __post_init__(self) -> None:
        if not (0 <= self.vendor_id < 1 << 16 and 0 <= self.product_id < 1 << 16):
            raise ValueError("vendor and product ids are 16-bit")
        if not 0 <= self.device_class < 1 << 8:
            raise ValueError("device class is 8-bit")

    @property
    def triple(self) -> tuple[int, int, int]:
        return (self.vendor_id, self.product_id, self.device_class)


@dataclass
class DiagnosticBlock:
    firmware_version: int
    model_version: int
    peripheral_status: str = "ok"
    error_codes: list[str] = field(default_factory=list)
    signal_strength: float = -62.0
    storage_health: str = "ok"
    last_operational_state: str = "idle"


def echo_inference(plaintext: bytes) -> bytes:
    """Stand-in for on-device inference: length plus a digest of the input."""
    return b"len=%d;sha256=%s" % (len(plaintext), hashlib.sha256(plaintext).hexdigest()[:16].encode())


@dataclass(frozen=True)
class SessionResult:
    output: SessionOutputFrame
    start_code: LifecycleCode
    end_code: LifecycleCode


class Terminal:
    def __init__(
        self,
        device: DeviceId,
        trusted_key,
        config: ChannelConfig,
        usb_whitelist=(),
        trace: Trace | None = None,
        inference: Callable[[bytes], bytes] = echo_inference,
        firmware_version: int = 1,
        model_version: int = 1,
    ):
        self.device = device
        self.name = f"terminal:{device.hex()}"
        self.endpoint: InboundEndpoint = make_endpoint(config, device)
        self.trace = trace if trace is not None else Trace()
        self.inference = inference
        self.pending_payloads: dict[bytes, EncryptedSessionPayload] = {}
        self.firmware_version = firmware_version
        self.model_version = model_version
        self.revoked = False
        self.quarantined = False
        self.usb_whitelist = frozenset(
            d.triple if isinstance(d, UsbDescriptor) else tuple(d) for d in usb_whitelist
        )
        self.diagnostic = DiagnosticBlock(firmware_version, model_version)
        self.display: DiagnosticBlock | None = None
        self.restarts = 0
        self.completed_sessions = 0
        self._decoder = PacketDecoder(trusted_key)
        self._chunks: dict[tuple[int, int], dict[int, bytes]] = {}

    @property
    def decoder_stats(self) -> tuple[int, int]:
        return (self._decoder.signature_accepts, self._decoder.payload_parses)

    # -- inbound channel -------------------------------------------------

    def poll(self) -> list[SignedPacket]:
        """Drain the receive queue through verification and dispatch."""
        accepted = []
        for at, data in self.endpoint.receive():
            packet = self.ingest(data, at)
            if packet is not None:
                accepted.append(packet)
        return accepted

    def ingest(self, data: bytes, now: int) -> SignedPacket | None:
        try:
            packet = self._decoder.decode_and_verify(data)
        except Rejection as exc:
            self.trace.emit(now, "packet_rejected", self.name, INTERNAL, reason=exc.reason)
            return None
        try:
            self.handle_packet(packet, now)
        except TerminalError as exc:
            self.trace.emit(
                now, "packet_dropped", self.name, INTERNAL, reason=type(exc).__name__
            )
        return packet

    def handle_packet(self, packet: SignedPacket, now: int) -> None:
        if packet.destination != self.device and packet.destination != BROADCAST_ADDRESS:
            return
        ptype = packet.payload_type
        if not isinstance(ptype, PayloadType):
            raise UnknownPayloadType(f"payload type {ptype}")
        if ptype is PayloadType.SESSION_PAYLOAD:
            self._on_session_payload(packet, now)
        elif ptype is PayloadType.FIRMWARE_CHUNK:
            self._on_firmware_chunk(packet, now)
        elif ptype is PayloadType.REVOCATION:
            if decode_revocation(packet.ciphertext) == self.device and not self.revoked:
                self.revoked = True
                self.trace.emit(now, "revoked", self.name, BROADCAST, sequence=packet.sequence)
        elif ptype is PayloadType.RESTART_COMMAND:
            self.restarts += 1
            self.diagnostic = DiagnosticBlock(
                self.firmware_version, self.model_version, last_operational_state="restarted"
            )
            self.trace.emit(now, "restart", self.name, INTERNAL, sequence=packet.sequence)
        elif ptype is PayloadType.TROUBLESHOOT_COMMAND:
            self.run_diagnostic(now)

    def _on_session_payload(self, packet: SignedPacket, now: int) -> None:
        if self.revoked:
            self.trace.emit(now, "session_payload_refused", self.name, INTERNAL, reason="revoked")
            raise RevokedTerminal("terminal is revoked")
        payload = EncryptedSessionPayload.from_bytes(packet.ciphertext)
        self.pending_payloads[payload.session_id] = payload
        self.trace.emit(
            now, "stage1_payload_received", self.name, BROADCAST,
            session=payload.session_id.hex(), size=len(packet.ciphertext),
        )

    def _on_firmware_chunk(self, packet: SignedPacket, now: int) -> None:
        if self.revoked:
            raise RevokedTerminal("terminal is revoked")
        chunk = FirmwareChunk.from_bytes(packet.ciphertext)
        current = self.model_version if chunk.component == COMPONENT_MODEL else self.firmware_version
        if chunk.version <= current:
            return
        parts = self._chunks.setdefault((chunk.component, chunk.version), {})
        parts[chunk.index] = chunk.data
        if len(parts) < chunk.count or any(i not in parts for i in range(chunk.count)):
            return
        del self._chunks[(chunk.component, chunk.version)]
        image = b"".join(parts[i] for i in range(chunk.count))
        if chunk.component == COMPONENT_FIRMWARE:
            self.firmware_version = chunk.version
        else:
            self.model_version = chunk.version
        self.diagnostic.firmware_version = self.firmware_version
        self.diagnostic.model_version = self.model_version
        self.trace.emit(
            now, "update_applied", self.name, INTERNAL,
            component="model" if chunk.component == COMPONENT_MODEL else "firmware",
            version=chunk.version, size=len(image),
        )

    # -- session flow ----------------------------------------------------

    def run_session(
        self,
        session_id: bytes,
        frame: OpticalKeyFrame,
        now: int,
        duration: int = DEFAULT_SESSION_LENGTH,
        inference_time: int = DEFAULT_INFERENCE_TIME,
    ) -> SessionResult:
        if self.revoked:
            raise RevokedTerminal("terminal is revoked")
        payload = self.pending_payloads.get(session_id)
        if payload is None:
            raise NoPendingPayload(session_id.hex())
        sid = session_id.hex()
        start = LifecycleCode(self.device, LifecycleKind.SESSION_START, now)
        self.trace.emit(now, "lifecycle_code_displayed", self.name, OPTICAL, code="SessionStart")

        try:
            cell = accept_optical_frame(frame, now, expected_session=session_id)
        except (Expired, SessionMismatch) as exc:
            self.trace.emit(now, "session_aborted", self.name, INTERNAL, session=sid,
                            reason=type(exc).__name__)
            raise
        self.trace.emit(now, "stage2_key_received", self.name, OPTICAL, session=sid)

        try:
            plaintext = decrypt_payload(payload, cell, now)
        except AuthFailure:
            del self.pending_payloads[session_id]
            self.trace.emit(now, "key_purged", self.name, INTERNAL, session=sid,
                            purged=cell.purge_flag)
            self.trace.emit(now, "session_aborted", self.name, INTERNAL, session=sid,
                            reason="AuthFailure")
            raise
        self.trace.emit(now, "stage3_decrypted", self.name, INTERNAL, session=sid,
                        size=len(plaintext))
        self.trace.emit(now, "key_purged", self.name, INTERNAL, session=sid,
                        purged=cell.purge_flag, purged_at=cell.purged_at)
        del self.pending_payloads[session_id]

        output = SessionOutputFrame(session_id, self.inference(plaintext), now + inference_time)
        del plaintext
        self.trace.emit(output.displayed_at, "stage4_output_displayed", self.name, OPTICAL,
                        session=sid, size=len(output.output))
        end_at = now + max(duration, inference_time)
        end = LifecycleCode(self.device, LifecycleKind.SESSION_END, end_at, end_at - now)
        self.trace.emit(end_at, "lifecycle_code_displayed", self.name, OPTICAL, code="SessionEnd",
                        duration=end_at - now)
        self.completed_sessions += 1
        self.diagnostic.last_operational_state = "session_complete"
        return SessionResult(output, start, end)

    # -- local peripherals -----------------------------------------------

    def usb_enumerate(self, descriptor: UsbDescriptor) -> UsbResult:
        if descriptor.triple in self.usb_whitelist:
            return UsbResult.ENUMERATED
        return UsbResult.BLOCKED

    def run_diagnostic(self, now: int) -> DiagnosticBlock:
        """Render the diagnostic block on the local screen only."""
        block = DiagnosticBlock(
            firmware_version=self.firmware_version,
            model_version=self.model_version,
            peripheral_status=self.diagnostic.peripheral_status,
            error_codes=list(self.diagnostic.error_codes),
            signal_strength=self.diagnostic.signal_strength,
            storage_health=self.diagnostic.storage_health,
            last_operational_state=self.diagnostic.last_operational_state,
        )
        self.display = block
        self.trace.emit(now, "diagnostic_displayed", self.name, DISPLAY,
                        firmware_version=block.firmware_version,
                        model_version=block.model_version)
        return block
