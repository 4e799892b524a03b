from __future__ import annotations

import inspect
import random

import pytest

from sovereign_edge import terminal as terminal_module
from sovereign_edge.channel import ChannelConfig, ChannelKind
from sovereign_edge.fleet import FleetBackend
from sovereign_edge.session_crypto import AuthFailure, Expired
from sovereign_edge.terminal import (
    NoPendingPayload,
    RevokedTerminal,
    Terminal,
    UsbDescriptor,
    UsbResult,
)
from sovereign_edge.timebase import MINUTE, SECOND
from sovereign_edge.trace import DISPLAY, NETWORK
from sovereign_edge.wire import DeviceId, PacketFields, PayloadType, encode_packet, sign_packet

DEV = DeviceId.from_index(1)


@pytest.fixture
def fleet():
    cfg = ChannelConfig(ChannelKind.SATELLITE_BROADCAST)
    backend = FleetBackend(cfg, random.Random(11))
    backend.register(DEV)
    term = Terminal(DEV, backend.verification_key, cfg, trace=backend.trace,
                    usb_whitelist=[UsbDescriptor(0x046D, 0xC52B, 3)])
    return backend, term


def broadcast(backend, term, at):
    for d in backend.run_cycle(backend.next_cycle(at)):
        term.endpoint.push(d.data, d.delivered_at)
    return term.poll()


def test_session_end_to_end(fleet):
    backend, term = fleet
    _, frame = backend.provision_session(DEV, b"history", 0)
    broadcast(backend, term, 0)
    now = 10 * MINUTE
    result = term.run_session(frame.session_id, backend.issue_key_frame(frame.session_id, now), now)
    assert result.output.output.startswith(b"len=7;")
    assert result.end_code.duration == 15 * MINUTE
    kinds = [e.kind for e in term.trace if e.actor == term.name]
    assert kinds.index("stage1_payload_received") < kinds.index("stage2_key_received") \
        < kinds.index("stage3_decrypted") < kinds.index("stage4_output_displayed")
    assert frame.session_id not in term.pending_payloads


def test_expired_frame_keeps_payload_for_retry(fleet):
    backend, term = fleet
    _, frame = backend.provision_session(DEV, b"x", 0)
    broadcast(backend, term, 0)
    with pytest.raises(Expired):
        term.run_session(frame.session_id, frame, frame.issued_at + 2 * MINUTE)
    assert frame.session_id in term.pending_payloads
    fresh = backend.issue_key_frame(frame.session_id, 3 * MINUTE)
    term.run_session(frame.session_id, fresh, 3 * MINUTE)


def test_wrong_key_drops_payload(fleet):
    backend, term = fleet
    _, a = backend.provision_session(DEV, b"a", 0)
    _, b = backend.provision_session(DEV, b"b", 0)
    broadcast(backend, term, 0)
    forged = type(a)(a.session_id, b.k_priv, a.issued_at)
    with pytest.raises(AuthFailure):
        term.run_session(a.session_id, forged, a.issued_at)
    with pytest.raises(NoPendingPayload):
        term.run_session(a.session_id, a, a.issued_at)


def test_revocation_blocks_sessions(fleet):
    backend, term = fleet
    backend.revoke(DEV, 0)
    broadcast(backend, term, 0)
    assert term.revoked
    with pytest.raises(RevokedTerminal):
        term.run_session(b"\x00" * 16, None, 0)


def test_firmware_applies_once_when_complete(fleet):
    backend, term = fleet
    image = random.Random(1).randbytes(5000)
    packets = backend.queue_update(image, version=2, now=0, chunk_size=1024)
    encoded = [encode_packet(p) for p in packets]
    backend.run_cycle(0)  # drain; deliver by hand with a replayed duplicate
    for i in [0, 1, 2, 2, 3]:
        term.ingest(encoded[i], 0)
    assert term.firmware_version == 1
    assert term.trace.of_kind("packet_rejected")[0].detail["reason"] == "replayed_sequence"
    term.ingest(encoded[4], 0)
    term.ingest(encoded[4], 0)
    applied = term.trace.of_kind("update_applied")
    assert len(applied) == 1 and applied[0].detail["size"] == 5000
    assert term.firmware_version == 2


def test_stale_firmware_ignored(fleet):
    backend, term = fleet
    for p in backend.queue_update(b"old", version=1, now=0):
        term.ingest(encode_packet(p), 0)
    assert term.firmware_version == 1 and not term.trace.of_kind("update_applied")


def test_unsigned_input_is_rejected_without_side_effects(fleet):
    backend, term = fleet
    impostor = FleetBackend(backend.config, random.Random(2))
    rogue = sign_packet(PacketFields(PayloadType.REVOCATION, DEV, 1, DEV.value),
                        impostor._signing.private)
    term.ingest(encode_packet(rogue), 0)
    assert not term.revoked
    assert term.decoder_stats == (0, 0)
    assert term.trace.of_kind("packet_rejected")[0].detail["reason"] == "bad_signature"


def test_packets_for_other_terminals_are_ignored(fleet):
    backend, term = fleet
    other = DeviceId.from_index(2)
    backend.register(other)
    backend.revoke(other, 0)
    broadcast(backend, term, 0)
    assert not term.revoked


def test_usb_whitelist_matches_full_triple(fleet):
    _, term = fleet
    assert term.usb_enumerate(UsbDescriptor(0x046D, 0xC52B, 3)) is UsbResult.ENUMERATED
    assert term.usb_enumerate(UsbDescriptor(0x046D, 0xC52B, 8)) is UsbResult.BLOCKED
    with pytest.raises(ValueError):
        UsbDescriptor(1 << 16, 0, 0)


def test_diagnostics_only_reach_the_screen(fleet):
    backend, term = fleet
    backend.trace.emit(0, "seed", "test", NETWORK)
    backend.flags[DEV] = object()  # an outstanding flag is all respond() needs
    backend.respond(DEV, 2, 0)
    broadcast(backend, term, 0)
    shown = term.trace.of_kind("diagnostic_displayed")
    assert len(shown) == 1 and shown[0].channel == DISPLAY
    assert term.display is not None


def test_terminal_module_never_transmits():
    source = inspect.getsource(terminal_module)
    assert ".send(" not in source and "socket" not in source
