from __future__ import annotations

import dataclasses
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sovereign_edge.channel import ChannelConfig, ChannelKind
from sovereign_edge.companion import LifecycleEvent
from sovereign_edge.fleet import (
    AnomalyFlag,
    CadenceModel,
    FleetBackend,
    FleetError,
    NoOutstandingFlag,
    RevokedDevice,
    Tier,
    UnknownDevice,
)
from sovereign_edge.optical import LifecycleKind
from sovereign_edge.session_crypto import (
    AuthFailure,
    EncryptedSessionPayload,
    VolatileKeyCell,
    decrypt_payload,
)
from sovereign_edge.timebase import HOUR, SECOND
from sovereign_edge.wire import DeviceId, PayloadType

SAT = ChannelConfig(ChannelKind.SATELLITE_BROADCAST)


def backend(n=3, **kw):
    b = FleetBackend(SAT, random.Random(5), **kw)
    for i in range(n):
        b.register(DeviceId.from_index(i))
    return b


def end(dev, start, duration=900 * SECOND):
    return LifecycleEvent(dev, LifecycleKind.SESSION_END, start + duration, duration)


def start(dev, t):
    return LifecycleEvent(dev, LifecycleKind.SESSION_START, t)


def test_provisioning_queues_one_signed_payload():
    b = backend()
    dev = DeviceId.from_index(0)
    packet, frame = b.provision_session(dev, b"history", 7)
    assert b.queue_depth == 1
    assert packet.payload_type is PayloadType.SESSION_PAYLOAD and packet.destination == dev
    assert frame.issued_at == 7 and frame.session_id == EncryptedSessionPayload.from_bytes(
        packet.ciphertext).session_id


def test_revoked_and_unknown_devices_get_nothing():
    b = backend()
    dev = DeviceId.from_index(1)
    b.revoke(dev, 0)
    depth = b.queue_depth
    with pytest.raises(RevokedDevice):
        b.provision_session(dev, b"x", 0)
    with pytest.raises(UnknownDevice):
        b.provision_session(DeviceId.from_index(99), b"x", 0)
    assert b.queue_depth == depth


def test_session_keys_do_not_cross():
    b = backend(n=10)
    sessions = []
    for i in range(100):
        packet, frame = b.provision_session(DeviceId.from_index(i % 10), b"%d" % i, i)
        sessions.append((EncryptedSessionPayload.from_bytes(packet.ciphertext), frame))
    assert len({f.session_id for _, f in sessions}) == 100
    for i, (payload, _) in enumerate(sessions):
        for j in (i + 1) % 100, (i + 37) % 100:
            other = sessions[j][1]
            with pytest.raises(AuthFailure):
                decrypt_payload(payload, VolatileKeyCell(payload.session_id, other.k_priv, 0), 0)
        own = VolatileKeyCell(payload.session_id, sessions[i][1].k_priv, 0)
        assert decrypt_payload(payload, own, 0) == b"%d" % i


@pytest.mark.parametrize("requested_s, expected_s", [(0, 0), (1, 299), (299, 1), (301, 299)])
def test_revocation_waits_for_next_cycle(requested_s, expected_s):
    b = backend()
    rev = b.revoke(DeviceId.from_index(0), requested_s * SECOND)
    b.run_cycle(b.next_cycle(rev.requested_at))
    service = rev.delivered_at - rev.cycle_at
    assert rev.cycle_at - rev.requested_at == expected_s * SECOND
    assert rev.latency == expected_s * SECOND + service and rev.attempts == 1


def quantile_oracle(samples, q):
    return int(np.quantile(np.array(samples), q, method="inverted_cdf"))


@given(st.lists(st.integers(1, 10**9), min_size=20, max_size=400),
       st.sampled_from([0.5, 0.9, 0.99, 0.999]))
def test_threshold_matches_inverted_cdf_quantile(samples, q):
    m = CadenceModel(DeviceId.from_index(0), quantile=q)
    m.samples = list(samples)
    assert m.threshold() == quantile_oracle(samples, q)


def test_threshold_frozen_examples():
    m = CadenceModel(DeviceId.from_index(0))
    m.samples = list(range(1, 1001))
    assert m.threshold() == 999
    m.samples = list(range(1, 21))
    m._threshold = None
    assert m.threshold() == 20


def test_cold_start_never_flags():
    b = backend(n=1)
    dev = DeviceId.from_index(0)
    for k in range(19):  # 19 sessions give 18 intervals, two short of ready
        b.ingest_lifecycle(end(dev, k * HOUR), k * HOUR)
    assert len(b.cadence[dev].samples) == 18
    assert b.sweep(10**6 * HOUR) == []


def test_flag_raised_after_silence_and_cleared_by_session_start():
    b = backend(n=1)
    dev = DeviceId.from_index(0)
    for k in range(30):
        b.ingest_lifecycle(end(dev, k * 6 * HOUR), k * 6 * HOUR)
    last = 29 * 6 * HOUR
    assert b.sweep(last + 6 * HOUR) == []
    (flag,) = b.sweep(last + 6 * HOUR + 1)
    assert flag.elapsed > flag.threshold == 6 * HOUR
    assert b.sweep(last + 100 * HOUR) == []  # persists, not re-raised
    b.ingest_lifecycle(start(dev, last + 101 * HOUR), last + 101 * HOUR)
    assert dev not in b.flags and len(b.anomaly_log) == 1


def test_flag_has_no_cause():
    fields = {f.name for f in dataclasses.fields(AnomalyFlag)}
    assert not fields & {"cause", "reason", "diagnosis"}
    assert AnomalyFlag.__dataclass_fields__["kind"].default == "inactivity"


def test_unknown_device_telemetry_is_ignored():
    b = backend(n=1)
    stranger = DeviceId.from_index(42)
    b.ingest_lifecycle(start(stranger, 0), 0)
    assert stranger not in b.cadence and b.trace.of_kind("telemetry_unknown_device")


def flagged_backend():
    b = backend(n=1)
    dev = DeviceId.from_index(0)
    b.flags[dev] = AnomalyFlag(dev, 0, 0, 1, 1)
    return b, dev


def test_tiers():
    b, dev = flagged_backend()
    with pytest.raises(NoOutstandingFlag):
        b.respond(DeviceId.from_index(9), Tier.REMOTE_RESTART, 0)
    a1 = b.respond(dev, Tier.REMOTE_RESTART, 0)
    assert a1.command_sequence == 1 and a1.resolution is None
    b.resolve_on_session(dev, 5)
    assert a1.resolution == "confirmed_by_session_start"

    a2 = b.respond(dev, Tier.IN_PERSON_TROUBLESHOOT, 10)
    assert b.trace.of_kind("physical_visit_started")
    b.record_visit_reading(dev, "block", 20)
    assert a2.resolution == "diagnostic_read_on_site"
    with pytest.raises(FleetError):
        b.record_visit_reading(dev, "block", 30)

    with pytest.raises(FleetError):
        b.respond(dev, Tier.ONSITE_SWAP, 40)
    new = DeviceId.from_index(100)
    b.swap_handler = lambda d, now: new
    a3 = b.respond(dev, Tier.ONSITE_SWAP, 40)
    assert a3.replacement == new and b.registry[dev].quarantined and new in b.registry
    assert dev not in b.flags
    assert b.sweep(10**12) == []


def test_management_is_push_only():
    b = backend()
    public = {n for n in dir(b) if not n.startswith("_") and callable(getattr(b, n))}
    assert not any(n.startswith(("pull", "query", "request", "fetch", "poll")) for n in public)


def test_sequences_are_per_stream():
    b = backend(n=2)
    d0, d1 = DeviceId.from_index(0), DeviceId.from_index(1)
    seqs = [b.revoke(d0, 0).sequence, b.revoke(d1, 0).sequence]
    p = b.queue_command(d0, PayloadType.RESTART_COMMAND, 0)
    assert seqs == [1, 1] and p.sequence == 1
