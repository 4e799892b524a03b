from __future__ import annotations

import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from sovereign_edge.channel import (
    HARDWARE_KINDS,
    ChannelConfig,
    ChannelKind,
    Enforcement,
    InboundEndpoint,
    NoLineOfSight,
    OpticalLink,
    OutboundResult,
    PolicyEndpoint,
    SizedPayload,
    attempt_outbound,
    deliver_optical,
    make_endpoint,
    schedule_broadcast,
)
from sovereign_edge.optical import LifecycleCode, LifecycleKind, SessionOutputFrame
from sovereign_edge.session_crypto import generate_session
from sovereign_edge.timebase import SECOND
from sovereign_edge.wire import DeviceId

DEV = DeviceId.from_index(1)


@pytest.mark.parametrize("kind", sorted(HARDWARE_KINDS, key=lambda k: k.value))
def test_hardware_endpoints_have_no_send(kind):
    cfg = ChannelConfig(kind)
    assert cfg.enforcement is Enforcement.HARDWARE and cfg.unidirectional == "Yes"
    ep = make_endpoint(cfg, DEV)
    assert type(ep) is InboundEndpoint
    assert not hasattr(ep, "send")
    assert attempt_outbound(ep, b"x") is OutboundResult.STRUCTURALLY_IMPOSSIBLE


@pytest.mark.parametrize("kind", [ChannelKind.MANAGED_IP_OUTBOUND_DISABLED,
                                  ChannelKind.FIVE_G_BROADCAST_PROFILE])
def test_policy_endpoints(kind):
    intact = ChannelConfig(kind)
    assert intact.unidirectional == "Conditional"
    ep = make_endpoint(intact, DEV)
    assert isinstance(ep, PolicyEndpoint)
    assert attempt_outbound(ep, b"x") is OutboundResult.POLICY_VIOLATION
    broken = make_endpoint(ChannelConfig(kind, policy_intact=False), DEV)
    assert attempt_outbound(broken, b"x") is OutboundResult.SENT


def test_config_validation():
    with pytest.raises(ValueError):
        ChannelConfig(ChannelKind.HARDWARE_DIODE, policy_intact=False)
    with pytest.raises(ValueError):
        ChannelConfig(ChannelKind.HARDWARE_DIODE, enforcement=Enforcement.POLICY)
    with pytest.raises(ValueError):
        ChannelConfig(ChannelKind.RADIO_DATACAST, loss_rate=1.0)


def test_disabled_endpoint_drops():
    ep = InboundEndpoint(DEV, ChannelConfig(ChannelKind.RADIO_DATACAST))
    ep.enabled = False
    assert not ep.push(b"x", 0)
    assert ep.receive() == []


def test_one_gigabyte_at_fifty_megabits():
    cfg = ChannelConfig(ChannelKind.SATELLITE_BROADCAST)
    (ev,) = schedule_broadcast(cfg, [SizedPayload("image", 10**9)], start_time=0)
    assert ev.delivered_at == 160 * SECOND


def test_back_to_back_serialization():
    cfg = ChannelConfig(ChannelKind.SATELLITE_BROADCAST, throughput_bps=8_000_000)
    evs = schedule_broadcast(cfg, [b"\x00" * 1000, b"\x00" * 3000], start_time=5)
    assert [e.delivered_at for e in evs] == [5 + 1000, 5 + 4000]


def test_losses_push_to_later_cycles():
    cfg = ChannelConfig(ChannelKind.SATELLITE_BROADCAST, loss_rate=0.5)
    evs = schedule_broadcast(cfg, [b"a"] * 500, 0, random.Random(3))
    for e in evs:
        assert e.delivered_at == e.first_attempt_at + e.losses * cfg.cycle_period
    mean_losses = sum(e.losses for e in evs) / len(evs)
    assert 0.8 < mean_losses < 1.2  # geometric, mean p/(1-p) = 1
    with pytest.raises(ValueError):
        schedule_broadcast(cfg, [b"a"], 0)


@given(st.lists(st.integers(1, 10_000), min_size=1, max_size=30), st.integers(0, 10**9))
def test_delivery_order_matches_queue_order(sizes, start):
    cfg = ChannelConfig(ChannelKind.TERRESTRIAL_BROADCAST)
    evs = schedule_broadcast(cfg, [SizedPayload(str(i), s) for i, s in enumerate(sizes)], start)
    times = [e.delivered_at for e in evs]
    assert times == sorted(times) and times[0] > start


def test_optical_link_carries_only_optical_messages():
    link = OpticalLink("t", "c")
    keys = generate_session(random.Random(1))
    deliver_optical(link, keys.key_frame(0), 0)
    deliver_optical(link, SessionOutputFrame(b"s" * 16, b"out", 0), 0)
    deliver_optical(link, LifecycleCode(DEV, LifecycleKind.SESSION_START, 0), 0)
    with pytest.raises(TypeError):
        deliver_optical(link, b"raw bytes", 0)
    link.line_of_sight = False
    with pytest.raises(NoLineOfSight):
        deliver_optical(link, keys.key_frame(0), 0)
