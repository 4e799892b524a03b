"""Simulation time: integer microsecond ticks."""

from __future__ import annotations

TICK = 1
MILLISECOND = 1_000
SECOND = 1_000_000
MINUTE = 60 * SECOND
HOUR = 60 * MINUTE
DAY = 24 * HOUR


def seconds(value: float) -> int:
    """Convert seconds to ticks, rounding to the nearest tick."""
    return int(round(value * SECOND))


def to_seconds(ticks: int) -> float:
    return ticks / SECOND


def transmission_ticks(n_bytes: int, throughput_bps: int) -> int:
    """Ticks needed to serialize ``n_bytes`` at ``throughput_bps``, rounded up."""
    return -(-n_bytes * 8 * SECOND // throughput_bps)


def next_boundary(t: int, period: int, phase: int = 0) -> int:
    """First time ``>= t`` of the form ``phase + k * period``."""
    k = -(-(t - phase) // period)
    return phase + k * period
