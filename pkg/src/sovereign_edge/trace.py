"""Append-only simulation event trace."""

from __future__ import annotations

from dataclasses import dataclass, field

from .records import dumps, persistable

# Channel classes an event can travel on.
BROADCAST = "broadcast"
OPTICAL = "optical"
NETWORK = "network"
DISPLAY = "display"
PHYSICAL = "physical"
INTERNAL = "internal"

CHANNEL_CLASSES = (BROADCAST, OPTICAL, NETWORK, DISPLAY, PHYSICAL, INTERNAL)

_SCALAR = (str, int, float, bool, type(None))


@persistable
@dataclass(frozen=True)
class TraceEvent:
    time: int
    seq: int
    kind: str
    actor: str
    channel: str
    detail: dict[str, str | int | float | bool | None] = field(default_factory=dict)


class Trace:
    """Ordered event log.  Detail values must be scalars (no raw bytes)."""

    def __init__(self) -> None:
        self.events: list[TraceEvent] = []

    def emit(self, time: int, kind: str, actor: str, channel: str, **detail) -> TraceEvent:
        if channel not in CHANNEL_CLASSES:
            raise ValueError(f"unknown channel class {channel!r}")
        for key, value in detail.items():
            if not isinstance(value, _SCALAR):
                raise TypeError(f"trace detail {key!r} must be a scalar, got {type(value).__name__}")
        event = TraceEvent(time, len(self.events), kind, actor, channel, dict(detail))
        self.events.append(event)
        return event

    def __iter__(self):
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def of_kind(self, *kinds: str) -> list[TraceEvent]:
        return [e for e in self.events if e.kind in kinds]

    def on_channel(self, channel: str) -> list[TraceEvent]:
        return [e for e in self.events if e.channel == channel]

    def to_jsonl(self) -> str:
        return "".join(dumps(e) + "\n" for e in self.events)
