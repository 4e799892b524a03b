"""Messages that may appear on a line-of-sight optical link."""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .records import persistable
from .session_crypto import OpticalKeyFrame
from .wire import DeviceId


class LifecycleKind(enum.Enum):
    SESSION_START = "SessionStart"
    SESSION_END = "SessionEnd"


@persistable
@dataclass(frozen=True)
class LifecycleCode:
    """Session-start/end code shown on the terminal screen for the companion to scan."""

    device: DeviceId
    kind: LifecycleKind
    timestamp: int
    duration: int | None = None


@dataclass(frozen=True)
class SessionOutputFrame:
    """Inference output shown on the terminal screen.  Never persisted."""

    session_id: bytes
    output: bytes
    displayed_at: int


OPTICAL_MESSAGE_TYPES = (OpticalKeyFrame, SessionOutputFrame, LifecycleCode)
