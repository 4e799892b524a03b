"""Patient-side companion device.

The companion is an ordinary networked phone.  It scans the terminal's
lifecycle codes and session output, shows the session key frame to the
terminal camera, and forwards lifecycle events to the fleet backend over its
own network link.  Nothing flows from the terminal to it except light.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .channel import OpticalLink, OpticalReceipt, deliver_optical
from .optical import LifecycleCode, LifecycleKind, SessionOutputFrame
from .records import persistable
from .session_crypto import OpticalKeyFrame
from .trace import NETWORK, OPTICAL, Trace
from .wire import DeviceId

DROPPED = None


@persistable
@dataclass(frozen=True)
class LifecycleEvent:
    device: DeviceId
    kind: LifecycleKind
    timestamp: int
    duration: int | None = None

    def __post_init__(self) -> None:
        if self.kind is LifecycleKind.SESSION_END:
            if self.duration is None or self.duration < 0:
                raise ValueError("SessionEnd requires a non-negative duration")
        elif self.duration is not None:
            raise ValueError("only SessionEnd carries a duration")

    @property
    def session_start(self) -> int:
        if self.kind is LifecycleKind.SESSION_END:
            return self.timestamp - self.duration
        return self.timestamp


@persistable
@dataclass(frozen=True)
class KeyExposure:
    """Analyzer annotation: a compromised companion saw a session key frame."""

    companion: str
    session: str
    at: int
    adversary_class: str = "physical"


@dataclass
class CompanionDevice:
    id: str
    link: OpticalLink
    backend: Callable[[LifecycleEvent, int], object] | None = None
    trace: Trace = field(default_factory=Trace)
    compromised: bool = False
    present: bool = True
    timestamp_skew: int = 0
    exposures: list[KeyExposure] = field(default_factory=list)
    scanned_outputs: int = 0

    @property
    def name(self) -> str:
        return f"companion:{self.id}"

    def relay_lifecycle(self, code: LifecycleCode, now: int) -> LifecycleEvent | None:
        """Scan a lifecycle code off the terminal screen and forward it."""
        if not self.present:
            return DROPPED
        deliver_optical(self.link, code, now)
        timestamp = code.timestamp
        if self.compromised and self.timestamp_skew:
            timestamp += self.timestamp_skew
        event = LifecycleEvent(code.device, code.kind, timestamp, code.duration)
        self.trace.emit(now, "lifecycle_uplink", self.name, NETWORK,
                        device=code.device.hex(), code=code.kind.value, timestamp=timestamp)
        if self.backend is not None:
            self.backend(event, now)
        return event

    def present_key_frame(self, frame: OpticalKeyFrame, now: int) -> OpticalReceipt:
        """Show the key frame to the terminal camera."""
        receipt = deliver_optical(self.link, frame, now)
        self.trace.emit(now, "key_frame_shown", self.name, OPTICAL, session=frame.session_id.hex())
        if self.compromised:
            exposure = KeyExposure(self.id, frame.session_id.hex(), now)
            self.exposures.append(exposure)
            self.trace.emit(now, "key_exposure", self.name, OPTICAL,
                            session=frame.session_id.hex(), adversary_class="physical")
        return receipt

    def scan_output(self, frame: SessionOutputFrame, now: int) -> OpticalReceipt:
        receipt = deliver_optical(self.link, frame, now)
        self.scanned_outputs += 1
        return receipt
