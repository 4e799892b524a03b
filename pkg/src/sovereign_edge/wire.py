"""Signed packet format for the inbound broadcast channel.

Layout (all integers big-endian)::

    offset  size  field
    0       4     magic            b"SOVB"
    4       1     version          0x01
    5       1     payload_type     PayloadType
    6       16    destination      DeviceId (all 0xFF = fleet broadcast)
    22      8     sequence         u64, strictly increasing per stream
    30      4     ciphertext_len   u32
    34      n     ciphertext
    34+n    64    signature        Ed25519 over bytes [0, 34+n)

A receiver checks framing and the signature before it touches any field that
depends on payload contents; see :class:`PacketDecoder`.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .records import persistable_scalar

MAGIC = b"SOVB"
VERSION = 1
DEVICE_ID_SIZE = 16
SIGNATURE_SIZE = 64
HEADER = struct.Struct(">4sBB16sQI")
HEADER_SIZE = HEADER.size  # 34
FRAME_OVERHEAD = HEADER_SIZE + SIGNATURE_SIZE  # 98

DEFAULT_MTU = 4096
DEFAULT_MTU_MULTIPLE = 256
MAX_CIPHERTEXT = DEFAULT_MTU * DEFAULT_MTU_MULTIPLE


class PayloadType(enum.IntEnum):
    SESSION_PAYLOAD = 1
    FIRMWARE_CHUNK = 2
    REVOCATION = 3
    RESTART_COMMAND = 4
    TROUBLESHOOT_COMMAND = 5


@dataclass(frozen=True, order=True)
class DeviceId:
    value: bytes

    def __post_init__(self) -> None:
        if not isinstance(self.value, bytes) or len(self.value) != DEVICE_ID_SIZE:
            raise ValueError("DeviceId must be exactly 16 bytes")

    @classmethod
    def from_index(cls, index: int, prefix: bytes = b"TRM-") -> DeviceId:
        return cls(prefix + index.to_bytes(DEVICE_ID_SIZE - len(prefix), "big"))

    @classmethod
    def from_hex(cls, text: str) -> DeviceId:
        return cls(bytes.fromhex(text))

    @property
    def is_broadcast(self) -> bool:
        return self.value == BROADCAST.value

    def hex(self) -> str:
        return self.value.hex()

    def __str__(self) -> str:
        return self.value.hex()


BROADCAST = DeviceId(b"\xff" * DEVICE_ID_SIZE)
persistable_scalar(DeviceId, DeviceId.hex)


@dataclass(frozen=True)
class PacketFields:
    """Everything a packet carries except its signature."""

    payload_type: int
    destination: DeviceId
    sequence: int
    ciphertext: bytes
    version: int = VERSION

    def signed_bytes(self) -> bytes:
        return (
            HEADER.pack(
                MAGIC,
                self.version,
                int(self.payload_type),
                self.destination.value,
                self.sequence,
                len(self.ciphertext),
            )
            + self.ciphertext
        )


@dataclass(frozen=True)
class SignedPacket:
    payload_type: int
    destination: DeviceId
    sequence: int
    ciphertext: bytes
    signature: bytes
    version: int = VERSION
    magic: bytes = field(default=MAGIC, repr=False)

    @property
    def ciphertext_len(self) -> int:
        return len(self.ciphertext)

    @property
    def fields(self) -> PacketFields:
        return PacketFields(
            self.payload_type, self.destination, self.sequence, self.ciphertext, self.version
        )

    @property
    def stream(self) -> tuple[bytes, int]:
        return (self.destination.value, int(self.payload_type))

    @property
    def wire_size(self) -> int:
        return FRAME_OVERHEAD + len(self.ciphertext)


@dataclass(frozen=True)
class SigningKeypair:
    """Fleet backend signing key.  Terminals only ever see ``public``."""

    private: Ed25519PrivateKey = field(repr=False)
    public: Ed25519PublicKey

    @classmethod
    def generate(cls, rng=None) -> SigningKeypair:
        if rng is None:
            private = Ed25519PrivateKey.generate()
        else:
            private = Ed25519PrivateKey.from_private_bytes(rng.randbytes(32))
        return cls(private, private.public_key())

    @property
    def public_bytes(self) -> bytes:
        return self.public.public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )


class WireError(Exception):
    """Base class for packet format errors."""


class EncodingError(WireError):
    pass


class Rejection(WireError):
    """A received byte string was not accepted."""

    reason = "rejected"


class BadMagic(Rejection):
    reason = "bad_magic"


class BadVersion(Rejection):
    reason = "bad_version"


class BadLength(Rejection):
    reason = "bad_length"


class BadSignature(Rejection):
    reason = "bad_signature"


class ReplayedSequence(Rejection):
    reason = "replayed_sequence"


def sign_packet(fields: PacketFields, private_key: Ed25519PrivateKey) -> SignedPacket:
    if not 0 <= fields.sequence < 1 << 64:
        raise EncodingError("sequence out of u64 range")
    signature = private_key.sign(fields.signed_bytes())
    return SignedPacket(
        payload_type=fields.payload_type,
        destination=fields.destination,
        sequence=fields.sequence,
        ciphertext=fields.ciphertext,
        signature=signature,
        version=fields.version,
    )


def encode_packet(packet: SignedPacket, max_ciphertext: int = MAX_CIPHERTEXT) -> bytes:
    if len(packet.ciphertext) > max_ciphertext:
        raise EncodingError(
            f"ciphertext of {len(packet.ciphertext)} bytes exceeds limit {max_ciphertext}"
        )
    if len(packet.signature) != SIGNATURE_SIZE:
        raise EncodingError("signature must be 64 bytes")
    if packet.magic != MAGIC:
        raise EncodingError("bad magic")
    return packet.fields.signed_bytes() + packet.signature


def verify_packet(packet: SignedPacket, public_key: Ed25519PublicKey) -> bool:
    try:
        public_key.verify(packet.signature, packet.fields.signed_bytes())
    except InvalidSignature:
        return False
    return True


class PacketDecoder:
    """Per-receiver decoder holding the replay window.

    Not thread-safe; one instance belongs to one receiver.  The counters are
    instrumentation: ``payload_parses`` can only move after
    ``signature_accepts`` has.
    """

    def __init__(self, trusted_key: Ed25519PublicKey, max_ciphertext: int = MAX_CIPHERTEXT):
        self._key = trusted_key
        self._max_ciphertext = max_ciphertext
        self._last_sequence: dict[tuple[bytes, int], int] = {}
        self.signature_accepts = 0
        self.payload_parses = 0
        self.rejections: dict[str, int] = {}

    def _reject(self, exc: type[Rejection], message: str) -> Rejection:
        self.rejections[exc.reason] = self.rejections.get(exc.reason, 0) + 1
        return exc(message)

    def decode_and_verify(self, data: bytes) -> SignedPacket:
        data = bytes(data)
        n = len(data)
        if n < len(MAGIC):
            raise self._reject(BadLength, "shorter than magic")
        if data[:4] != MAGIC:
            raise self._reject(BadMagic, "magic mismatch")
        if n < FRAME_OVERHEAD:
            raise self._reject(BadLength, "shorter than fixed frame")
        if data[4] != VERSION:
            raise self._reject(BadVersion, f"unsupported version {data[4]}")
        (declared,) = struct.unpack_from(">I", data, 30)
        if declared > self._max_ciphertext or FRAME_OVERHEAD + declared != n:
            raise self._reject(BadLength, "ciphertext_len does not match frame size")
        body = data[:-SIGNATURE_SIZE]
        try:
            self._key.verify(data[-SIGNATURE_SIZE:], body)
        except InvalidSignature:
            raise self._reject(BadSignature, "signature verification failed") from None
        self.signature_accepts += 1

        _, version, ptype, dest, sequence, _ = HEADER.unpack_from(data, 0)
        stream = (dest, ptype)
        last = self._last_sequence.get(stream)
        if last is not None and sequence <= last:
            raise self._reject(ReplayedSequence, f"sequence {sequence} <= {last}")
        self._last_sequence[stream] = sequence

        self.payload_parses += 1
        try:
            ptype = PayloadType(ptype)
        except ValueError:
            pass  # surfaced by the consumer as an unknown payload type
        return SignedPacket(
            payload_type=ptype,
            destination=DeviceId(dest),
            sequence=sequence,
            ciphertext=bytes(data[HEADER_SIZE:-SIGNATURE_SIZE]),
            signature=bytes(data[-SIGNATURE_SIZE:]),
            version=version,
        )


# Payload bodies carried in the ``ciphertext`` field of non-session packets.
# Revocations and commands are signed plaintext; they carry no secrets.

FIRMWARE_HEADER = struct.Struct(">BIII")
COMPONENT_FIRMWARE = 0
COMPONENT_MODEL = 1


@dataclass(frozen=True)
class FirmwareChunk:
    component: int
    version: int
    index: int
    count: int
    data: bytes

    def to_bytes(self) -> bytes:
        return FIRMWARE_HEADER.pack(self.component, self.version, self.index, self.count) + self.data

    @classmethod
    def from_bytes(cls, body: bytes) -> FirmwareChunk:
        if len(body) < FIRMWARE_HEADER.size:
            raise ValueError("firmware chunk too short")
        component, version, index, count = FIRMWARE_HEADER.unpack_from(body, 0)
        if count == 0 or index >= count:
            raise ValueError("firmware chunk index out of range")
        return cls(component, version, index, count, body[FIRMWARE_HEADER.size:])


COMMAND = struct.Struct(">Q")


def encode_revocation(device: DeviceId) -> bytes:
    return device.value


def decode_revocation(body: bytes) -> DeviceId:
    return DeviceId(bytes(body[:DEVICE_ID_SIZE]))


def encode_command(command_id: int) -> bytes:
    return COMMAND.pack(command_id)


def decode_command(body: bytes) -> int:
    return COMMAND.unpack_from(body, 0)[0]
