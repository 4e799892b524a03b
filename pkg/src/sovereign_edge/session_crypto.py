"""Per-session hybrid encryption and the volatile private-key lifecycle.

Payloads are sealed to an ephemeral X25519 session key: a one-time sender key
is agreed with ``k_pub``, HKDF-SHA256 expands the shared secret into an
AES-256-GCM key and an HMAC-SHA256 key, and the MAC covers the canonical
body ``session_id || ephemeral_pub || nonce || ciphertext``.

The matching private key reaches a terminal only as an :class:`OpticalKeyFrame`
and lives in a :class:`VolatileKeyCell` until :func:`decrypt_payload` zeroizes
it.  Neither type can be pickled or passed to :mod:`sovereign_edge.records`.
"""

from __future__ import annotations

import hashlib
import hmac
import os
import struct
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .timebase import SECOND

CURVE = "X25519"
# Pollard rho on a ~2^256 group costs ~2^128; 256 would be an overclaim.
CLASSICAL_SECURITY_BITS = 128
SESSION_ID_SIZE = 16
PUBLIC_KEY_SIZE = 32
PRIVATE_KEY_SIZE = 32
NONCE_SIZE = 12
MAC_SIZE = 32
DEFAULT_TTL = 60 * SECOND

_KDF_INFO = b"sovereign-edge session v1"
_RAW = serialization.Encoding.Raw
_RAW_PUB = serialization.PublicFormat.Raw


class SessionCryptoError(Exception):
    pass


class AlreadyPurged(SessionCryptoError):
    pass


class AuthFailure(SessionCryptoError):
    pass


class Expired(SessionCryptoError):
    pass


class SessionMismatch(SessionCryptoError):
    pass


def _randbytes(rng, n: int) -> bytes:
    return os.urandom(n) if rng is None else rng.randbytes(n)


def _pub_bytes(key: X25519PublicKey) -> bytes:
    return key.public_bytes(_RAW, _RAW_PUB)


class _Unserializable:
    __slots__ = ()

    def __reduce_ex__(self, protocol):
        raise TypeError(f"{type(self).__name__} must never be serialized")

    def __getstate__(self):
        raise TypeError(f"{type(self).__name__} must never be serialized")


class SessionKeypair(_Unserializable):
    """Backend-side ephemeral keypair for one session."""

    __slots__ = ("session_id", "k_pub", "_k_priv")

    def __init__(self, session_id: bytes, k_pub: X25519PublicKey, k_priv: bytes):
        self.session_id = session_id
        self.k_pub = k_pub
        self._k_priv = bytearray(k_priv)

    @property
    def public_bytes(self) -> bytes:
        return _pub_bytes(self.k_pub)

    def key_frame(self, issued_at: int, ttl: int = DEFAULT_TTL) -> OpticalKeyFrame:
        if not any(self._k_priv):
            raise AlreadyPurged("backend copy of the session key was discarded")
        return OpticalKeyFrame(self.session_id, bytes(self._k_priv), issued_at, ttl)

    def discard(self) -> None:
        for i in range(len(self._k_priv)):
            self._k_priv[i] = 0

    def __repr__(self) -> str:
        return f"SessionKeypair(session_id={self.session_id.hex()})"


class OpticalKeyFrame(_Unserializable):
    """Private key as presented on the companion screen; valid for ``ttl`` ticks."""

    __slots__ = ("session_id", "k_priv", "issued_at", "ttl")

    def __init__(self, session_id: bytes, k_priv: bytes, issued_at: int, ttl: int = DEFAULT_TTL):
        self.session_id = session_id
        self.k_priv = k_priv
        self.issued_at = issued_at
        self.ttl = ttl

    def valid_at(self, now: int) -> bool:
        return 0 <= now - self.issued_at <= self.ttl

    def __repr__(self) -> str:
        return (
            f"OpticalKeyFrame(session_id={self.session_id.hex()}, "
            f"issued_at={self.issued_at}, ttl={self.ttl})"
        )


class VolatileKeyCell(_Unserializable):
    """RAM-only holder of a session private key, alive from receipt to purge."""

    __slots__ = ("session_id", "_key", "created_at", "purged_at")

    def __init__(self, session_id: bytes, key: bytes, created_at: int):
        self.session_id = session_id
        self._key = bytearray(key)
        self.created_at = created_at
        self.purged_at: int | None = None

    @property
    def purge_flag(self) -> bool:
        return self.purged_at is not None

    @property
    def key_bytes(self) -> bytearray:
        return self._key

    @property
    def lifetime(self) -> tuple[int, int | None]:
        return (self.created_at, self.purged_at)

    def purge(self, now: int) -> None:
        for i in range(len(self._key)):
            self._key[i] = 0
        if self.purged_at is None:
            self.purged_at = now

    def __repr__(self) -> str:
        return (
            f"VolatileKeyCell(session_id={self.session_id.hex()}, "
            f"created_at={self.created_at}, purged_at={self.purged_at})"
        )


@dataclass(frozen=True)
class EncryptedSessionPayload:
    session_id: bytes
    kem_ephemeral_pub: bytes
    nonce: bytes
    ciphertext: bytes  # AES-GCM output, tag appended
    mac: bytes

    _LAYOUT = struct.Struct(f">{SESSION_ID_SIZE}s{PUBLIC_KEY_SIZE}s{NONCE_SIZE}s{MAC_SIZE}s")

    def canonical_body(self) -> bytes:
        return self.session_id + self.kem_ephemeral_pub + self.nonce + self.ciphertext

    def to_bytes(self) -> bytes:
        return (
            self._LAYOUT.pack(self.session_id, self.kem_ephemeral_pub, self.nonce, self.mac)
            + self.ciphertext
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> EncryptedSessionPayload:
        if len(data) < cls._LAYOUT.size + 16:
            raise ValueError("encrypted session payload too short")
        sid, eph, nonce, mac = cls._LAYOUT.unpack_from(data, 0)
        return cls(sid, eph, nonce, bytes(data[cls._LAYOUT.size:]), mac)


def generate_session(rng=None) -> SessionKeypair:
    """Fresh X25519 keypair and random 16-byte session id.

    ``rng`` is any object with ``randbytes`` (e.g. a seeded ``random.Random``
    for reproducible simulation); ``None`` uses the OS entropy source.
    """
    session_id = _randbytes(rng, SESSION_ID_SIZE)
    raw = _randbytes(rng, PRIVATE_KEY_SIZE)
    private = X25519PrivateKey.from_private_bytes(raw)
    return SessionKeypair(session_id, private.public_key(), raw)


def _derive(shared: bytes, eph_pub: bytes, recipient_pub: bytes, session_id: bytes):
    okm = HKDF(
        algorithm=hashes.SHA256(),
        length=64,
        salt=eph_pub + recipient_pub,
        info=_KDF_INFO + session_id,
    ).derive(shared)
    return okm[:32], okm[32:]


def encrypt_payload(
    plaintext: bytes, k_pub: X25519PublicKey, session_id: bytes, rng=None
) -> EncryptedSessionPayload:
    if not plaintext:
        raise ValueError("plaintext must be non-empty")
    eph = X25519PrivateKey.from_private_bytes(_randbytes(rng, PRIVATE_KEY_SIZE))
    eph_pub = _pub_bytes(eph.public_key())
    enc_key, mac_key = _derive(eph.exchange(k_pub), eph_pub, _pub_bytes(k_pub), session_id)
    nonce = _randbytes(rng, NONCE_SIZE)
    ct = AESGCM(enc_key).encrypt(nonce, plaintext, session_id)
    body = session_id + eph_pub + nonce + ct
    mac = hmac.new(mac_key, body, hashlib.sha256).digest()
    return EncryptedSessionPayload(session_id, eph_pub, nonce, ct, mac)


def accept_optical_frame(
    frame: OpticalKeyFrame, now: int, expected_session: bytes | None = None
) -> VolatileKeyCell:
    """Admit a key frame iff it is within its TTL (inclusive)."""
    if not isinstance(frame, OpticalKeyFrame):
        raise TypeError("only optical key frames carry session keys")
    offset = now - frame.issued_at
    if offset < 0 or offset > frame.ttl:
        raise Expired(f"frame age {offset} outside [0, {frame.ttl}]")
    if expected_session is not None and expected_session != frame.session_id:
        raise SessionMismatch("key frame belongs to another session")
    return VolatileKeyCell(frame.session_id, frame.k_priv, created_at=now)


def decrypt_payload(payload: EncryptedSessionPayload, cell: VolatileKeyCell, now: int) -> bytes:
    """Decrypt and purge ``cell`` before returning, on success or failure."""
    if cell.purge_flag:
        raise AlreadyPurged("key cell already purged")
    try:
        if payload.session_id != cell.session_id:
            raise SessionMismatch("payload and key belong to different sessions")
        private = X25519PrivateKey.from_private_bytes(bytes(cell.key_bytes))
        recipient_pub = _pub_bytes(private.public_key())
        try:
            shared = private.exchange(X25519PublicKey.from_public_bytes(payload.kem_ephemeral_pub))
        except ValueError:
            raise AuthFailure("degenerate ephemeral key") from None
        enc_key, mac_key = _derive(shared, payload.kem_ephemeral_pub, recipient_pub, payload.session_id)
        expected = hmac.new(mac_key, payload.canonical_body(), hashlib.sha256).digest()
        if not hmac.compare_digest(expected, payload.mac):
            raise AuthFailure("HMAC mismatch")
        try:
            return AESGCM(enc_key).decrypt(payload.nonce, payload.ciphertext, payload.session_id)
        except InvalidTag:
            raise AuthFailure("GCM tag mismatch") from None
    finally:
        cell.purge(now)
