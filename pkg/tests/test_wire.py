from __future__ import annotations

import json
import random
import struct
from pathlib import Path

import pytest
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
from hypothesis import given
from hypothesis import strategies as st

from sovereign_edge.wire import (
    BROADCAST,
    FRAME_OVERHEAD,
    HEADER_SIZE,
    MAGIC,
    BadLength,
    BadMagic,
    BadSignature,
    BadVersion,
    DeviceId,
    EncodingError,
    FirmwareChunk,
    PacketDecoder,
    PacketFields,
    PayloadType,
    ReplayedSequence,
    SigningKeypair,
    decode_command,
    decode_revocation,
    encode_command,
    encode_packet,
    encode_revocation,
    sign_packet,
    verify_packet,
)

VECTORS = Path(__file__).resolve().parent.parent / "vectors" / "wire_vectors.json"

device_ids = st.binary(min_size=16, max_size=16).map(DeviceId)
payload_types = st.sampled_from(list(PayloadType))


def make(keypair, ptype=PayloadType.SESSION_PAYLOAD, dest=None, seq=1, body=b"abc"):
    dest = dest or DeviceId.from_index(7)
    return sign_packet(PacketFields(ptype, dest, seq, body), keypair.private)


def test_device_id_is_sixteen_bytes():
    with pytest.raises(ValueError):
        DeviceId(b"short")
    assert BROADCAST.is_broadcast
    assert not DeviceId.from_index(1).is_broadcast
    assert DeviceId.from_hex(DeviceId.from_index(3).hex()) == DeviceId.from_index(3)


def test_empty_ciphertext_is_header_only_frame(keypair):
    packet = make(keypair, body=b"")
    data = encode_packet(packet)
    assert len(data) == FRAME_OVERHEAD == HEADER_SIZE + 64
    assert PacketDecoder(keypair.public).decode_and_verify(data) == packet


def test_encoding_is_deterministic(keypair):
    packet = make(keypair, body=b"payload")
    assert encode_packet(packet) == encode_packet(packet)
    # Ed25519 signatures are deterministic too
    assert make(keypair, body=b"payload") == packet


def test_layout_matches_independent_construction(keypair):
    packet = make(keypair, PayloadType.REVOCATION, DeviceId.from_index(9), 42, b"\x01\x02")
    header = struct.pack(">4sBB16sQI", b"SOVB", 1, 3, DeviceId.from_index(9).value, 42, 2)
    body = header + b"\x01\x02"
    keypair.public.verify(packet.signature, body)
    assert encode_packet(packet) == body + packet.signature


def test_round_trip_corpus_of_random_packets(keypair):
    r = random.Random(99)
    decoder = PacketDecoder(keypair.public)
    for i in range(1000):
        fields = PacketFields(
            r.choice(list(PayloadType)),
            DeviceId(r.randbytes(16)),
            i + 1,  # increasing, so no stream ever replays
            r.randbytes(r.randrange(0, 300)),
        )
        packet = sign_packet(fields, keypair.private)
        assert decoder.decode_and_verify(encode_packet(packet)) == packet
    assert decoder.payload_parses == decoder.signature_accepts == 1000


@given(payload_types, device_ids, st.integers(0, 2**64 - 1), st.binary(max_size=512))
def test_round_trip_property(ptype, dest, seq, body):
    keypair = SigningKeypair.generate(random.Random(5))
    packet = sign_packet(PacketFields(ptype, dest, seq, body), keypair.private)
    assert PacketDecoder(keypair.public).decode_and_verify(encode_packet(packet)) == packet


def test_sign_verify_and_key_mismatch(keypair):
    packet = make(keypair)
    assert verify_packet(packet, keypair.public)
    other = SigningKeypair.generate(random.Random(77))
    assert not verify_packet(packet, other.public)
    with pytest.raises(BadSignature):
        PacketDecoder(other.public).decode_and_verify(encode_packet(packet))


def test_every_single_bit_flip_is_rejected(keypair):
    data = encode_packet(make(keypair, body=b"tiny"))
    for bit in range(len(data) * 8):
        mutated = bytearray(data)
        mutated[bit // 8] ^= 1 << (bit % 8)
        decoder = PacketDecoder(keypair.public)
        with pytest.raises((BadMagic, BadVersion, BadLength, BadSignature)):
            decoder.decode_and_verify(bytes(mutated))
        assert decoder.payload_parses == 0


def test_rejection_reasons_are_distinct(keypair):
    data = encode_packet(make(keypair, body=b"xyz"))
    decoder = PacketDecoder(keypair.public)
    cases = [
        (b"SOV", BadLength),
        (b"XXXX" + data[4:], BadMagic),
        (data[:4] + b"\x02" + data[5:], BadVersion),
        (data[:-1], BadLength),
        (data[:-1] + bytes([data[-1] ^ 1]), BadSignature),
    ]
    for blob, exc in cases:
        with pytest.raises(exc):
            decoder.decode_and_verify(blob)
    decoder.decode_and_verify(data)
    with pytest.raises(ReplayedSequence):
        decoder.decode_and_verify(data)
    assert set(decoder.rejections) == {
        "bad_length", "bad_magic", "bad_version", "bad_signature", "replayed_sequence"
    }


def test_replay_window_is_per_stream(keypair):
    decoder = PacketDecoder(keypair.public)
    a, b = DeviceId.from_index(1), DeviceId.from_index(2)
    decoder.decode_and_verify(encode_packet(make(keypair, dest=a, seq=5)))
    decoder.decode_and_verify(encode_packet(make(keypair, dest=b, seq=5)))
    decoder.decode_and_verify(encode_packet(make(keypair, PayloadType.REVOCATION, a, seq=1)))
    with pytest.raises(ReplayedSequence):
        decoder.decode_and_verify(encode_packet(make(keypair, dest=a, seq=4)))


def test_random_byte_strings_never_accepted(keypair):
    r = random.Random(2024)
    decoder = PacketDecoder(keypair.public)
    accepted = 0
    for _ in range(100_000):
        blob = r.randbytes(r.randrange(0, 200))
        if r.random() < 0.5:
            blob = MAGIC + b"\x01" + blob  # get past the cheapest checks
        try:
            decoder.decode_and_verify(blob)
            accepted += 1
        except Exception:
            pass
    assert accepted == 0
    assert decoder.payload_parses == 0


def test_oversize_ciphertext_is_an_encoding_error(keypair):
    packet = make(keypair, body=b"\x00" * 100)
    with pytest.raises(EncodingError):
        encode_packet(packet, max_ciphertext=99)


def test_unknown_payload_type_still_decodes_as_int(keypair):
    packet = sign_packet(PacketFields(9, DeviceId.from_index(1), 1, b""), keypair.private)
    got = PacketDecoder(keypair.public).decode_and_verify(encode_packet(packet))
    assert got.payload_type == 9 and not isinstance(got.payload_type, PayloadType)


def test_body_codecs():
    chunk = FirmwareChunk(0, 3, 1, 4, b"data")
    assert FirmwareChunk.from_bytes(chunk.to_bytes()) == chunk
    with pytest.raises(ValueError):
        FirmwareChunk.from_bytes(struct.pack(">BIII", 0, 3, 4, 4))
    assert decode_revocation(encode_revocation(DeviceId.from_index(8))) == DeviceId.from_index(8)
    assert decode_command(encode_command(2**40)) == 2**40


def test_frozen_vectors():
    doc = json.loads(VECTORS.read_text())
    key = Ed25519PrivateKey.from_private_bytes(bytes.fromhex(doc["private_key"]))
    public = key.public_key()
    for v in doc["vectors"]:
        fields = PacketFields(
            PayloadType(v["payload_type"]), DeviceId.from_hex(v["destination"]),
            v["sequence"], bytes.fromhex(v["ciphertext"]),
        )
        data = encode_packet(sign_packet(fields, key))
        assert data.hex() == v["encoded"]
        got = PacketDecoder(public).decode_and_verify(bytes.fromhex(v["encoded"]))
        assert got.fields == fields
