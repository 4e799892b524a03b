from __future__ import annotations

import json
import pickle
import random

import pytest

import sovereign_edge.report  # noqa: F401  registers every persisted type
from sovereign_edge.records import dumps, persistable, reachable_types, registered_types, to_record
from sovereign_edge.session_crypto import (
    EncryptedSessionPayload,
    OpticalKeyFrame,
    SessionKeypair,
    VolatileKeyCell,
    generate_session,
)
from sovereign_edge.wire import DeviceId

KEY_TYPES = (SessionKeypair, OpticalKeyFrame, VolatileKeyCell)


def test_key_types_are_unreachable_from_persisted_types():
    reach = reachable_types()
    assert len(registered_types()) >= 10
    for t in KEY_TYPES + (EncryptedSessionPayload,):
        assert t not in reach


def test_key_objects_refuse_every_serializer():
    keys = generate_session(random.Random(0))
    frame = keys.key_frame(0)
    cell = VolatileKeyCell(keys.session_id, frame.k_priv, 0)
    for obj in (keys, frame, cell):
        with pytest.raises(TypeError):
            to_record(obj)
        with pytest.raises(TypeError):
            pickle.dumps(obj)
        assert frame.k_priv.hex() not in repr(obj)
    with pytest.raises(TypeError):
        to_record({"nested": [frame]})


def test_records_are_canonical_json():
    from sovereign_edge.fleet import AnomalyFlag

    flag = AnomalyFlag(DeviceId.from_index(3), 10, 5, 5, 4)
    text = dumps(flag)
    assert json.loads(text)["type"] == "AnomalyFlag"
    assert text == dumps(AnomalyFlag(DeviceId.from_index(3), 10, 5, 5, 4))
    assert " " not in text


def test_only_dataclasses_can_register():
    with pytest.raises(TypeError):
        persistable(type("Plain", (), {}))
