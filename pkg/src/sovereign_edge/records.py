"""The single serialization path for anything persisted or sent on a network.

Reports, trace logs, telemetry exports and companion uplinks all go through
:func:`to_record`, which only accepts types registered with
:func:`persistable`.  Key-bearing types are never registered, so they have no
way onto disk or onto a network link.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import typing
from typing import Any

_REGISTRY: dict[type, str] = {}
_SCALARS: dict[type, typing.Callable[[Any], Any]] = {}


def persistable(cls):
    """Class decorator: allow instances of ``cls`` into persisted records."""
    if not dataclasses.is_dataclass(cls):
        raise TypeError(f"{cls.__name__} must be a dataclass to be persistable")
    _REGISTRY[cls] = cls.__name__
    return cls


def persistable_scalar(cls: type, encode: typing.Callable[[Any], Any]) -> None:
    """Allow ``cls`` into records as the plain value ``encode(obj)``."""
    _SCALARS[cls] = encode


def registered_types() -> frozenset[type]:
    return frozenset(_REGISTRY)


def _hint_classes(hint) -> set[type]:
    found: set[type] = set()
    origin = typing.get_origin(hint)
    if origin is None:
        if isinstance(hint, type):
            found.add(hint)
        return found
    for arg in typing.get_args(hint):
        found |= _hint_classes(arg)
    if isinstance(origin, type):
        found.add(origin)
    return found


def reachable_types() -> frozenset[type]:
    """Every class reachable from a registered type through field annotations."""
    seen: set[type] = set()
    todo = list(_REGISTRY) + list(_SCALARS)
    while todo:
        cls = todo.pop()
        if cls in seen:
            continue
        seen.add(cls)
        if dataclasses.is_dataclass(cls):
            for hint in typing.get_type_hints(cls).values():
                todo.extend(_hint_classes(hint) - seen)
    return frozenset(seen)


def to_record(obj: Any) -> Any:
    """Convert to plain JSON-compatible data, refusing unregistered objects."""
    if obj is None or isinstance(obj, (bool, int, float, str)):
        if isinstance(obj, enum.Enum):
            return obj.name
        return obj
    if isinstance(obj, enum.Enum):
        return obj.name
    if isinstance(obj, bytes):
        return obj.hex()
    if isinstance(obj, (list, tuple)):
        return [to_record(x) for x in obj]
    if isinstance(obj, dict):
        return {str(k): to_record(v) for k, v in obj.items()}
    cls = type(obj)
    if cls in _REGISTRY:
        out = {"type": _REGISTRY[cls]}
        for f in dataclasses.fields(obj):
            out[f.name] = to_record(getattr(obj, f.name))
        return out
    if cls in _SCALARS:
        return _SCALARS[cls](obj)
    raise TypeError(f"{cls.__name__} is not persistable")


def dumps(obj: Any) -> str:
    """Canonical one-line JSON for a record."""
    return json.dumps(to_record(obj), sort_keys=True, separators=(",", ":"))
