"""Hot loops of the threat-graph analyzer.

The compiled ``_ckernels`` extension is used when importable; otherwise the
pure-Python ``_pykernels`` module is loaded.  Both produce identical output
for identical input, including PRNG streams.  Set
``SOVEREIGN_EDGE_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _pykernels as python_backend

compiled_backend = None
if os.environ.get("SOVEREIGN_EDGE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

backend = compiled_backend if compiled_backend is not None else python_backend
BACKEND_NAME = "compiled" if compiled_backend is not None else "python"

reach_closure = backend.reach_closure
worm_spread = backend.worm_spread
simple_paths = backend.simple_paths
path_census = backend.path_census
splitmix64 = backend.splitmix64

__all__ = [
    "BACKEND_NAME",
    "backend",
    "compiled_backend",
    "path_census",
    "python_backend",
    "reach_closure",
    "simple_paths",
    "splitmix64",
    "worm_spread",
]
