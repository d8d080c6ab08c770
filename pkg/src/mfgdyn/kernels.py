"""Tape-evaluator backend selection.

The compiled extension is preferred when importable; set MFGDYN_BACKEND to
``python`` or ``cython`` to force one (``cython`` raises if the extension
is missing).  ``backends()`` exposes every importable backend so tests and
benchmarks can compare them in-process.
"""

import os

from . import _kernel_py

_BACKENDS = {"python": _kernel_py}
try:
    from . import _kernel as _kernel_c

    _BACKENDS["cython"] = _kernel_c
except ImportError:
    _kernel_c = None

_requested = os.environ.get("MFGDYN_BACKEND", "").strip().lower()
if _requested:
    if _requested not in _BACKENDS:
        raise ImportError(
            f"MFGDYN_BACKEND={_requested!r} is not available; "
            f"built backends: {sorted(_BACKENDS)}"
        )
    _active = _BACKENDS[_requested]
else:
    _active = _BACKENDS.get("cython", _kernel_py)

BACKEND_NAME = _active.NAME


def active_backend():
    return _active


def backends():
    """name -> module for every importable evaluator backend."""
    return dict(_BACKENDS)
