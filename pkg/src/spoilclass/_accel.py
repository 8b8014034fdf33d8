"""Backend switch for the compiled kernels.

Set ``SPOILCLASS_BACKEND=numpy`` to force the pure-numpy path. The default is
``numba`` when numba imports cleanly, otherwise ``numpy``.
"""
from __future__ import annotations

import contextlib
import logging
import os

log = logging.getLogger(__name__)

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

_VALID = ("numba", "numpy")


def _initial_backend() -> str:
    requested = os.environ.get("SPOILCLASS_BACKEND", "numba").strip().lower()
    if requested not in _VALID:
        log.warning("unknown SPOILCLASS_BACKEND=%r, using numpy", requested)
        return "numpy"
    if requested == "numba" and not HAVE_NUMBA:
        return "numpy"
    return requested


_backend = _initial_backend()


def njit(*args, **kwargs):
    """``numba.njit`` with caching on; identity decorator if numba is missing."""
    kwargs.setdefault("cache", True)
    if not HAVE_NUMBA:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    return numba.njit(*args, **kwargs)


def get_backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    global _backend
    if name not in _VALID:
        raise ValueError(f"backend must be one of {_VALID}, got {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not importable")
    _backend = name


@contextlib.contextmanager
def use_backend(name: str):
    previous = _backend
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)
