"""Backend selection for the hot numeric kernels.

Two interchangeable implementations exist for every kernel in kernels.py:
a numba @njit version and a pure-numpy fallback. The active backend is
chosen once at import time from the environment:

    CBFSYNTH_BACKEND=numba   force numba (error if unavailable)
    CBFSYNTH_BACKEND=numpy   force the pure-numpy path
    unset                    numba if importable, else numpy

Individual calls may still override the backend explicitly (the test
suite and the benchmark exercise both paths in one process).
"""

import os

try:
    from numba import njit  # noqa: F401

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a hard dep, but stay graceful
    NUMBA_AVAILABLE = False

_ENV_VAR = "CBFSYNTH_BACKEND"
_VALID = ("numba", "numpy")


def _resolve_default() -> str:
    choice = os.environ.get(_ENV_VAR, "").strip().lower()
    if choice == "":
        return "numba" if NUMBA_AVAILABLE else "numpy"
    if choice not in _VALID:
        raise RuntimeError(
            f"{_ENV_VAR}={choice!r} is not one of {_VALID}"
        )
    if choice == "numba" and not NUMBA_AVAILABLE:
        raise RuntimeError(f"{_ENV_VAR}=numba but numba is not importable")
    return choice


_DEFAULT_BACKEND = _resolve_default()


def active_backend() -> str:
    """The backend used when a call does not name one explicitly."""
    return _DEFAULT_BACKEND


def resolve_backend(backend=None) -> str:
    """Validate an explicit backend choice, or fall back to the default."""
    if backend is None:
        return _DEFAULT_BACKEND
    if backend not in _VALID:
        raise ValueError(f"backend must be one of {_VALID}, got {backend!r}")
    if backend == "numba" and not NUMBA_AVAILABLE:
        raise RuntimeError("numba backend requested but numba is not importable")
    return backend
