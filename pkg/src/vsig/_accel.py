"""Optional numba acceleration.

Hot loops are compiled with ``numba.njit`` when numba is importable and the
environment variable ``VSIG_NO_NUMBA`` is unset (or ``0``). Callers check
:data:`HAVE_NUMBA` and fall back to vectorized numpy code otherwise.
"""

from __future__ import annotations

import os

_disabled = os.environ.get("VSIG_NO_NUMBA", "").strip().lower() not in ("", "0", "false", "no")

try:
    if _disabled:
        raise ImportError("disabled by VSIG_NO_NUMBA")
    import numba

    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise return the function unchanged."""
    if HAVE_NUMBA:
        return numba.njit(*args, cache=True, **kwargs)
    if args and callable(args[0]):
        return args[0]
    return lambda f: f


def deterministic() -> bool:
    """True when ``VSIG_DETERMINISTIC=1`` asks for a fixed reduction order."""
    return os.environ.get("VSIG_DETERMINISTIC", "").strip() in ("1", "true", "yes")
