"""Optional numba acceleration for the numeric kernels.

Kernels are written in a numba-compatible subset of numpy.  When numba is
missing, or ``SYNCON_DISABLE_JIT`` is set to a truthy value before import,
they run as ordinary Python functions.
"""

from __future__ import annotations

import os

_FLAG = os.environ.get("SYNCON_DISABLE_JIT", "").strip().lower()
_DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

JIT_ENABLED = numba is not None and not _DISABLED


def njit(func):
    if JIT_ENABLED:
        return numba.njit(cache=True, nogil=True)(func)
    return func


def python_impl(func):
    """Return the uncompiled function behind a kernel."""
    return getattr(func, "py_func", func)
