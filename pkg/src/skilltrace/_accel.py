"""Numba dispatch for hot numeric kernels.

Set SKILLTRACE_DISABLE_NUMBA=1 to force the pure-numpy fallback path
(also taken automatically when numba is not importable). The choice is
made once at import time; benchmarks/bench_kernels.py exercises both
paths explicitly.
"""

import os


def _numba_requested() -> bool:
    return os.environ.get("SKILLTRACE_DISABLE_NUMBA", "") != "1"


NUMBA_ENABLED = False
if _numba_requested():
    try:
        import numba  # noqa: F401

        NUMBA_ENABLED = True
    except ImportError:
        NUMBA_ENABLED = False


def njit_or_none(*args, **kwargs):
    """Return numba.njit(...) when enabled, else None (caller keeps numpy path)."""
    if not NUMBA_ENABLED:
        return None
    from numba import njit

    return njit(*args, **kwargs)
