"""Optional numba acceleration for the hot numeric kernels.

The solver's inner loop (dense active-set QP iterations) is the only part of
the package where interpreter overhead matters.  By default those kernels are
compiled with numba; setting the environment variable ``GRIDMPC_DISABLE_NUMBA``
to a non-empty value (or running without numba installed) selects a pure-numpy
fallback with identical semantics.  ``benchmarks/qp_bench.py`` compares the
two paths.
"""

import os

_DISABLED = bool(os.environ.get("GRIDMPC_DISABLE_NUMBA", ""))

if not _DISABLED:
    try:
        from numba import njit as _njit

        HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        HAVE_NUMBA = False
else:
    HAVE_NUMBA = False

USING_NUMBA = HAVE_NUMBA and not _DISABLED


def maybe_jit(func):
    """Compile ``func`` with numba when enabled, else return it unchanged."""
    if USING_NUMBA:
        return _njit(cache=True)(func)
    return func
