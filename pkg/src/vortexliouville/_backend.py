"""Backend selection for the hot kernels.

``VL_BACKEND=numpy`` forces the pure-numpy path; anything else (or unset)
uses numba when it can be imported.
"""

from __future__ import annotations

import os

# the system TBB is too old for numba; skip probing it
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

_requested = os.environ.get("VL_BACKEND", "numba").strip().lower()

try:
    if _requested == "numpy":
        raise ImportError("numpy backend requested")
    import numba as _nb

    USE_NUMBA = True
except ImportError:  # pragma: no cover - depends on environment
    _nb = None
    USE_NUMBA = False

BACKEND = "numba" if USE_NUMBA else "numpy"


def jit(func=None, **kwargs):
    """``numba.njit(cache=True)`` or a no-op, depending on the backend."""
    if not USE_NUMBA:
        if func is None:
            return lambda f: f
        return func
    opts = {"cache": True}
    opts.update(kwargs)
    if func is None:
        return _nb.njit(**opts)
    return _nb.njit(**opts)(func)


if USE_NUMBA:
    prange = _nb.prange
else:
    prange = range


def set_threads(n: int | None) -> None:
    if USE_NUMBA and n:
        _nb.set_num_threads(max(1, min(int(n), _nb.config.NUMBA_NUM_THREADS)))
