"""Numba on/off switch.

Set ``MGNAV_DISABLE_NUMBA=1`` before import to force the pure-numpy kernels.
"""

from __future__ import annotations

import os

_FLAG = os.environ.get("MGNAV_DISABLE_NUMBA", "").strip().lower()

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

NUMBA_ENABLED = _numba is not None and _FLAG not in ("1", "true", "yes", "on")


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise a no-op decorator.

    The undecorated function is kept on the result as ``py_func`` either way so
    tests can run the interpreted loop directly.
    """
    if _numba is None:
        def wrap(fn):
            fn.py_func = fn
            return fn
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return wrap(args[0])
        return wrap
    return _numba.njit(*args, **kwargs)
