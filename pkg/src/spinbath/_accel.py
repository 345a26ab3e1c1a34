"""Optional numba acceleration for the hot inner loops.

Each kernel is written in the numba-compatible subset of Python. The
:func:`kernel` decorator keeps a pure-numpy fallback (the plain function, or a
separately vectorized ``fallback=`` implementation with the same signature)
next to a lazily compiled ``numba.njit`` version, and dispatches at call
time: compiled when numba imports and ``SPINBATH_DISABLE_NUMBA`` is unset or
``0``.
"""
from __future__ import annotations

import functools
import os

DISABLE_ENV = "SPINBATH_DISABLE_NUMBA"

try:
    import numba

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover
    numba = None
    NUMBA_AVAILABLE = False


def numba_enabled() -> bool:
    if not NUMBA_AVAILABLE:
        return False
    return os.environ.get(DISABLE_ENV, "0").strip().lower() in ("", "0", "false", "no")


class Kernel:
    def __init__(self, func, fallback=None, **jit_options):
        self.source = func
        self.py = fallback if fallback is not None else func
        self._options = {"cache": True, **jit_options}
        self._jit = None
        functools.update_wrapper(self, func)

    @property
    def jit(self):
        if self._jit is None:
            if not NUMBA_AVAILABLE:
                raise RuntimeError("numba is not installed")
            self._jit = numba.njit(**self._options)(self.source)
        return self._jit

    def __call__(self, *args):
        return (self.jit if numba_enabled() else self.py)(*args)


def kernel(func=None, *, fallback=None, **jit_options):
    if func is None:
        return lambda f: Kernel(f, fallback, **jit_options)
    return Kernel(func, fallback, **jit_options)


def jitable(func):
    """Mark a helper as callable from compiled kernels (no-op without numba)."""
    if NUMBA_AVAILABLE:
        from numba.extending import register_jitable

        return register_jitable(func)
    return func
