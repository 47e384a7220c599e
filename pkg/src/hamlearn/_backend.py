"""Kernel backend selection: numba-jitted or pure numpy.

Every hot kernel in this package is written once, in a numba-compatible
numpy subset, and compiled into two callables: the plain Python/numpy
function and an ``@njit`` twin.  Which one runs is controlled by the
``HAMLEARN_NUMBA`` environment variable ("1" force jit, "0" force pure,
"auto" jit when numba imports cleanly) or at runtime via `set_backend`.
"""

from __future__ import annotations

import os

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    njit = None
    HAS_NUMBA = False

_VALID = ("auto", "numba", "numpy")


def _from_env() -> str:
    raw = os.environ.get("HAMLEARN_NUMBA", "auto").strip().lower()
    if raw in ("1", "true", "numba"):
        return "numba"
    if raw in ("0", "false", "numpy"):
        return "numpy"
    return "auto"


_mode = _from_env()


def set_backend(mode: str) -> None:
    """Select the kernel backend: "numba", "numpy", or "auto"."""
    if mode not in _VALID:
        raise ValueError(f"backend must be one of {_VALID}, got {mode!r}")
    global _mode
    _mode = mode


def get_backend() -> str:
    """Resolved backend name that kernels will actually use."""
    if _mode == "numba" or (_mode == "auto" and HAS_NUMBA):
        return "numba" if HAS_NUMBA else "numpy"
    return "numpy"


class DualKernel:
    """A function with a pure-numpy body and a lazily jitted twin.

    Calling the kernel dispatches on `get_backend()`; the jitted twin is
    compiled on first use so that pure-numpy runs never pay compile time.
    """

    def __init__(self, pyfunc):
        self._py = pyfunc
        self._nb = None
        self.__name__ = pyfunc.__name__
        self.__doc__ = pyfunc.__doc__

    def __call__(self, *args):
        if get_backend() == "numba":
            if self._nb is None:
                self._nb = njit(cache=True)(self._py)
            return self._nb(*args)
        return self._py(*args)

    @property
    def py_func(self):
        return self._py


def dual(pyfunc) -> DualKernel:
    """Decorator wrapping `pyfunc` as a `DualKernel`."""
    return DualKernel(pyfunc)
