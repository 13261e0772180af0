"""Backend selection for the hot kernels.

Set ``COORDTOK_NO_NUMBA=1`` to force the pure-numpy implementations.  Both
paths are kept numerically equivalent and are tested against each other.
"""
import os

_FALSY = {"", "0", "false", "no", "off"}


def _numba_requested() -> bool:
    return os.environ.get("COORDTOK_NO_NUMBA", "0").strip().lower() in _FALSY


try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

USE_NUMBA = _numba is not None and _numba_requested()


def njit(fn):
    """``numba.njit(cache=True)`` when numba is available, else identity."""
    if _numba is None:
        return fn
    return _numba.njit(cache=True)(fn)


def pick(nb_impl, np_impl):
    return nb_impl if USE_NUMBA else np_impl


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
