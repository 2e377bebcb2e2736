"""Hot numeric loops.

Each kernel has a numba implementation (``numba_impl``) and a pure-numpy
implementation (``numpy_impl``) with the same signature.  The numba path is
used unless numba is missing or ``SVIPLUS_DISABLE_NUMBA`` is set to a truthy
value before import.  Both paths reduce in a fixed order, so results are
reproducible for a given backend regardless of thread count.
"""
import os

from . import numpy_impl

_FLAG = os.environ.get("SVIPLUS_DISABLE_NUMBA", "").strip().lower()

try:
    if _FLAG in ("1", "true", "yes", "on"):
        raise ImportError("disabled by SVIPLUS_DISABLE_NUMBA")
    from . import numba_impl
except ImportError:
    numba_impl = None

BACKEND = "numba" if numba_impl is not None else "numpy"
_impl = numba_impl if numba_impl is not None else numpy_impl

weighted_sum = _impl.weighted_sum
weighted_scatter = _impl.weighted_scatter
lda_estep = _impl.lda_estep
energy_terms = _impl.energy_terms
digamma = _impl.digamma

__all__ = [
    "BACKEND",
    "weighted_sum",
    "weighted_scatter",
    "lda_estep",
    "energy_terms",
    "digamma",
    "numpy_impl",
    "numba_impl",
]
