"""Gridding kernels with a compiled fast path and a pure-Python fallback.

The compiled Cython extension is preferred when importable; set
``FNP_GRIDDING=numpy`` to force the fallback (used by the backend-equivalence
tests and the benchmark).  ``BACKEND`` records which one is active.
"""
from __future__ import annotations

import os

from .gridding_numpy import CUTOFF
from . import gridding_numpy

_forced = os.environ.get("FNP_GRIDDING", "").lower()

if _forced not in ("", "numpy", "cython"):
    raise ImportError(f"FNP_GRIDDING must be 'numpy' or 'cython', got {_forced!r}")

if _forced == "numpy":
    _impl = gridding_numpy
    BACKEND = "numpy"
else:
    try:
        from . import _gridding as _impl  # type: ignore[attr-defined]
        BACKEND = "cython"
    except ImportError:
        if _forced == "cython":
            raise
        _impl = gridding_numpy
        BACKEND = "numpy"

gridding_forward = _impl.gridding_forward
gridding_backward = _impl.gridding_backward

__all__ = ["BACKEND", "CUTOFF", "gridding_forward", "gridding_backward", "gridding_numpy"]
