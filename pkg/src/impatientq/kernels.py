"""Kernel selection: compiled extension when importable, numpy/Python otherwise.

Set ``IMPATIENTQ_PURE=1`` to force the fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
matrix_series = _pykernels.matrix_series
matrix_series_dd = _pykernels.matrix_series_dd
fcfs_waits = _pykernels.fcfs_waits

if os.environ.get("IMPATIENTQ_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels
    except ImportError:  # pragma: no cover - depends on the build
        pass
    else:
        BACKEND = "cython"
        matrix_series = _kernels.matrix_series
        matrix_series_dd = _kernels.matrix_series_dd
        fcfs_waits = _kernels.fcfs_waits

__all__ = ["BACKEND", "matrix_series", "matrix_series_dd", "fcfs_waits"]
