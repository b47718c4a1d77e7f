"""Nearest-neighbour kernels used by the oversampling baselines.

The compiled extension is used when it was built; otherwise (or when
``TPGAN_PURE_PYTHON=1``) the NumPy implementation is selected. ``BACKEND``
names the active one.
"""
import os

from . import _knn_py

if os.environ.get("TPGAN_PURE_PYTHON", "") not in ("", "0"):
    _impl = _knn_py
else:
    try:
        from . import _knn_cy as _impl
    except ImportError:
        _impl = _knn_py

BACKEND = "cython" if _impl is not _knn_py else "python"

kneighbors = _impl.kneighbors
interpolate = _impl.interpolate

__all__ = ["BACKEND", "kneighbors", "interpolate"]
