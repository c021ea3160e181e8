"""Backend selection for the geometric kernels.

The compiled extension is preferred; setting ``DLFKIT_PURE=1`` or a missing
build falls back to the numpy implementation with identical results.
"""
import os

from dlfkit import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("DLFKIT_PURE") != "1":
    try:
        from dlfkit import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

knn_indices = _impl.knn_indices
assign_nearest = _impl.assign_nearest
inside_oriented = _impl.inside_oriented

__all__ = ["BACKEND", "knn_indices", "assign_nearest", "inside_oriented"]
