"""Backend selection for the hot kernels.

The compiled extension ``dcil._kernels`` is used when it imports cleanly;
otherwise the numpy fallback in ``dcil._kernels_py`` is used.  Setting
``DCIL_PURE_PYTHON=1`` forces the fallback.
"""
from __future__ import annotations

import os

from dcil import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("DCIL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from dcil import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

wrap_angle = _impl.wrap_angle
segment_hits = _impl.segment_hits
point_blocked = _impl.point_blocked
dubins_step = _impl.dubins_step
propagate = _impl.propagate
nearest_index = _impl.nearest_index
dense_forward = _impl.dense_forward
dense_backward = _impl.dense_backward
adam_update = _impl.adam_update
polyak = _impl.polyak

__all__ = [
    "BACKEND",
    "wrap_angle",
    "segment_hits",
    "point_blocked",
    "dubins_step",
    "propagate",
    "nearest_index",
    "dense_forward",
    "dense_backward",
    "adam_update",
    "polyak",
]
