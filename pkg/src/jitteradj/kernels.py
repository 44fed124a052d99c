"""Kernel dispatch: compiled Cython kernels when built, numpy otherwise.

Set ``JITTERADJ_PURE_PYTHON=1`` before import to force the numpy versions.
``BACKEND`` names the implementation in use.
"""

import os

import numpy as np

from . import _kernels_py as py

if os.environ.get("JITTERADJ_PURE_PYTHON", "") not in ("", "0"):
    _impl = py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = py

BACKEND = "cython" if _impl is not py else "numpy"


def points_in_ring(pts, ring):
    return _impl.points_in_ring(np.ascontiguousarray(pts, dtype=float), np.ascontiguousarray(ring, dtype=float))


def points_on_ring(pts, ring):
    return _impl.points_on_ring(np.ascontiguousarray(pts, dtype=float), np.ascontiguousarray(ring, dtype=float))


def mixture_terms(eta, log_alpha, offsets, y, n):
    return _impl.mixture_terms(
        np.ascontiguousarray(eta, dtype=float),
        np.ascontiguousarray(log_alpha, dtype=float),
        np.ascontiguousarray(offsets, dtype=np.int64),
        np.ascontiguousarray(y, dtype=float),
        np.ascontiguousarray(n, dtype=float),
    )


def locate_points(pts, nodes, tris, x0, y0, cell, nx, ny, cell_start, cell_tris):
    return _impl.locate_points(
        np.ascontiguousarray(pts, dtype=float),
        np.ascontiguousarray(nodes, dtype=float),
        np.ascontiguousarray(tris, dtype=np.int64),
        float(x0), float(y0), float(cell), int(nx), int(ny),
        np.ascontiguousarray(cell_start, dtype=np.int64),
        np.ascontiguousarray(cell_tris, dtype=np.int64),
    )
