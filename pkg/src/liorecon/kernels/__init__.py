"""Hot numeric kernels with two interchangeable backends.

The numba backend is used when numba imports and ``LIORECON_DISABLE_NUMBA``
is unset (or ``0``). Setting ``LIORECON_DISABLE_NUMBA=1`` selects the pure
numpy path. Both live side by side so tests and the benchmark can compare
them directly.
"""
import os

from . import _numpy as numpy_backend
from .tables import TRI_TABLE

try:
    from . import _numba as numba_backend
except ImportError:  # numba not installed
    numba_backend = None


def _numba_requested() -> bool:
    flag = os.environ.get("LIORECON_DISABLE_NUMBA", "0").strip().lower()
    return flag in ("", "0", "false", "no")


BACKEND_NAME = "numba" if (numba_backend is not None and _numba_requested()) else "numpy"
_impl = numba_backend if BACKEND_NAME == "numba" else numpy_backend

ray_triangle_hits = _impl.ray_triangle_hits
ring_curvature = _impl.ring_curvature
tsdf_ray_samples = _impl.tsdf_ray_samples


def mc_cube_triangles(values, origins):
    return _impl.mc_cube_triangles(values, origins, TRI_TABLE)


def backends():
    """Available ``{name: module}`` pairs, numpy first."""
    out = {"numpy": numpy_backend}
    if numba_backend is not None:
        out["numba"] = numba_backend
    return out


__all__ = [
    "BACKEND_NAME",
    "TRI_TABLE",
    "backends",
    "mc_cube_triangles",
    "ray_triangle_hits",
    "ring_curvature",
    "tsdf_ray_samples",
]
