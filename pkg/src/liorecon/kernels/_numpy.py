"""Vectorised numpy versions of the hot kernels.

Every function here has a loop-based twin in ``_numba`` with the same
signature and output ordering.
"""
import numpy as np

from .tables import CORNER_OFFSETS, CORNER_STEP, EDGE_AXIS, EDGE_LO_CORNER

_RAY_CHUNK = 4096
_EPS = 1e-12


def ray_triangle_hits(origins, dirs, tris, max_range):
    """Nearest hit distance per ray (Moller-Trumbore); ``inf`` on miss."""
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    tris = np.ascontiguousarray(tris, dtype=np.float64)
    n = origins.shape[0]
    out = np.full(n, np.inf)
    if n == 0 or tris.shape[0] == 0:
        return out
    v0 = tris[:, 0]
    e1 = tris[:, 1] - v0
    e2 = tris[:, 2] - v0
    for s in range(0, n, _RAY_CHUNK):
        o = origins[s:s + _RAY_CHUNK, None, :]
        d = dirs[s:s + _RAY_CHUNK, None, :]
        p = np.cross(d, e2[None])
        det = np.einsum("ijk,jk->ij", p, e1)
        ok = np.abs(det) > _EPS
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tv = o - v0[None]
        u = np.einsum("ijk,ijk->ij", tv, p) * inv
        qv = np.cross(tv, e1[None])
        v = np.einsum("ijk,ijk->ij", d, qv) * inv
        t = np.einsum("jk,ijk->ij", e2, qv) * inv
        hit = ok & (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t > _EPS) & (t <= max_range)
        t = np.where(hit, t, np.inf)
        out[s:s + _RAY_CHUNK] = t.min(axis=1)
    return out


def ring_curvature(points, window):
    """Smoothness ``|sum_j (x_i - x_j)| / (2 w |x_i|)`` over +-window neighbours."""
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    curv = np.zeros(n)
    valid = np.zeros(n, dtype=np.bool_)
    if n < 2 * window + 1:
        return curv, valid
    csum = np.vstack([np.zeros((1, 3)), np.cumsum(pts, axis=0)])
    idx = np.arange(window, n - window)
    wsum = csum[idx + window + 1] - csum[idx - window]
    diff = (2 * window + 1) * pts[idx] - wsum
    rng = np.linalg.norm(pts[idx], axis=1)
    # neighbourhood extent guards against coincident points
    span = np.zeros(idx.shape[0])
    for k in range(-window, window + 1):
        span = np.maximum(span, np.abs(pts[idx + k] - pts[idx]).max(axis=1))
    ok = (rng > _EPS) & (span > _EPS)
    curv[idx] = np.where(ok, np.linalg.norm(diff, axis=1) / (2 * window * np.where(ok, rng, 1.0)), 0.0)
    valid[idx] = ok
    return curv, valid


def tsdf_ray_samples(points, origin, voxel_size, truncation, step):
    """Voxels crossed by each ray within ``+-truncation`` of its endpoint.

    Returns integer voxel indices (voxel ``i`` is centred at ``i * voxel_size``),
    projective signed distances clamped to ``+-truncation`` and the source
    ray index of each sample. Rays are emitted in input order and, within a
    ray, from the sensor outwards.
    """
    pts = np.asarray(points, dtype=np.float64)
    origin = np.asarray(origin, dtype=np.float64)
    nsteps = int(np.ceil(2.0 * truncation / step)) + 1
    if pts.shape[0] == 0:
        return np.zeros((0, 3), np.int64), np.zeros(0), np.zeros(0, np.int64)
    rel = pts - origin
    rng = np.sqrt((rel * rel).sum(axis=1))
    ok = rng > _EPS
    dirs = rel / np.where(ok, rng, 1.0)[:, None]
    s = rng[:, None] - truncation + step * np.arange(nsteps)[None, :]
    keep = ok[:, None] & (s >= 0.0) & (s <= rng[:, None] + truncation)
    x = origin + s[:, :, None] * dirs[:, None, :]
    idx = np.floor(x / voxel_size + 0.5).astype(np.int64)
    same = np.zeros_like(keep)
    same[:, 1:] = np.all(idx[:, 1:] == idx[:, :-1], axis=2) & keep[:, :-1]
    keep &= ~same
    ray = np.broadcast_to(np.arange(pts.shape[0])[:, None], keep.shape)
    idx = idx[keep]
    ray = ray[keep]
    centers = idx * voxel_size
    proj = ((centers - origin) * dirs[ray]).sum(axis=1)
    sdf = np.clip(rng[ray] - proj, -truncation, truncation)
    return idx, sdf, ray.astype(np.int64)


def mc_cube_triangles(values, origins, tri_table):
    """Marching-cubes triangles for a batch of cubes.

    ``values`` holds the 8 corner distances of each cube in the table's corner
    order and ``origins`` the integer index of corner 0. Returns per emitted
    vertex the lower voxel of its grid edge, the edge axis and the
    interpolation fraction from that voxel, plus the source cube of every
    triangle.
    """
    values = np.asarray(values, dtype=np.float64)
    origins = np.asarray(origins, dtype=np.int64)
    bits = (values < 0.0).astype(np.int64) << np.arange(8)
    case = bits.sum(axis=1)
    rows = tri_table[case]                     # (C, 16)
    ntri = (rows >= 0).sum(axis=1) // 3
    cube = np.repeat(np.arange(values.shape[0]), ntri)
    starts = np.cumsum(ntri) - ntri
    slot = np.arange(cube.size) - np.repeat(starts, ntri)
    edges = np.stack([rows[cube, 3 * slot + k] for k in range(3)], axis=1).reshape(-1)
    vcube = np.repeat(cube, 3)
    lo_corner = EDGE_LO_CORNER[edges]
    axis = EDGE_AXIS[edges]
    hi_corner = CORNER_STEP[lo_corner, axis]
    va = values[vcube, lo_corner]
    vb = values[vcube, hi_corner]
    frac = va / (va - vb)
    lo = origins[vcube] + CORNER_OFFSETS[lo_corner]
    return lo, axis.astype(np.int64), frac, cube.astype(np.int64)

