"""Loop kernels compiled with numba ``@njit``.

Same contracts as ``_numpy``; outputs are produced in the same order so the
two backends can be compared element by element.
"""
import math

import numpy as np
from numba import njit

from .tables import CORNER_OFFSETS, CORNER_STEP, EDGE_AXIS, EDGE_LO_CORNER

_EPS = 1e-12


@njit(cache=True)
def _ray_triangle_hits(origins, dirs, tris, max_range, out):
    n = origins.shape[0]
    m = tris.shape[0]
    for i in range(n):
        ox, oy, oz = origins[i, 0], origins[i, 1], origins[i, 2]
        dx, dy, dz = dirs[i, 0], dirs[i, 1], dirs[i, 2]
        best = np.inf
        for j in range(m):
            v0x, v0y, v0z = tris[j, 0, 0], tris[j, 0, 1], tris[j, 0, 2]
            e1x = tris[j, 1, 0] - v0x
            e1y = tris[j, 1, 1] - v0y
            e1z = tris[j, 1, 2] - v0z
            e2x = tris[j, 2, 0] - v0x
            e2y = tris[j, 2, 1] - v0y
            e2z = tris[j, 2, 2] - v0z
            px = dy * e2z - dz * e2y
            py = dz * e2x - dx * e2z
            pz = dx * e2y - dy * e2x
            det = px * e1x + py * e1y + pz * e1z
            if abs(det) <= _EPS:
                continue
            inv = 1.0 / det
            tx = ox - v0x
            ty = oy - v0y
            tz = oz - v0z
            u = (tx * px + ty * py + tz * pz) * inv
            if u < 0.0 or u > 1.0:
                continue
            qx = ty * e1z - tz * e1y
            qy = tz * e1x - tx * e1z
            qz = tx * e1y - ty * e1x
            v = (dx * qx + dy * qy + dz * qz) * inv
            if v < 0.0 or u + v > 1.0:
                continue
            t = (e2x * qx + e2y * qy + e2z * qz) * inv
            if t > _EPS and t <= max_range and t < best:
                best = t
        out[i] = best


def ray_triangle_hits(origins, dirs, tris, max_range):
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    tris = np.ascontiguousarray(tris, dtype=np.float64).reshape(-1, 3, 3)
    out = np.full(origins.shape[0], np.inf)
    _ray_triangle_hits(origins, dirs, tris, float(max_range), out)
    return out


@njit(cache=True)
def _ring_curvature(pts, window, curv, valid):
    n = pts.shape[0]
    for i in range(window, n - window):
        sx = 0.0
        sy = 0.0
        sz = 0.0
        span = 0.0
        for k in range(-window, window + 1):
            if k == 0:
                continue
            ax = pts[i, 0] - pts[i + k, 0]
            ay = pts[i, 1] - pts[i + k, 1]
            az = pts[i, 2] - pts[i + k, 2]
            sx += ax
            sy += ay
            sz += az
            span = max(span, abs(ax), abs(ay), abs(az))
        rng = math.sqrt(pts[i, 0] ** 2 + pts[i, 1] ** 2 + pts[i, 2] ** 2)
        if rng > _EPS and span > _EPS:
            curv[i] = math.sqrt(sx * sx + sy * sy + sz * sz) / (2 * window * rng)
            valid[i] = True


def ring_curvature(points, window):
    pts = np.ascontiguousarray(points, dtype=np.float64)
    curv = np.zeros(pts.shape[0])
    valid = np.zeros(pts.shape[0], dtype=np.bool_)
    if pts.shape[0] >= 2 * window + 1:
        _ring_curvature(pts, int(window), curv, valid)
    return curv, valid


@njit(cache=True)
def _tsdf_ray_samples(pts, origin, voxel_size, truncation, step, nsteps, idx, sdf, ray):
    count = 0
    for i in range(pts.shape[0]):
        rx = pts[i, 0] - origin[0]
        ry = pts[i, 1] - origin[1]
        rz = pts[i, 2] - origin[2]
        rng = math.sqrt(rx * rx + ry * ry + rz * rz)
        if rng <= _EPS:
            continue
        dx = rx / rng
        dy = ry / rng
        dz = rz / rng
        px = np.int64(0)
        py = np.int64(0)
        pz = np.int64(0)
        have_prev = False
        for k in range(nsteps):
            s = rng - truncation + step * k
            if s < 0.0 or s > rng + truncation:
                have_prev = False
                continue
            ix = np.int64(math.floor((origin[0] + s * dx) / voxel_size + 0.5))
            iy = np.int64(math.floor((origin[1] + s * dy) / voxel_size + 0.5))
            iz = np.int64(math.floor((origin[2] + s * dz) / voxel_size + 0.5))
            if have_prev and ix == px and iy == py and iz == pz:
                continue
            px, py, pz = ix, iy, iz
            have_prev = True
            proj = ((ix * voxel_size - origin[0]) * dx
                    + (iy * voxel_size - origin[1]) * dy
                    + (iz * voxel_size - origin[2]) * dz)
            d = rng - proj
            if d > truncation:
                d = truncation
            elif d < -truncation:
                d = -truncation
            idx[count, 0] = ix
            idx[count, 1] = iy
            idx[count, 2] = iz
            sdf[count] = d
            ray[count] = i
            count += 1
    return count


def tsdf_ray_samples(points, origin, voxel_size, truncation, step):
    pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    origin = np.ascontiguousarray(origin, dtype=np.float64)
    nsteps = int(np.ceil(2.0 * truncation / step)) + 1
    cap = pts.shape[0] * nsteps
    idx = np.empty((cap, 3), np.int64)
    sdf = np.empty(cap)
    ray = np.empty(cap, np.int64)
    n = _tsdf_ray_samples(pts, origin, float(voxel_size), float(truncation),
                          float(step), nsteps, idx, sdf, ray)
    return idx[:n], sdf[:n], ray[:n]


@njit(cache=True)
def _mc_cube_triangles(values, origins, tri_table, corner_offsets, corner_step,
                       edge_lo, edge_axis, lo, axis, frac, tri_cube):
    nt = 0
    for c in range(values.shape[0]):
        case = 0
        for k in range(8):
            if values[c, k] < 0.0:
                case |= 1 << k
        row = tri_table[case]
        j = 0
        while j < 16 and row[j] >= 0:
            for k in range(3):
                e = row[j + k]
                a = edge_lo[e]
                ax = edge_axis[e]
                b = corner_step[a, ax]
                va = values[c, a]
                vb = values[c, b]
                v = 3 * nt + k
                lo[v, 0] = origins[c, 0] + corner_offsets[a, 0]
                lo[v, 1] = origins[c, 1] + corner_offsets[a, 1]
                lo[v, 2] = origins[c, 2] + corner_offsets[a, 2]
                axis[v] = ax
                frac[v] = va / (va - vb)
            tri_cube[nt] = c
            nt += 1
            j += 3
    return nt


def mc_cube_triangles(values, origins, tri_table):
    values = np.ascontiguousarray(values, dtype=np.float64).reshape(-1, 8)
    origins = np.ascontiguousarray(origins, dtype=np.int64).reshape(-1, 3)
    cap = values.shape[0] * 5
    lo = np.empty((3 * cap, 3), np.int64)
    axis = np.empty(3 * cap, np.int64)
    frac = np.empty(3 * cap)
    tri_cube = np.empty(cap, np.int64)
    nt = _mc_cube_triangles(values, origins, tri_table, CORNER_OFFSETS, CORNER_STEP,
                            EDGE_LO_CORNER, EDGE_AXIS, lo, axis, frac, tri_cube)
    return lo[:3 * nt], axis[:3 * nt], frac[:3 * nt], tri_cube[:nt]
