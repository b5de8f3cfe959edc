"""Sparse TSDF voxel grid: weighted fusion, marching cubes and submap merging.

Voxel ``(i, j, k)`` is centred at ``(i, j, k) * voxel_size``. Distances are
projective (measured along the sensor ray) and positive on the sensor side.
Storage is a dict of 16^3 blocks allocated on first touch.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .kernels.tables import CORNER_OFFSETS
from .geometry import Pose

log = logging.getLogger(__name__)

BLOCK = 16
_KEY_OFFSET = 1 << 20
_KEY_BITS = 21


def _encode(idx) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64) + _KEY_OFFSET
    return (idx[..., 0] << (2 * _KEY_BITS)) | (idx[..., 1] << _KEY_BITS) | idx[..., 2]


def compute_weight(z: float, mode: str = "constant"):
    """Per-measurement fusion weight for a return at range ``z``.

    ``constant`` gives 1. ``quadratic`` gives ``1/z^2`` with ``z`` floored at
    1 m and the result clamped to ``[1e-4, 1]``.
    """
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0.0):
        raise ValueError("range must be positive")
    if mode == "constant":
        w = np.ones_like(z)
    elif mode == "quadratic":
        w = np.clip(1.0 / np.maximum(z, 1.0) ** 2, 1e-4, 1.0)
    else:
        raise ValueError(f"unknown weight mode {mode!r}")
    return float(w) if w.ndim == 0 else w


@dataclass
class VoxelGrid:
    voxel_size: float = 0.1
    truncation: float | None = None
    weight_mode: str = "constant"
    max_weight: float = 100.0
    step_fraction: float = 0.25
    blocks: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.truncation is None:
            self.truncation = 4.0 * self.voxel_size
        if self.voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        if self.truncation < 2.0 * self.voxel_size - 1e-12:
            raise ValueError("truncation must be at least two voxels")
        if self.weight_mode not in ("constant", "quadratic"):
            raise ValueError(f"unknown weight mode {self.weight_mode!r}")

    def empty_like(self) -> "VoxelGrid":
        return VoxelGrid(self.voxel_size, self.truncation, self.weight_mode,
                         self.max_weight, self.step_fraction)

    # -- voxel access ------------------------------------------------------
    def observed(self):
        """Indices ``(N, 3)``, distances and weights of all voxels with weight > 0,
        sorted by block key then in-block order."""
        idx, dist, wgt = [], [], []
        for key in sorted(self.blocks):
            d, w = self.blocks[key]
            loc = np.argwhere(w > 0)
            if loc.size == 0:
                continue
            idx.append(loc + np.asarray(key) * BLOCK)
            dist.append(d[w > 0])
            wgt.append(w[w > 0])
        if not idx:
            return np.zeros((0, 3), np.int64), np.zeros(0), np.zeros(0)
        return np.concatenate(idx).astype(np.int64), np.concatenate(dist), np.concatenate(wgt)

    def n_observed(self) -> int:
        return int(sum(np.count_nonzero(w) for _, w in self.blocks.values()))

    def gather(self, idx):
        """Distance and weight at voxel indices (zero weight where unallocated)."""
        idx = np.asarray(idx, dtype=np.int64).reshape(-1, 3)
        dist = np.zeros(len(idx))
        wgt = np.zeros(len(idx))
        for key, sel, li in _group_by_block(idx):
            block = self.blocks.get(key)
            if block is not None:
                dist[sel] = block[0][li]
                wgt[sel] = block[1][li]
        return dist, wgt

    def _block(self, key):
        block = self.blocks.get(key)
        if block is None:
            block = (np.zeros((BLOCK,) * 3), np.zeros((BLOCK,) * 3))
            self.blocks[key] = block
        return block

    def fuse(self, idx, dist, weight):
        """Weighted-average merge of per-voxel observations (one row per voxel)."""
        idx = np.asarray(idx, dtype=np.int64).reshape(-1, 3)
        for key, sel, li in _group_by_block(idx):
            D, W = self._block(key)
            w_old = W[li]
            w_new = weight[sel]
            total = w_old + w_new
            D[li] = (w_old * D[li] + w_new * dist[sel]) / total
            W[li] = np.minimum(total, self.max_weight)

    def set_voxels(self, idx, dist, weight=1.0):
        """Overwrite voxels directly (analytic fields, tests)."""
        idx = np.asarray(idx, dtype=np.int64).reshape(-1, 3)
        dist = np.clip(np.broadcast_to(np.asarray(dist, float), (len(idx),)), -self.truncation, self.truncation)
        weight = np.broadcast_to(np.asarray(weight, float), (len(idx),))
        for key, sel, li in _group_by_block(idx):
            D, W = self._block(key)
            D[li] = dist[sel]
            W[li] = weight[sel]


def _group_by_block(idx):
    """Yield ``(block key, row selection, in-block index tuple)`` per touched block."""
    if len(idx) == 0:
        return
    bkey = np.floor_divide(idx, BLOCK)
    local = idx - bkey * BLOCK
    codes = _encode(bkey)
    order = np.argsort(codes, kind="stable")
    _, start = np.unique(codes[order], return_index=True)
    bounds = np.append(start, len(order))
    for n in range(len(start)):
        sel = order[bounds[n]:bounds[n + 1]]
        l = local[sel]
        yield tuple(int(v) for v in bkey[sel[0]]), sel, (l[:, 0], l[:, 1], l[:, 2])


@dataclass
class IntegrationStats:
    points: int
    skipped: int
    samples: int
    voxels: int


def integrate_cloud(grid: VoxelGrid, points, origin) -> IntegrationStats:
    """Fuse one world-frame point cloud observed from ``origin`` into ``grid``.

    All samples of one cloud that land in the same voxel are combined before
    the merge, so fusing a cloud is independent of point order.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    origin = np.asarray(origin, dtype=float).reshape(3)
    rng = np.linalg.norm(pts - origin, axis=1)
    good = np.all(np.isfinite(pts), axis=1) & (rng > 1e-9)
    pts, rng = pts[good], rng[good]
    skipped = int((~good).sum())
    if len(pts) == 0:
        return IntegrationStats(0, skipped, 0, 0)
    step = grid.voxel_size * grid.step_fraction
    idx, sdf, ray = kernels.tsdf_ray_samples(pts, origin, grid.voxel_size, grid.truncation, step)
    if len(idx) == 0:
        return IntegrationStats(len(pts), skipped, 0, 0)
    w = np.asarray(compute_weight(rng, grid.weight_mode))[ray]
    codes = _encode(idx)
    uniq, first, inv = np.unique(codes, return_index=True, return_inverse=True)
    wsum = np.bincount(inv, weights=w)
    dsum = np.bincount(inv, weights=w * sdf)
    grid.fuse(idx[first], dsum / wsum, wsum)
    return IntegrationStats(len(pts), skipped, len(idx), len(uniq))


# ---------------------------------------------------------------------------

@dataclass
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    normals: np.ndarray

    @classmethod
    def empty(cls) -> "TriangleMesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), np.int64), np.zeros((0, 3)))

    def __len__(self):
        return len(self.triangles)

    def face_areas(self) -> np.ndarray:
        v = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)

    def write_ply(self, path, binary: bool = False) -> None:
        write_ply(self, path, binary)


def _cube_values(grid: VoxelGrid):
    """Corner distances and origins of every cube whose 8 corners are observed."""
    idx, dist, _ = grid.observed()
    if len(idx) == 0:
        return np.zeros((0, 8)), np.zeros((0, 3), np.int64)
    codes = _encode(idx)
    order = np.argsort(codes)
    codes, idx, dist = codes[order], idx[order], dist[order]
    values = np.empty((len(idx), 8))
    ok = np.ones(len(idx), dtype=bool)
    for c, off in enumerate(CORNER_OFFSETS):
        nb = _encode(idx + off)
        pos = np.clip(np.searchsorted(codes, nb), 0, len(codes) - 1)
        found = codes[pos] == nb
        ok &= found
        values[:, c] = np.where(found, dist[pos], 0.0)
    values, idx = values[ok], idx[ok]
    neg = values < 0.0
    crossing = neg.any(axis=1) & ~neg.all(axis=1)
    return values[crossing], idx[crossing]


def extract_mesh(grid: VoxelGrid) -> TriangleMesh:
    """Zero-level surface of the observed field via marching cubes.

    Only cubes with all eight corners observed contribute. Vertices are shared
    between neighbouring cubes (welded per grid edge), triangles are wound so
    their normals point towards positive distance, and vertex normals follow
    the distance-field gradient.
    """
    values, origins = _cube_values(grid)
    if len(values) == 0:
        return TriangleMesh.empty()
    lo, axis, frac, tri_cube = kernels.mc_cube_triangles(values, origins)
    if len(tri_cube) == 0:
        return TriangleMesh.empty()
    edge_key = _encode(lo) * 3 + axis
    uniq, first, inv = np.unique(edge_key, return_index=True, return_inverse=True)
    step = np.eye(3)[axis[first]]
    verts = (lo[first] + frac[first, None] * step) * grid.voxel_size
    tris = inv.reshape(-1, 3).astype(np.int64)

    # field gradient per cube from the corner values (trilinear, cube centre)
    sgn = 2.0 * CORNER_OFFSETS - 1.0                # (8, 3)
    grad = values[tri_cube] @ sgn / 4.0             # (T, 3)
    p = verts[tris]
    fn = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    flip = np.einsum("ij,ij->i", fn, grad) < 0.0
    tris[flip] = tris[flip][:, ::-1]
    fn[flip] = -fn[flip]

    area2 = np.linalg.norm(fn, axis=1)
    keep = area2 > 2e-12
    tris, grad = tris[keep], grad[keep]

    normals = np.zeros_like(verts)
    for k in range(3):
        np.add.at(normals, tris[:, k], grad)
    nrm = np.linalg.norm(normals, axis=1, keepdims=True)
    normals = np.where(nrm > 0, normals / np.where(nrm > 0, nrm, 1.0), 0.0)

    used = np.zeros(len(verts), dtype=bool)
    used[tris.ravel()] = True
    remap = np.cumsum(used) - 1
    return TriangleMesh(verts[used], remap[tris].astype(np.int64), normals[used])


# ---------------------------------------------------------------------------

@dataclass
class Submap:
    anchor: Pose
    grid: VoxelGrid
    keyframe_ids: list = field(default_factory=list)


def _trilinear(grid: VoxelGrid, pts):
    """Trilinear distance/weight at continuous points; ``ok`` needs every corner
    with a non-negligible coefficient observed."""
    x = pts / grid.voxel_size
    base = np.floor(x).astype(np.int64)
    f = x - base
    dist = np.zeros(len(pts))
    wgt = np.zeros(len(pts))
    ok = np.ones(len(pts), dtype=bool)
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                c = (np.where(dx, f[:, 0], 1 - f[:, 0]) * np.where(dy, f[:, 1], 1 - f[:, 1])
                     * np.where(dz, f[:, 2], 1 - f[:, 2]))
                d, w = grid.gather(base + np.array([dx, dy, dz]))
                matters = c > 1e-9
                ok &= ~matters | (w > 0)
                dist += c * d
                wgt += c * w
    return dist, wgt, ok


def fuse_submaps(submaps, anchors=None, template: VoxelGrid | None = None) -> VoxelGrid:
    """Resample every submap into one world grid at its (optimized) anchor.

    For each world voxel near a transformed submap voxel, the submap field is
    sampled trilinearly at the voxel centre and merged with the usual
    weighted average.
    """
    submaps = list(submaps)
    anchors = [s.anchor for s in submaps] if anchors is None else list(anchors)
    if len(anchors) != len(submaps):
        raise ValueError("need one anchor per submap")
    if template is None:
        template = submaps[0].grid if submaps else VoxelGrid()
    out = template.empty_like()
    corners = np.array([[dx, dy, dz] for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)])
    for sub, anchor in zip(submaps, anchors):
        idx, _, _ = sub.grid.observed()
        if len(idx) == 0:
            continue
        world = anchor @ (idx * sub.grid.voxel_size)
        base = np.floor(world / out.voxel_size).astype(np.int64)
        cand = (base[:, None, :] + corners[None]).reshape(-1, 3)
        cand = np.unique(cand, axis=0)
        centres = cand * out.voxel_size
        local = anchor.inverse() @ centres
        d, w, ok = _trilinear(sub.grid, local)
        ok &= w > 0
        out.fuse(cand[ok], d[ok], w[ok])
    return out


# ---------------------------------------------------------------------------
# PLY

def write_ply(mesh: TriangleMesh, path, binary: bool = False) -> None:
    v = np.asarray(mesh.vertices, dtype=np.float32)
    n = np.asarray(mesh.normals, dtype=np.float32)
    f = np.asarray(mesh.triangles, dtype=np.int32)
    fmt = "binary_little_endian" if binary else "ascii"
    header = (
        f"ply\nformat {fmt} 1.0\n"
        f"element vertex {len(v)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property float nx\nproperty float ny\nproperty float nz\n"
        f"element face {len(f)}\n"
        "property list uchar int vertex_indices\n"
        "end_header\n"
    )
    if binary:
        vd = np.empty(len(v), dtype=[("p", "<f4", 3), ("n", "<f4", 3)])
        vd["p"], vd["n"] = v, n
        fd = np.empty(len(f), dtype=[("c", "u1"), ("i", "<i4", 3)])
        fd["c"], fd["i"] = 3, f
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(vd.tobytes())
            fh.write(fd.tobytes())
        return
    with open(path, "w", newline="\n") as fh:
        fh.write(header)
        if len(v):
            np.savetxt(fh, np.hstack([v, n]), fmt="%.9g")
        if len(f):
            np.savetxt(fh, np.hstack([np.full((len(f), 1), 3), f]), fmt="%d")


def read_ply(path) -> TriangleMesh:
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.index(b"end_header\n") + len(b"end_header\n")
    header = data[:end].decode("ascii").splitlines()
    if header[0] != "ply":
        raise ValueError("not a PLY file")
    fmt = header[1].split()[1]
    nv = nf = 0
    for line in header:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            nv = int(parts[2])
        elif parts[:2] == ["element", "face"]:
            nf = int(parts[2])
    body = data[end:]
    if fmt == "binary_little_endian":
        vd = np.frombuffer(body, dtype=[("p", "<f4", 3), ("n", "<f4", 3)], count=nv)
        fd = np.frombuffer(body, dtype=[("c", "u1"), ("i", "<i4", 3)], count=nf, offset=vd.nbytes)
        return TriangleMesh(vd["p"].astype(np.float64), fd["i"].astype(np.int64), vd["n"].astype(np.float64))
    if fmt != "ascii":
        raise ValueError(f"unsupported PLY format {fmt!r}")
    lines = body.decode("ascii").splitlines()
    vals = np.array([[np.float32(x) for x in ln.split()] for ln in lines[:nv]], dtype=np.float32).reshape(nv, 6)
    faces = np.array([[int(x) for x in ln.split()[1:4]] for ln in lines[nv:nv + nf]], dtype=np.int64).reshape(nf, 3)
    return TriangleMesh(vals[:, :3].astype(np.float64), faces, vals[:, 3:].astype(np.float64))
