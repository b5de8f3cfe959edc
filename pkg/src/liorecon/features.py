"""Scan-line curvature, edge/planar feature selection and scan deskewing."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .geometry import quat_exp, quat_to_matrix


@dataclass
class LidarFrame:
    """One sweep. Points are grouped by ring and azimuth-ordered within a ring.

    ``stamp`` is the scan end time, ``period`` the sweep duration, and
    ``rel_time`` the fraction of the sweep at which each point was measured.
    """

    stamp: float
    points: np.ndarray
    ring: np.ndarray
    rel_time: np.ndarray
    period: float = 0.1

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.ring = np.asarray(self.ring, dtype=np.int64).reshape(-1)
        self.rel_time = np.asarray(self.rel_time, dtype=float).reshape(-1)
        n = len(self.points)
        if len(self.ring) != n or len(self.rel_time) != n:
            raise ValueError("points, ring and rel_time lengths differ")
        if n and (self.rel_time.min() < 0.0 or self.rel_time.max() > 1.0):
            raise ValueError("rel_time must lie in [0, 1]")

    def __len__(self):
        return len(self.points)

    @classmethod
    def empty(cls, stamp: float = 0.0, period: float = 0.1) -> "LidarFrame":
        return cls(stamp, np.zeros((0, 3)), np.zeros(0, np.int64), np.zeros(0), period)

    @property
    def point_times(self) -> np.ndarray:
        return self.stamp - self.period * (1.0 - self.rel_time)

    def rings(self):
        """Yield ``(ring_id, index array)`` in ascending ring order."""
        if len(self) == 0:
            return
        for r in np.unique(self.ring):
            yield int(r), np.flatnonzero(self.ring == r)


@dataclass
class FeatureSet:
    edge_points: np.ndarray
    edge_rings: np.ndarray
    planar_points: np.ndarray
    planar_rings: np.ndarray

    @classmethod
    def empty(cls) -> "FeatureSet":
        return cls(np.zeros((0, 3)), np.zeros(0, np.int64), np.zeros((0, 3)), np.zeros(0, np.int64))

    @property
    def n_edge(self) -> int:
        return len(self.edge_points)

    @property
    def n_planar(self) -> int:
        return len(self.planar_points)

    def transformed(self, pose) -> "FeatureSet":
        return FeatureSet(pose @ self.edge_points, self.edge_rings,
                          pose @ self.planar_points, self.planar_rings)


@dataclass
class FeatureConfig:
    window: int = 5
    sectors: int = 6
    edges_per_sector: int = 2
    planar_per_sector: int = 4
    edge_threshold: float = 0.1
    planar_threshold: float = 0.01
    min_range: float = 1.0
    max_range: float = 100.0
    occlusion_gap: float = 0.3
    # denser sets used to build registration maps
    map_edges_per_sector: int = 20
    map_leaf: float = 0.2


def compute_curvature(points, window: int = 5):
    """Per-point smoothness along one ring; returns ``(curvature, valid)``.

    Boundary points (fewer than ``window`` neighbours on a side) and points
    whose neighbourhood collapses to a single location are marked invalid.
    """
    return kernels.ring_curvature(np.asarray(points, dtype=float).reshape(-1, 3), int(window))


def _occluded(pts, window, gap):
    """Points next to a range discontinuity on the far side, LOAM style."""
    n = len(pts)
    bad = np.zeros(n, dtype=bool)
    if n < 2:
        return bad
    rng = np.linalg.norm(pts, axis=1)
    jump = np.abs(np.diff(rng)) > gap
    for i in np.flatnonzero(jump):
        if rng[i] > rng[i + 1]:
            bad[max(0, i - window + 1):i + 1] = True
        else:
            bad[i + 1:i + 1 + window] = True
    return bad


def _ring_selection(pts, cfg: FeatureConfig, n_edge: int, n_plane):
    """Edge and planar masks for one ring. ``n_plane=None`` keeps every usable
    point below the planar threshold that is not an edge."""
    n = len(pts)
    curv, valid = compute_curvature(pts, cfg.window)
    usable = valid & ~_occluded(pts, cfg.window, cfg.occlusion_gap)
    picked = np.zeros(n, dtype=bool)
    is_edge = np.zeros(n, dtype=bool)
    is_plane = np.zeros(n, dtype=bool)
    bounds = np.linspace(cfg.window, n - cfg.window, cfg.sectors + 1).astype(int)
    for s in range(cfg.sectors):
        idx = np.arange(bounds[s], bounds[s + 1])
        idx = idx[usable[idx]]
        if idx.size == 0:
            continue
        order = idx[np.argsort(-curv[idx], kind="stable")]
        count = 0
        for i in order:
            if count >= n_edge or curv[i] <= cfg.edge_threshold:
                break
            if picked[i]:
                continue
            is_edge[i] = True
            picked[max(0, i - cfg.window):i + cfg.window + 1] = True
            count += 1
        if n_plane is None:
            continue
        count = 0
        for i in order[::-1]:
            if count >= n_plane or curv[i] >= cfg.planar_threshold:
                break
            if picked[i]:
                continue
            is_plane[i] = True
            picked[max(0, i - cfg.window):i + cfg.window + 1] = True
            count += 1
    if n_plane is None:
        is_plane = usable & ~is_edge & (curv < cfg.planar_threshold)
    return is_edge, is_plane


def _select(frame: LidarFrame, cfg: FeatureConfig, n_edge: int, n_plane):
    edges, edge_rings, planes, plane_rings = [], [], [], []
    for ring_id, sel in frame.rings():
        pts = frame.points[sel]
        rng = np.linalg.norm(pts, axis=1)
        pts = pts[(rng >= cfg.min_range) & (rng <= cfg.max_range)]
        if len(pts) < 2 * cfg.window + 1:
            continue
        is_edge, is_plane = _ring_selection(pts, cfg, n_edge, n_plane)
        edges.append(pts[is_edge])
        edge_rings.append(np.full(is_edge.sum(), ring_id))
        planes.append(pts[is_plane])
        plane_rings.append(np.full(is_plane.sum(), ring_id))
    if not edges:
        return FeatureSet.empty()
    return FeatureSet(np.concatenate(edges).reshape(-1, 3), np.concatenate(edge_rings).astype(np.int64),
                      np.concatenate(planes).reshape(-1, 3), np.concatenate(plane_rings).astype(np.int64))


def extract_features(frame: LidarFrame, config: FeatureConfig | None = None) -> FeatureSet:
    """Per ring and azimuth sector: the sharpest points above the edge
    threshold and the flattest below the planar threshold, with neighbours of
    every pick suppressed."""
    cfg = config or FeatureConfig()
    return _select(frame, cfg, cfg.edges_per_sector, cfg.planar_per_sector)


def voxel_downsample(points, rings, leaf: float):
    """Centroid per occupied ``leaf``-sized cell (ring of the first member)."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) == 0 or leaf <= 0:
        return points, np.asarray(rings)
    keys = np.floor(points / leaf).astype(np.int64)
    _, first, inv = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inv = inv.reshape(-1)
    cnt = np.bincount(inv)
    cent = np.stack([np.bincount(inv, weights=points[:, k]) for k in range(3)], axis=1) / cnt[:, None]
    return cent, np.asarray(rings)[first]


def extract_map_features(frame: LidarFrame, config: FeatureConfig | None = None) -> FeatureSet:
    """Denser edge/planar sets for building a registration map: more edge
    picks per sector and every smooth point, thinned on a voxel grid."""
    cfg = config or FeatureConfig()
    f = _select(frame, cfg, cfg.map_edges_per_sector, None)
    pp, pr = voxel_downsample(f.planar_points, f.planar_rings, cfg.map_leaf)
    return FeatureSet(f.edge_points, f.edge_rings, pp, pr)


def deskew(frame: LidarFrame, motion) -> LidarFrame:
    """Re-express every point in the sensor frame at scan end.

    ``motion(times) -> (R, t)`` returns sensor poses at the requested times;
    any absolute frame works since only relative motion is used. Coverage
    errors raised by ``motion`` propagate to the caller.
    """
    if len(frame) == 0:
        return LidarFrame.empty(frame.stamp, frame.period)
    times = np.append(frame.point_times, frame.stamp)
    R, t = motion(times)
    R_end, t_end = R[-1], t[-1]
    world = np.einsum("nij,nj->ni", R[:-1], frame.points) + t[:-1]
    local = (world - t_end) @ R_end
    return LidarFrame(frame.stamp, local, frame.ring.copy(), np.ones(len(frame)), frame.period)


def constant_motion(rotation_rate, velocity, t0: float = 0.0):
    """Motion closure for a constant angular rate and constant world velocity."""
    w = np.asarray(rotation_rate, dtype=float)
    v = np.asarray(velocity, dtype=float)

    def motion(times):
        dt = np.asarray(times, dtype=float) - t0
        R = quat_to_matrix(quat_exp(dt[:, None] * w))
        return R, dt[:, None] * v

    return motion
