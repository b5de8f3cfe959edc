"""Trajectory error, mesh-to-world distance and the detail/time efficiency ratios."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ..sim import point_triangle_distance


def associate(stamps_a, stamps_b, max_dt: float = 0.01):
    """Index pairs matching each stamp of ``a`` to its nearest stamp in ``b``."""
    a = np.asarray(stamps_a, dtype=float)
    b = np.asarray(stamps_b, dtype=float)
    if len(a) == 0 or len(b) == 0:
        return np.zeros(0, int), np.zeros(0, int)
    order = np.argsort(b)
    bs = b[order]
    k = np.clip(np.searchsorted(bs, a), 1, len(bs) - 1) if len(bs) > 1 else np.zeros(len(a), int)
    if len(bs) > 1:
        left = np.abs(a - bs[k - 1]) <= np.abs(a - bs[k])
        k = np.where(left, k - 1, k)
    ok = np.abs(a - bs[k]) <= max_dt
    return np.flatnonzero(ok), order[k[ok]]


def rigid_align(src, dst):
    """Least-squares ``(R, t)`` with ``dst ~ R src + t`` (Kabsch/Umeyama, no scale)."""
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    C = (dst - mu_d).T @ (src - mu_s)
    U, _, Vt = np.linalg.svd(C)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt)) or 1.0
    R = U @ D @ Vt
    return R, mu_d - R @ mu_s


def _matched_positions(est_stamps, est_poses, gt_stamps, gt_poses, max_dt):
    i, j = associate(est_stamps, gt_stamps, max_dt)
    if len(i) < 2:
        raise ValueError("need at least two matched stamps")
    est = np.array([est_poses[k].translation for k in i])
    gt = np.array([gt_poses[k].translation for k in j])
    return est, gt


def alignment(est_stamps, est_poses, gt_stamps, gt_poses, max_dt: float = 0.01):
    """``(R, t)`` taking estimated positions onto ground truth."""
    return rigid_align(*_matched_positions(est_stamps, est_poses, gt_stamps, gt_poses, max_dt))


def compute_ate(est_stamps, est_poses, gt_stamps, gt_poses, align: bool = True,
                max_dt: float = 0.01) -> float:
    """RMSE of translation differences over nearest-stamp matches."""
    est, gt = _matched_positions(est_stamps, est_poses, gt_stamps, gt_poses, max_dt)
    if align:
        R, t = rigid_align(est, gt)
        est = est @ R.T + t
    return float(np.sqrt(np.mean(np.sum((est - gt) ** 2, axis=1))))


def mesh_to_world_distance(vertices, triangles, world_triangles, sample_faces: bool = True) -> np.ndarray:
    """Distance from mesh vertices (and face centroids) to the nearest world facet."""
    v = np.asarray(vertices, dtype=float).reshape(-1, 3)
    pts = v
    if sample_faces and len(triangles):
        pts = np.concatenate([v, v[np.asarray(triangles)].mean(axis=1)])
    if len(pts) == 0:
        return np.zeros(0)
    return point_triangle_distance(pts, world_triangles)


def hausdorff_to_world(vertices, triangles, world_triangles) -> float:
    d = mesh_to_world_distance(vertices, triangles, world_triangles)
    return float(d.max()) if len(d) else 0.0


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EfficiencyFactors:
    detail_ratio: float
    time_ratio: float
    efficiency: float

    @property
    def worthwhile(self) -> bool:
        return self.efficiency > 1.0


def efficiency_factors(detail_a, detail_b, time_a, time_b) -> EfficiencyFactors:
    """Detail ratio, time ratio and their quotient for a step from setting b to a."""
    vals = (detail_a, detail_b, time_a, time_b)
    if any(not np.isfinite(v) or v <= 0 for v in vals):
        raise ValueError("detail counts and times must be positive")
    d = detail_a / detail_b
    t = time_a / time_b
    return EfficiencyFactors(d, t, d / t)


def read_table(path):
    """Rows of ``level,triangles,seconds`` sorted by level."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(rows[0]) != {"level", "triangles", "seconds"}:
        raise ValueError(f"{path}: expected header level,triangles,seconds")
    out = sorted((float(r["level"]), float(r["triangles"]), float(r["seconds"])) for r in rows)
    return out


def table_factors(rows):
    """Consecutive-level factors: ``[(level_b, level_a, EfficiencyFactors), ...]``."""
    out = []
    for (lb, db, tb), (la, da, ta) in zip(rows, rows[1:]):
        out.append((lb, la, efficiency_factors(da, db, ta, tb)))
    return out


def best_level(rows):
    """Highest level reached while every step so far has E > 1."""
    best = rows[0][0]
    for lb, la, f in table_factors(rows):
        if not f.worthwhile:
            break
        best = la
    return best

