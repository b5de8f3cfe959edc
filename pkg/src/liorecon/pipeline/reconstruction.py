"""Fuse posed keyframe clouds into a TSDF and extract a mesh."""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from ..geometry import Pose
from ..tsdf import Submap, TriangleMesh, VoxelGrid, extract_mesh, fuse_submaps, integrate_cloud, write_ply
from . import io
from .config import RunConfig

log = logging.getLogger(__name__)


def make_grid(cfg: RunConfig) -> VoxelGrid:
    return VoxelGrid(cfg.voxel_size, cfg.truncation or None, cfg.weight_mode, cfg.max_weight)


def _match(stamps, poses, t, tol=1e-6) -> Pose:
    k = int(np.argmin(np.abs(stamps - t)))
    if abs(stamps[k] - t) > tol:
        raise ValueError(f"trajectory has no pose at cloud stamp {t:.9g}")
    return poses[k]


def run_reconstruction(stamps, poses, clouds, cfg: RunConfig) -> TriangleMesh:
    """Integrate world-frame ``clouds`` (LidarFrames) seen from the trajectory
    positions at their stamps.

    With ``submap_size > 0`` consecutive clouds are first fused into submaps
    in the frame of their first keyframe, then resampled at those anchors.
    """
    stamps = np.asarray(stamps, dtype=float)
    clouds = list(clouds)
    if len(stamps) == 0:
        raise ValueError("empty trajectory")
    if not clouds:
        log.warning("no clouds to integrate; mesh is empty")
        return TriangleMesh.empty()
    origins = [_match(stamps, poses, c.stamp).translation for c in clouds]
    if cfg.submap_size <= 0:
        grid = make_grid(cfg)
        for c, o in zip(clouds, origins):
            integrate_cloud(grid, c.points, o)
        return extract_mesh(grid)

    submaps = []
    for s in range(0, len(clouds), cfg.submap_size):
        chunk = range(s, min(s + cfg.submap_size, len(clouds)))
        anchor = _match(stamps, poses, clouds[s].stamp)
        inv = anchor.inverse()
        grid = make_grid(cfg)
        for k in chunk:
            integrate_cloud(grid, inv @ clouds[k].points, inv @ origins[k])
        submaps.append(Submap(anchor, grid, list(chunk)))
    return extract_mesh(fuse_submaps(submaps, template=make_grid(cfg)))


def load_clouds(run_dir) -> list:
    run_dir = Path(run_dir)
    manifest = run_dir / "clouds.csv"
    if not manifest.exists():
        return []
    return [io.read_scan(run_dir / e.file) for e in io.read_manifest(manifest)]


def reconstruct_run(run_dir, cfg: RunConfig, out=None) -> TriangleMesh:
    """Read ``trajectory.txt`` and ``clouds/`` from an odometry run, write ``mesh.ply``."""
    run_dir = Path(run_dir)
    stamps, poses = io.read_trajectory(run_dir / "trajectory.txt")
    mesh = run_reconstruction(stamps, poses, load_clouds(run_dir), cfg)
    out = Path(out or run_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_ply(mesh, out / "mesh.ply", binary=cfg.binary_ply)
    log.info("mesh: %d vertices, %d triangles", len(mesh.vertices), len(mesh.triangles))
    return mesh

