"""Build a simulated dataset (scans, IMU, ground truth, world mesh) from a config."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import sim
from ..tsdf import TriangleMesh, write_ply
from . import io
from .config import RunConfig

log = logging.getLogger(__name__)


@dataclass
class Scenario:
    world: sim.WorldModel
    trajectory: sim.Trajectory
    duration: float


def build_scenario(cfg: RunConfig) -> Scenario:
    duration = cfg.n_scans * cfg.scan_period
    kind = cfg.trajectory
    if kind == "loop":
        traj = sim.RoundedRectangleLoop.with_perimeter(cfg.loop_perimeter, duration=duration,
                                                       ramp=min(2.0, 0.5 * duration))
    elif kind == "static":
        traj = sim.StaticTrajectory(duration=duration)
    elif kind == "rotate":
        traj = sim.RotatingPlatform(cfg.yaw_rate, duration=duration)
    elif kind == "line":
        traj = sim.LineTrajectory((0.0, 0.0, 0.0), (cfg.speed, 0.0, 0.0), duration=duration)
    elif kind == "circle":
        traj = sim.ArcTrajectory((0.0, 0.0, 0.0), 1.5, cfg.speed, duration=duration)
    else:
        traj = sim.FigureEight(2.0, cfg.speed / 2.0, duration=duration)

    if cfg.world == "loop":
        if not isinstance(traj, sim.RoundedRectangleLoop):
            traj_extent = sim.RoundedRectangleLoop.with_perimeter(cfg.loop_perimeter)
            world = sim.loop_world(traj_extent)
        else:
            world = sim.loop_world(traj)
    elif cfg.world == "room":
        world = sim.room_world()
    elif cfg.world == "box":
        world = sim.box((-6.0, -5.0, -1.5), (7.0, 6.0, 2.5), inward=True)
    else:
        world = sim.plane((0.0, 0.0, -1.0), (0.0, 0.0, 1.0), size=200.0)
    return Scenario(world, traj, duration)


def world_mesh(world: sim.WorldModel) -> TriangleMesh:
    tris = world.triangles
    n = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    return TriangleMesh(tris.reshape(-1, 3), np.arange(3 * len(tris)).reshape(-1, 3), np.repeat(n, 3, axis=0))


def simulate_dataset(cfg: RunConfig, out) -> Path:
    """Ray-cast ``n_scans`` sweeps and synthesize IMU; returns the dataset directory."""
    scen = build_scenario(cfg)
    spec = cfg.sensor()
    rng = np.random.default_rng(cfg.seed)
    scan_rng, imu_rng = (np.random.default_rng(s) for s in rng.bit_generator.seed_seq.spawn(2))
    frames = [sim.raycast_scan(scen.world, scen.trajectory, k * spec.scan_period, spec, scan_rng)
              for k in range(cfg.n_scans)]
    noise = sim.ImuNoise(cfg.accel_noise, cfg.gyro_noise)
    imu = sim.synthesize_imu(scen.trajectory, cfg.imu_rate, 0.0, scen.duration, noise=noise, rng=imu_rng)
    stamps = np.array([f.stamp for f in frames])
    gt = sim.ground_truth_poses(scen.trajectory, stamps)
    root = io.write_dataset(out, frames, imu, (stamps, gt))
    write_ply(world_mesh(scen.world), root / "world.ply")
    (root / "run.cfg").write_text(cfg.to_text())
    log.info("simulated %d scans, %d IMU samples into %s", len(frames), len(imu), root)
    return root
