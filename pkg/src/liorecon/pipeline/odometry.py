"""Scan-by-scan LiDAR-inertial odometry with a keyframe pose graph.

Per scan: propagate the IMU from the previous scan end, deskew with the
propagated motion, extract features, align them against a local map of recent
keyframes, and update the velocity estimate. Keyframes enter a sliding-window
graph (registration and IMU edges, Schur marginalization of the oldest node)
and a full graph that also collects loop edges for a final global solve.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..features import FeatureSet, LidarFrame, deskew, extract_features, extract_map_features
from ..geometry import Pose, pose_distance
from ..imu import (
    GravityModel, ImuBias, ImuSamples, NavState, apply_delta, imu_motion, pose_at, preintegrate,
)
from ..posegraph import PoseGraph, marginalize_node, optimize, write_graph
from ..registration import FeatureMap, gauss_newton_align
from . import io
from .config import RunConfig

log = logging.getLogger(__name__)


class OdometryAborted(RuntimeError):
    pass


@dataclass
class Keyframe:
    id: int
    scan_index: int
    stamp: float
    pose: Pose
    velocity: np.ndarray
    features: FeatureSet       # sparse query features, sensor frame
    map_features: FeatureSet   # dense map features, sensor frame
    cloud: LidarFrame          # deskewed, sensor frame at ``stamp``


@dataclass
class OdometryResult:
    keyframes: list
    poses: list                # globally optimized keyframe poses
    raw_poses: list            # keyframe poses before the global solve
    scan_stamps: np.ndarray
    scan_poses: list           # per-scan odometry estimate
    skipped: list = field(default_factory=list)
    loops: list = field(default_factory=list)
    graph: PoseGraph | None = None

    @property
    def stamps(self) -> np.ndarray:
        return np.array([k.stamp for k in self.keyframes])


def _rotation_deg(a: Pose, b: Pose) -> float:
    return float(np.degrees(pose_distance(a, b)[1]))


class _Odometer:
    def __init__(self, cfg: RunConfig, imu: ImuSamples):
        self.cfg = cfg
        self.imu = imu
        # a dropout of several nominal sample periods counts as missing coverage
        self.max_gap = 5.0 * float(np.median(np.diff(imu.t))) if len(imu) > 1 else None
        self.gravity = GravityModel()
        self.bias = ImuBias()
        self.fcfg = cfg.features()
        self.rcfg = cfg.registration()
        self.nav: NavState | None = None
        self.nav_time: float | None = None
        self.keyframes: list[Keyframe] = []
        self.window = PoseGraph()
        self.full = PoseGraph()
        self.loops = []
        self.skipped = []
        self.consecutive_fail = 0
        self.scan_stamps, self.scan_poses = [], []
        self._map: FeatureMap | None = None

    # -- IMU --------------------------------------------------------------
    def _imu_window(self, frame: LidarFrame):
        """IMU samples from the current state time to the scan end, or None."""
        start = frame.stamp - frame.period
        if self.nav is None:
            if len(self.imu) == 0 or self.imu.start > start + 1e-9:
                return None
            self.nav = NavState.at_rest()
            self.nav_time = self.imu.start
        if self.imu.covers(self.nav_time, frame.stamp, self.max_gap):
            return self.imu.window(self.nav_time, frame.stamp)
        if self.imu.covers(start, frame.stamp, self.max_gap):
            # IMU gap before this scan: coast at constant velocity to its start
            gap = start - self.nav_time
            p = self.nav.pose.translation + self.nav.velocity * gap
            self.nav = NavState(Pose(self.nav.pose.rotation, p), self.nav.velocity)
            self.nav_time = start
            return self.imu.window(start, frame.stamp)
        return None

    # -- local map --------------------------------------------------------
    def _local_map(self) -> FeatureMap:
        if self._map is None:
            recent = self.keyframes[-self.cfg.local_map_keyframes:]
            self._map = FeatureMap.from_keyframes([(k.pose, k.map_features) for k in recent])
        return self._map

    # -- per scan ---------------------------------------------------------
    def process(self, index: int, frame: LidarFrame) -> None:
        samples = self._imu_window(frame)
        if samples is None:
            log.warning("scan %d at %.3f s: no IMU coverage, skipped", index, frame.stamp)
            self.skipped.append(index)
            return
        motion = imu_motion(self.nav, samples, self.bias, self.gravity)
        predicted = pose_at(frame.stamp, self.nav, samples, self.bias, self.gravity)
        cloud = deskew(frame, motion)
        feats = extract_features(cloud, self.fcfg)

        pose = predicted
        n_corr = 0
        if self.keyframes:
            res = gauss_newton_align(feats, self._local_map(), predicted, self.rcfg)
            if res.converged and not res.degenerate:
                pose = res.pose
                n_corr = res.n_correspondences
                self.consecutive_fail = 0
            else:
                self.consecutive_fail += 1
                self.skipped.append(index)
                log.warning("scan %d: registration failed (%d corr, degenerate=%s); IMU-only pose",
                            index, res.n_correspondences, res.degenerate)
                if self.consecutive_fail > self.cfg.max_skips:
                    raise OdometryAborted(f"{self.consecutive_fail} consecutive registration failures")

        delta = preintegrate(samples, self.bias)
        velocity = self._update_velocity(pose, delta)
        self.nav = NavState(pose, velocity)
        self.nav_time = frame.stamp
        self.scan_stamps.append(frame.stamp)
        self.scan_poses.append(pose)

        if self._is_keyframe(pose):
            self._add_keyframe(index, frame.stamp, pose, velocity, feats, cloud, max(n_corr, 1))

    def _update_velocity(self, pose: Pose, delta) -> np.ndarray:
        """Velocity at the scan end consistent with the registered positions.

        Solving the position equation of ``apply_delta`` for the start velocity
        and propagating it through the velocity equation.
        """
        dt = delta.dt
        if dt <= 0:
            return self.nav.velocity.copy()
        g = self.gravity.g
        R0 = self.nav.pose.R
        p0 = self.nav.pose.translation
        v0 = (pose.translation - p0 - 0.5 * g * dt * dt - R0 @ delta.alpha) / dt
        return v0 + g * dt + R0 @ delta.beta

    def _is_keyframe(self, pose: Pose) -> bool:
        if not self.keyframes:
            return True
        last = self.keyframes[-1].pose
        trans, _ = pose_distance(last, pose)
        return trans > self.cfg.keyframe_translation or _rotation_deg(last, pose) > self.cfg.keyframe_rotation

    # -- keyframes and graph ---------------------------------------------
    def _add_keyframe(self, index, stamp, pose, velocity, feats, cloud, n_corr):
        kid = len(self.keyframes)
        kf = Keyframe(kid, index, stamp, pose, velocity, feats, extract_map_features(cloud, self.fcfg), cloud)
        first = kid == 0
        self.window.add_node(kid, pose, fixed=first)
        self.full.add_node(kid, pose, fixed=first)
        if not first:
            prev = self.keyframes[-1]
            self._add_edge(prev.id, kid, prev.pose.inverse() @ pose, n_corr * np.eye(6), "odom")
            if self.imu.covers(prev.stamp, stamp, self.max_gap):
                delta = preintegrate(self.imu.window(prev.stamp, stamp), self.bias)
                pred = apply_delta(NavState(prev.pose, prev.velocity), delta, self.gravity)
                self._add_edge(prev.id, kid, prev.pose.inverse() @ pred.pose, np.eye(6), "imu")
        self.keyframes.append(kf)
        self._map = None

        self._close_loop(kf)
        if not first:
            optimize(self.window, max_iters=5)
            for k, node in self.window.nodes.items():
                self.keyframes[k].pose = node.pose
            self.nav = NavState(kf.pose, self.nav.velocity)
        while len(self.window.nodes) > self.cfg.window_size:
            marginalize_node(self.window, min(self.window.nodes))

    def _add_edge(self, i, j, meas, info, kind, window=True):
        self.full.add_edge(i, j, meas, info, kind)
        if window and i in self.window.nodes and j in self.window.nodes:
            self.window.add_edge(i, j, meas, info, kind)

    def _close_loop(self, kf: Keyframe) -> None:
        cfg = self.cfg
        older = self.keyframes[:max(0, kf.id - cfg.loop_min_separation + 1)]
        if not older:
            return
        dist = np.array([np.linalg.norm(k.pose.translation - kf.pose.translation) for k in older])
        best = int(np.argmin(dist))
        if dist[best] > cfg.loop_radius:
            return
        cand = older[best]
        lo, hi = max(0, cand.id - 2), min(len(older), cand.id + 3)
        fmap = FeatureMap.from_keyframes([(k.pose, k.map_features) for k in self.keyframes[lo:hi]])
        res = gauss_newton_align(kf.features, fmap, kf.pose, self.rcfg)
        n = res.n_correspondences
        if not res.converged or res.degenerate or n < 10 or res.cost / n > cfg.loop_max_cost:
            log.info("keyframe %d: loop candidate %d rejected", kf.id, cand.id)
            return
        meas = cand.pose.inverse() @ res.pose
        self._add_edge(cand.id, kf.id, meas, n * np.eye(6), "loop")
        self.loops.append((cand.id, kf.id))
        log.info("keyframe %d: loop closed with %d (%d correspondences)", kf.id, cand.id, n)

    def finish(self) -> OdometryResult:
        raw = [k.pose for k in self.keyframes]
        for k in self.keyframes:
            self.full.nodes[k.id].pose = k.pose
        if len(self.keyframes) > 1:
            rep = optimize(self.full, max_iters=self.cfg.graph_iters)
            log.info("global optimization: cost %.4g -> %.4g in %d iterations",
                     rep.initial_cost, rep.final_cost, rep.iterations)
        poses = [self.full.nodes[k.id].pose for k in self.keyframes]
        for k, p in zip(self.keyframes, poses):
            k.pose = p
        return OdometryResult(self.keyframes, poses, raw, np.array(self.scan_stamps), self.scan_poses,
                              self.skipped, self.loops, self.full)


def run_odometry(config: RunConfig, dataset: io.Dataset | None = None) -> OdometryResult:
    dataset = dataset or io.Dataset.open(config.dataset, config.scan_period)
    odo = _Odometer(config, dataset.imu)
    for n, frame in enumerate(dataset.frames()):
        odo.process(n, frame)
    log.info("odometry: %d scans, %d keyframes, %d skipped, %d loops",
             len(dataset), len(odo.keyframes), len(odo.skipped), len(odo.loops))
    return odo.finish()


def write_odometry(result: OdometryResult, out) -> Path:
    """``trajectory.txt``, ``odometry_raw.txt``, ``graph.txt`` and world-frame
    keyframe clouds under ``clouds/`` with a ``clouds.csv`` manifest."""
    out = Path(out)
    (out / "clouds").mkdir(parents=True, exist_ok=True)
    stamps = result.stamps
    io.write_trajectory(out / "trajectory.txt", stamps, result.poses)
    io.write_trajectory(out / "odometry_raw.txt", stamps, result.raw_poses)
    if result.graph is not None:
        write_graph(result.graph, out / "graph.txt")
    entries = []
    for kf, pose in zip(result.keyframes, result.poses):
        name = f"clouds/cloud_{kf.id:06d}.lscan"
        c = kf.cloud
        io.write_scan(out / name, LidarFrame(c.stamp, pose @ c.points, c.ring, c.rel_time, c.period))
        entries.append(io.ManifestEntry(kf.id, kf.stamp, name))
    io.write_manifest(out / "clouds.csv", entries)
    return out
