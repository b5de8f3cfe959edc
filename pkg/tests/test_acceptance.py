"""End-to-end acceptance checks. Each test prints a single PASS/FAIL line."""
import time

import numpy as np
import pytest

from liorecon import sim
from liorecon.features import LidarFrame, deskew
from liorecon.geometry import Pose, so3_exp
from liorecon.imu import GravityModel, ImuBias, NavState, apply_delta, imu_motion, integrate_direct, preintegrate
from liorecon.imu import ImuSamples
from liorecon.pipeline import evaluation, io
from liorecon.pipeline.cli import main
from liorecon.pipeline.config import RunConfig
from liorecon.pipeline.odometry import run_odometry
from liorecon.pipeline.reconstruction import run_reconstruction
from liorecon.pipeline.simulate import simulate_dataset
from liorecon.posegraph import HessianSystem, edge_error, edge_jacobians, marginalize, read_graph, write_graph
from liorecon.registration import (
    Correspondences, EdgeCorrespondences, PlaneCorrespondences, residuals, residuals_and_jacobian,
)
from liorecon.tsdf import VoxelGrid, extract_mesh, read_ply, write_ply

import oracles

POISSON_CSV = "level,triangles,seconds\n6,16120,0.88\n8,215130,3.91\n10,3148301,35.59\n12,15593463,199.22\n"


@pytest.fixture
def report(capsys):
    def emit(criterion, ok, detail, elapsed, limit):
        ok = bool(ok) and elapsed < limit
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} [{criterion}] {detail} ({elapsed:.2f} s, limit {limit:g} s)")
        return ok
    return emit


def left_perturb(pose, d):
    return Pose.from_matrix(oracles.se3_matrix(d) @ pose.matrix())


def rel_err(J, Jn):
    return np.linalg.norm(J - Jn) / max(np.linalg.norm(Jn), 1e-300)


# 1 -----------------------------------------------------------------------------------

def test_efficiency_factor_reproduction(tmp_path, capsys, report):
    t0 = time.perf_counter()
    table = tmp_path / "poisson.csv"
    table.write_text(POISSON_CSV)
    code = main(["metrics", "--table", str(table)])
    lines = capsys.readouterr().out.splitlines()
    rows = [l.split(",") for l in lines[1:-1]]
    es = {(float(a), float(b)): float(e) for a, b, _, _, e in rows}
    want = {(6, 8): 3.00, (8, 10): 1.61, (10, 12): 0.88}
    errs = [abs(es[k] - v) for k, v in want.items()]
    best = lines[-1] == "best,10"
    crossing = es[(8, 10)] > 1.0 > es[(10, 12)]
    elapsed = time.perf_counter() - t0
    detail = "efficiency " + ", ".join(f"{a:g}->{b:g}={e:.3f}" for (a, b), e in es.items()) + f", {lines[-1]}"
    assert report("efficiency factors", code == 0 and max(errs) <= 0.02 and best and crossing, detail, elapsed, 1.0)


# 2 -----------------------------------------------------------------------------------

def random_correspondences(rng, n=15):
    a = rng.normal(0, 3, (n, 3))
    normal = rng.normal(size=(n, 3))
    coeffs = np.c_[normal / np.linalg.norm(normal, axis=1, keepdims=True), rng.normal(0, 2, n)]
    return Correspondences(EdgeCorrespondences(rng.normal(0, 3, (n, 3)), a, a + rng.normal(0, 1, (n, 3))),
                           PlaneCorrespondences(rng.normal(0, 3, (n, 3)), coeffs))


def test_jacobian_suite(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_graph, worst_graph_small, worst_reg = 0.0, 0.0, 0.0
    for k in range(200):
        Ti = Pose.from_matrix(oracles.random_transform(rng, 3.0))
        Tj = Pose.from_matrix(oracles.random_transform(rng, 3.0))
        for noise, exact in ((0.5, True), (1e-3, False)):
            meas = left_perturb(Ti.inverse() @ Tj, rng.normal(0, noise, 6))
            A, B = edge_jacobians(edge_error(meas, Ti, Tj), Tj, exact)
            An = oracles.numeric_jacobian(lambda d: edge_error(meas, left_perturb(Ti, d), Tj), np.zeros(6), 1e-6)
            Bn = oracles.numeric_jacobian(lambda d: edge_error(meas, Ti, left_perturb(Tj, d)), np.zeros(6), 1e-6)
            err = max(rel_err(A, An), rel_err(B, Bn))
            if exact:
                worst_graph = max(worst_graph, err)
            else:
                worst_graph_small = max(worst_graph_small, err)

        corr = random_correspondences(rng)
        pose = Pose.from_matrix(oracles.random_transform(rng, 2.0))
        _, J = residuals_and_jacobian(pose, corr)
        Jn = oracles.numeric_jacobian(lambda d: residuals(left_perturb(pose, d), corr), np.zeros(6), 1e-6)
        worst_reg = max(worst_reg, rel_err(J, Jn))
    elapsed = time.perf_counter() - t0
    ok = max(worst_graph, worst_graph_small, worst_reg) < 1e-5
    detail = (f"worst relative error: graph edges {worst_graph:.1e} (generic), {worst_graph_small:.1e} "
              f"(first-order, small error), registration {worst_reg:.1e}; 200 instances each")
    assert report("Jacobians", ok, detail, elapsed, 10.0)


# 3 -----------------------------------------------------------------------------------

def test_marginalization_exactness(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 21))
        H = oracles.random_spd(rng, 6 * n, 1e3)
        b = rng.normal(size=6 * n)
        ids = list(range(n))
        marg = list(rng.choice(ids, int(rng.integers(1, n)), replace=False))
        prior = marginalize(HessianSystem(H, b, ids), marg)
        keep = np.concatenate([np.arange(6 * k, 6 * k + 6) for k in prior.ids])
        worst = max(worst, np.abs(np.linalg.solve(prior.H, prior.b) - np.linalg.solve(H, b)[keep]).max())

    H = np.kron(np.array([[2.0, 1.0], [1.0, 2.0]]), np.eye(6))
    b = np.kron(np.ones(2), np.ones(6))
    demo = marginalize(HessianSystem(H, b, [0, 1]), [0])
    x_r = np.linalg.solve(demo.H, demo.b)
    demo_ok = (np.allclose(demo.H, 1.5 * np.eye(6), atol=1e-15) and np.allclose(demo.b, 0.5, atol=1e-15)
               and np.allclose(x_r, 1 / 3, atol=1e-15))
    elapsed = time.perf_counter() - t0
    detail = (f"max |reduced - full| = {worst:.1e} over 50 systems; "
              f"2x2 demo (reduced H 1.5, b 0.5, solution 1/3): {demo_ok}")
    assert report("marginalization", worst < 1e-9 and demo_ok, detail, elapsed, 5.0)


# 4 -----------------------------------------------------------------------------------

def smooth_stream(rng, duration=1.0, rate=200.0):
    t = np.arange(int(round(duration * rate)) + 1) / rate
    acc = rng.normal(0, 1.0, 3) + np.zeros((len(t), 3))
    gyr = rng.normal(0, 0.3, 3) + np.zeros((len(t), 3))
    for _ in range(3):
        f, ph = rng.uniform(0.2, 3.0), rng.uniform(0, 2 * np.pi, 3)
        acc += rng.normal(0, 1.0, 3) * np.sin(2 * np.pi * f * t[:, None] + ph)
        gyr += rng.normal(0, 0.4, 3) * np.sin(2 * np.pi * f * t[:, None] + ph)
    return ImuSamples(t, acc + [0, 0, 9.81], gyr)


def random_state(rng):
    return NavState(Pose(so3_exp(rng.normal(size=3)), rng.normal(0, 10, 3)), rng.normal(0, 2, 3))


def test_preintegration_equivalence(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    g = GravityModel()
    worst_pos, worst_anchor = 0.0, 0.0
    for _ in range(100):
        s = smooth_stream(rng)
        bias = ImuBias(rng.normal(0, 0.05, 3), rng.normal(0, 0.005, 3))
        delta = preintegrate(s, bias)
        dt = s.end - s.start
        ref = None
        for _ in range(2):
            st0 = random_state(rng)
            direct = integrate_direct(st0, s, bias, g)
            pre = apply_delta(st0, delta, g)
            worst_pos = max(worst_pos, np.linalg.norm(pre.pose.translation - direct.pose.translation))
            # body-frame increments recovered from the direct run must not depend on the start state
            R0 = st0.pose.R
            alpha = R0.T @ (direct.pose.translation - st0.pose.translation - st0.velocity * dt - 0.5 * g.g * dt * dt)
            beta = R0.T @ (direct.velocity - st0.velocity - g.g * dt)
            rel = np.r_[alpha, beta, (R0.T @ direct.pose.R).ravel()]
            if ref is None:
                ref = rel
            else:
                worst_anchor = max(worst_anchor, np.abs(rel - ref).max())
    elapsed = time.perf_counter() - t0
    detail = f"max position gap {worst_pos:.1e} m over 100 streams; anchor dependence {worst_anchor:.1e}"
    assert report("preintegration", worst_pos < 1e-6 and worst_anchor < 1e-9, detail, elapsed, 10.0)


# 5 -----------------------------------------------------------------------------------

def test_deskew_recovery(report):
    t0 = time.perf_counter()
    world = sim.plane((4.0, 0, 0), (-1.0, 0, 0), 100.0)
    traj = sim.RotatingPlatform(1.0, duration=2.0)
    spec = sim.SensorSpec()
    frame = sim.raycast_scan(world, traj, 0.5, spec)
    start = frame.stamp - frame.period
    imu = sim.synthesize_imu(traj, spec.imu_rate, 0.0, 2.0)
    anchor = NavState(traj.pose(start), traj.velocity(start)[0])
    out = deskew(frame, imu_motion(anchor, imu.window(start, frame.stamp)))
    before = oracles.plane_fit_rms(frame.points)
    after = oracles.plane_fit_rms(out.points)
    elapsed = time.perf_counter() - t0
    detail = f"plane-fit RMS {before:.3e} m before, {after:.3e} m after deskew (ratio {before / after:.0f})"
    assert report("deskew", after < 1e-3 and before >= 50 * after, detail, elapsed, 5.0)


# 6 -----------------------------------------------------------------------------------

def test_loop_odometry(tmp_path, report):
    t0 = time.perf_counter()
    cfg = RunConfig(world="loop", trajectory="loop", n_scans=200, loop_perimeter=50.0, rings=16,
                    range_noise=0.01, seed=0)
    root = simulate_dataset(cfg, tmp_path / "loop")
    t_sim = time.perf_counter() - t0
    t1 = time.perf_counter()
    res = run_odometry(cfg, io.Dataset.open(root, cfg.scan_period))
    elapsed = time.perf_counter() - t1
    gs, gp = io.read_trajectory(root / "groundtruth.txt")
    ate = evaluation.compute_ate(res.stamps, res.poses, gs, gp)
    raw = evaluation.compute_ate(res.stamps, res.raw_poses, gs, gp)
    detail = (f"ATE {ate:.4f} m after optimization vs {raw:.4f} m raw odometry, {len(res.loops)} loop edges, "
              f"{len(res.keyframes)} keyframes, {len(res.skipped)} skipped; simulation {t_sim:.1f} s")
    assert report("loop odometry", ate < 0.05 and ate < raw, detail, elapsed, 60.0)


# 7 -----------------------------------------------------------------------------------

def test_reconstruction_fidelity(report):
    t0 = time.perf_counter()
    world = sim.room_world()
    traj = sim.ArcTrajectory((0.0, 0.0, 0.0), 1.5, 1.0)
    spec = sim.SensorSpec(noise_sigma=0.01)
    rng = np.random.default_rng(3)
    stamps, poses, clouds = [], [], []
    for k in range(30):
        f = sim.raycast_scan(world, traj, 0.1 * k, spec, rng)
        d = deskew(f, lambda t: (traj.rotation_matrices(t), traj.position(t)))
        P = traj.pose(f.stamp)
        stamps.append(f.stamp)
        poses.append(P)
        clouds.append(LidarFrame(d.stamp, P @ d.points, d.ring, d.rel_time, d.period))
    cfg = RunConfig(voxel_size=0.1)
    mesh = run_reconstruction(stamps, poses, clouds, cfg)
    haus = evaluation.hausdorff_to_world(mesh.vertices, mesh.triangles, world.triangles)

    voxel, radius = 0.05, 1.0
    grid = VoxelGrid(voxel)
    n = int(np.ceil((radius + grid.truncation) / voxel)) + 1
    r = np.arange(-n, n + 1)
    idx = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
    grid.set_voxels(idx, np.linalg.norm(idx * voxel, axis=1) - radius)
    sphere = extract_mesh(grid)
    sphere_err = np.abs(np.linalg.norm(sphere.vertices, axis=1) - radius).max()
    elapsed = time.perf_counter() - t0
    ok = len(mesh) > 0 and haus <= 0.2 and len(sphere) > 0 and sphere_err <= voxel
    detail = (f"room mesh Hausdorff {haus:.3f} m ({len(mesh)} triangles); "
              f"sphere max vertex error {sphere_err:.4f} m at voxel {voxel}")
    assert report("reconstruction", ok, detail, elapsed, 30.0)


# 8 -----------------------------------------------------------------------------------

def _run_all(base, cfg_path):
    c = ["--config", str(cfg_path)]
    assert main(["simulate", *c, "--output", str(base / "ds")]) == 0
    assert main(["odometry", str(base / "ds"), *c, "--output", str(base / "run")]) == 0
    assert main(["reconstruct", str(base / "run"), *c]) == 0


def _round_trips(base):
    """Re-ingest every emitted file; returns the names that did not survive."""
    bad = []
    ds, run = base / "ds", base / "run"
    for manifest, period in ((ds / "scans.csv", 0.1), (run / "clouds.csv", 0.1)):
        entries = io.read_manifest(manifest)
        io.write_manifest(base / "m.csv", entries)
        if (base / "m.csv").read_bytes() != manifest.read_bytes():
            bad.append(manifest.name)
        for e in entries:
            src = manifest.parent / e.file
            io.write_scan(base / "s.lscan", io.read_scan(src, period))
            if (base / "s.lscan").read_bytes() != src.read_bytes():
                bad.append(e.file)
    imu = io.read_imu(ds / "imu.csv")
    io.write_imu(base / "imu.csv", imu)
    if (base / "imu.csv").read_bytes() != (ds / "imu.csv").read_bytes():
        bad.append("imu.csv")
    for traj in (ds / "groundtruth.txt", run / "trajectory.txt", run / "odometry_raw.txt"):
        stamps, poses = io.read_trajectory(traj)
        io.write_trajectory(base / "t.txt", stamps, poses)
        text = np.loadtxt(traj, ndmin=2)
        quat = np.array([np.r_[p.rotation.q[1:], p.rotation.q[0]] for p in poses])
        exact = (np.array_equal(text[:, 0], stamps)
                 and np.array_equal(text[:, 1:4], np.array([p.translation for p in poses]))
                 and np.abs(text[:, 4:] - quat).max() <= 1e-9)
        if not exact or (base / "t.txt").read_bytes() != traj.read_bytes():
            bad.append(traj.name)
    write_graph(read_graph(run / "graph.txt"), base / "g.txt")
    if (base / "g.txt").read_bytes() != (run / "graph.txt").read_bytes():
        bad.append("graph.txt")
    for ply in (run / "mesh.ply", ds / "world.ply"):
        write_ply(read_ply(ply), base / "m.ply")
        if (base / "m.ply").read_bytes() != ply.read_bytes():
            bad.append(ply.name)
    cfg_text = (ds / "run.cfg").read_text()
    if RunConfig.from_text(cfg_text).to_text() != cfg_text:
        bad.append("run.cfg")
    return bad


def test_determinism_and_round_trip(tmp_path, report):
    t0 = time.perf_counter()
    cfg = RunConfig(world="room", trajectory="circle", speed=1.0, n_scans=40, range_noise=0.01, seed=17)
    cfg_path = tmp_path / "run.cfg"
    cfg_path.write_text(cfg.to_text())
    _run_all(tmp_path / "a", cfg_path)
    _run_all(tmp_path / "b", cfg_path)
    outputs = ["run/trajectory.txt", "run/odometry_raw.txt", "run/graph.txt", "run/mesh.ply", "ds/imu.csv"]
    differ = [o for o in outputs if (tmp_path / "a" / o).read_bytes() != (tmp_path / "b" / o).read_bytes()]
    lossy = _round_trips(tmp_path / "a")
    elapsed = time.perf_counter() - t0
    detail = (f"repeat-run differences: {differ or 'none'}; lossy round trips: {lossy or 'none'}")
    assert report("determinism", not differ and not lossy, detail, elapsed, 60.0)
