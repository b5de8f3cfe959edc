import numpy as np
import pytest

from liorecon import sim
from liorecon.features import LidarFrame
from liorecon.geometry import Pose, pose_distance
from liorecon.imu import ImuSamples
from liorecon.pipeline import evaluation, io
from liorecon.pipeline.cli import main
from liorecon.pipeline.config import ConfigError, RunConfig
from liorecon.pipeline.evaluation import (
    best_level, compute_ate, efficiency_factors, read_table, table_factors,
)
from liorecon.pipeline.odometry import run_odometry
from liorecon.pipeline.reconstruction import run_reconstruction
from liorecon.pipeline.simulate import simulate_dataset
from liorecon.tsdf import read_ply

import oracles

POISSON = [(6, 16120, 0.88), (8, 215130, 3.91), (10, 3148301, 35.59), (12, 15593463, 199.22)]


def random_poses(rng, n):
    return [Pose.from_matrix(oracles.random_transform(rng)) for _ in range(n)]


def small_config(**kw):
    base = dict(world="room", n_scans=6, points_per_ring=300, range_noise=0.0, accel_noise=0.0, gyro_noise=0.0)
    base.update(kw)
    return RunConfig(**base)


# -- file formats -------------------------------------------------------------------

def test_scan_round_trip_is_bit_exact(tmp_path, rng):
    frame = sim.raycast_scan(sim.room_world(), sim.RotatingPlatform(1.0), 0.2,
                             sim.SensorSpec(points_per_ring=100, noise_sigma=0.01), rng)
    path = tmp_path / io.scan_name(3)
    io.write_scan(path, frame)
    back = io.read_scan(path)
    again = tmp_path / "again.lscan"
    io.write_scan(again, back)
    assert path.read_bytes() == again.read_bytes()
    assert back.stamp == frame.stamp
    assert np.array_equal(back.points, frame.points.astype(np.float32))
    assert np.array_equal(back.ring, frame.ring)
    assert np.array_equal(back.rel_time, frame.rel_time.astype(np.float32))
    raw = path.read_bytes()
    assert raw[:4] == b"LSCN" and len(raw) == 20 + 20 * len(frame)


def test_scan_header_errors(tmp_path):
    frame = LidarFrame(1.0, np.ones((2, 3)), np.zeros(2, int), np.zeros(2))
    good = tmp_path / "good.lscan"
    io.write_scan(good, frame)
    raw = good.read_bytes()
    cases = {
        "magic": b"XSCN" + raw[4:],
        "version": raw[:4] + (2).to_bytes(4, "little") + raw[8:],
        "count": raw[:8] + (3).to_bytes(4, "little") + raw[12:],
        "short": raw[:10],
    }
    for name, data in cases.items():
        p = tmp_path / f"{name}.lscan"
        p.write_bytes(data)
        with pytest.raises(io.FormatError):
            io.read_scan(p)


def test_manifest_and_imu_round_trip(tmp_path, rng):
    entries = [io.ManifestEntry(k, 0.1 * (k + 1), io.scan_name(k)) for k in range(5)]
    io.write_manifest(tmp_path / "scans.csv", entries)
    assert io.read_manifest(tmp_path / "scans.csv") == entries
    assert (tmp_path / "scans.csv").read_text().splitlines()[0] == "index,stamp,file"

    t = np.cumsum(rng.uniform(0.001, 0.01, 50))
    imu = ImuSamples(t, rng.normal(size=(50, 3)), rng.normal(size=(50, 3)))
    io.write_imu(tmp_path / "imu.csv", imu)
    back = io.read_imu(tmp_path / "imu.csv")
    assert np.array_equal(back.t, imu.t)
    assert np.array_equal(back.accel, imu.accel) and np.array_equal(back.gyro, imu.gyro)


def test_manifest_rejects_unordered_stamps(tmp_path):
    p = tmp_path / "scans.csv"
    p.write_text("index,stamp,file\n0,0.2,a\n1,0.1,b\n")
    with pytest.raises(io.FormatError):
        io.read_manifest(p)


def test_trajectory_round_trip(tmp_path, rng):
    stamps = np.cumsum(rng.uniform(0.05, 0.2, 20)) + 1000.0
    poses = random_poses(rng, 20)
    io.write_trajectory(tmp_path / "traj.txt", stamps, poses)
    lines = (tmp_path / "traj.txt").read_text().splitlines()
    assert len(lines) == 20 and all(len(l.split()) == 8 for l in lines)
    s2, p2 = io.read_trajectory(tmp_path / "traj.txt")
    # 9 significant digits
    assert np.allclose(s2, stamps, rtol=1e-8, atol=0)
    for a, b in zip(poses, p2):
        dt, dr = pose_distance(a, b)
        assert dt < 1e-7 * max(1.0, np.abs(a.translation).max()) and dr < 1e-7
    io.write_trajectory(tmp_path / "again.txt", s2, p2)
    assert (tmp_path / "again.txt").read_text() == (tmp_path / "traj.txt").read_text()
    with pytest.raises(ValueError):
        io.write_trajectory(tmp_path / "bad.txt", [1.0, 1.0], poses[:2])


def test_tum_line_layout():
    p = Pose.from_matrix(np.block([[oracles.so3_matrix([0.0, 0.0, np.pi / 2]), np.c_[[1.0, -2.0, 3.0]]],
                                   [np.zeros((1, 3)), np.ones((1, 1))]]))
    fields = io.format_tum_line(12.5, p).split()
    vals = [float(v) for v in fields]
    assert vals[:4] == pytest.approx([12.5, 1.0, -2.0, 3.0], abs=1e-8)
    # qx qy qz qw
    assert vals[4:] == pytest.approx([0.0, 0.0, np.sqrt(0.5), np.sqrt(0.5)], abs=1e-8)


# -- config -------------------------------------------------------------------------

def test_config_text_round_trip():
    cfg = RunConfig(world="box", n_scans=17, voxel_size=0.05, binary_ply=True, plane_outlier=1e-3)
    assert RunConfig.from_text(cfg.to_text()) == cfg
    assert RunConfig.from_text("") == RunConfig()


def test_config_errors():
    with pytest.raises(ConfigError):
        RunConfig.from_text("no_such_key = 1\n")
    with pytest.raises(ConfigError):
        RunConfig.from_text("voxel_size 0.1\n")
    with pytest.raises(ConfigError):
        RunConfig.from_text("voxel_size = -0.1\n")
    with pytest.raises(ConfigError):
        RunConfig.from_text("world = moon\n")
    with pytest.raises(ConfigError):
        RunConfig.from_text("n_scans = many\n")
    cfg = RunConfig.from_text("# comment\n\nn_scans = 12  \n", seed=4)
    assert cfg.n_scans == 12 and cfg.seed == 4


def test_config_feeds_module_settings():
    cfg = RunConfig(huber=0.2, plane_outlier=1e-3, rings=8, range_noise=0.03)
    assert cfg.registration().huber == 0.2 and cfg.registration().plane_outlier == 1e-3
    assert cfg.sensor().rings == 8 and cfg.sensor().noise_sigma == 0.03


# -- odometry -----------------------------------------------------------------------

def test_static_dataset_gives_identity(tmp_path):
    # noise-free scans: the plane tolerance sits at the noise floor
    cfg = small_config(trajectory="static", plane_outlier=1e-4)
    ds = io.Dataset.open(simulate_dataset(cfg, tmp_path / "ds"))
    res = run_odometry(cfg, ds)
    assert not res.skipped
    assert len(res.keyframes) >= 1 and len(res.scan_poses) == cfg.n_scans
    for p in list(res.poses) + list(res.scan_poses):
        dt, dr = pose_distance(p, Pose())
        assert dt < 1e-6 and dr < 1e-6


def test_static_dataset_default_tolerance_stays_close(tmp_path):
    cfg = small_config(trajectory="static")
    res = run_odometry(cfg, io.Dataset.open(simulate_dataset(cfg, tmp_path / "ds")))
    for p in res.scan_poses:
        assert max(pose_distance(p, Pose())) < 1e-2


def test_missing_imu_skips_scan(tmp_path):
    cfg = small_config(trajectory="line", speed=0.5, n_scans=8)
    root = simulate_dataset(cfg, tmp_path / "ds")
    imu = io.read_imu(root / "imu.csv")
    keep = (imu.t < 0.32) | (imu.t > 0.38)
    io.write_imu(root / "imu.csv", ImuSamples(imu.t[keep], imu.accel[keep], imu.gyro[keep]))
    ds = io.Dataset.open(root)
    res = run_odometry(cfg, ds)
    assert res.skipped == [3]
    assert len(res.scan_poses) == cfg.n_scans - 1
    gs, gp = io.read_trajectory(root / "groundtruth.txt")
    last = gp[int(np.argmin(np.abs(gs - res.scan_stamps[-1])))]
    assert pose_distance(res.scan_poses[-1], last)[0] < 0.05


# -- reconstruction -----------------------------------------------------------------

def test_single_plane_cloud_mesh_is_flat():
    cfg = RunConfig(voxel_size=0.1)
    frame = sim.raycast_scan(sim.plane((3.0, 0, 0), (-1.0, 0, 0), 6.0), sim.StaticTrajectory(), 0.0,
                             sim.SensorSpec())
    mesh = run_reconstruction([frame.stamp], [Pose()], [frame], cfg)
    assert len(mesh) > 100
    assert oracles.plane_fit_rms(mesh.vertices) < cfg.voxel_size / 2


def test_zero_clouds_and_empty_trajectory(caplog):
    cfg = RunConfig()
    mesh = run_reconstruction([0.1], [Pose()], [], cfg)
    assert len(mesh) == 0
    assert "no clouds" in caplog.text
    with pytest.raises(ValueError):
        run_reconstruction([], [], [], cfg)
    frame = LidarFrame(5.0, np.ones((1, 3)), np.zeros(1, int), np.zeros(1))
    with pytest.raises(ValueError):
        run_reconstruction([0.1], [Pose()], [frame], cfg)


# -- evaluation ---------------------------------------------------------------------

def test_ate_examples(rng):
    stamps = np.arange(20) * 0.1
    poses = random_poses(rng, 20)
    assert compute_ate(stamps, poses, stamps, poses) == pytest.approx(0.0, abs=1e-9)
    assert compute_ate(stamps, poses, stamps, poses, align=False) == 0.0
    d = np.array([0.3, -0.4, 1.2])
    shifted = [Pose(p.rotation, p.translation + d) for p in poses]
    assert compute_ate(stamps, shifted, stamps, poses, align=False) == pytest.approx(np.linalg.norm(d), rel=1e-12)
    assert compute_ate(stamps, shifted, stamps, poses) < 1e-9
    with pytest.raises(ValueError):
        compute_ate(stamps, poses, stamps + 5.0, poses)


def test_ate_matches_nearest_stamps(rng):
    gs = np.arange(50) * 0.01
    gp = random_poses(rng, 50)
    es = gs[::5] + 0.002
    ep = gp[::5]
    assert compute_ate(es, ep, gs, gp, align=False) == 0.0


def test_efficiency_factor_examples():
    f = efficiency_factors(215130, 16120, 3.91, 0.88)
    assert f.detail_ratio == pytest.approx(13.35, abs=0.01)
    assert f.time_ratio == pytest.approx(4.44, abs=0.01)
    assert f.efficiency == pytest.approx(3.00, abs=0.01) and f.worthwhile
    assert f.efficiency == f.detail_ratio / f.time_ratio
    f = efficiency_factors(15593463, 3148301, 199.22, 35.59)
    assert f.detail_ratio == pytest.approx(4.95, abs=0.01) and f.time_ratio == pytest.approx(5.60, abs=0.01)
    assert f.efficiency == pytest.approx(0.88, abs=0.01) and not f.worthwhile
    f = efficiency_factors(7, 7, 2.5, 2.5)
    assert (f.detail_ratio, f.time_ratio, f.efficiency) == (1.0, 1.0, 1.0)
    for bad in [(0, 1, 1, 1), (1, -1, 1, 1), (1, 1, 0, 1), (1, 1, 1, np.nan)]:
        with pytest.raises(ValueError):
            efficiency_factors(*bad)


def test_table_factors_and_best_level(tmp_path):
    p = tmp_path / "poisson.csv"
    p.write_text("level,triangles,seconds\n" + "".join(f"{l},{n},{t}\n" for l, n, t in reversed(POISSON)))
    rows = read_table(p)
    assert [r[0] for r in rows] == [6, 8, 10, 12]
    es = [f.efficiency for _, _, f in table_factors(rows)]
    assert es == pytest.approx([3.00, 1.61, 0.88], abs=0.01)
    assert best_level(rows) == 10
    bad = tmp_path / "bad.csv"
    bad.write_text("depth,count\n1,2\n")
    with pytest.raises(ValueError):
        read_table(bad)


# -- CLI ----------------------------------------------------------------------------

def test_cli_end_to_end(tmp_path, capsys):
    cfg = small_config(trajectory="rotate", yaw_rate=0.5, n_scans=5)
    (tmp_path / "run.cfg").write_text(cfg.to_text())
    c = ["--config", str(tmp_path / "run.cfg")]
    assert main(["simulate", *c, "--output", str(tmp_path / "ds")]) == 0
    assert main(["odometry", str(tmp_path / "ds"), *c, "--output", str(tmp_path / "run")]) == 0
    assert main(["reconstruct", str(tmp_path / "run"), *c]) == 0
    assert (tmp_path / "run" / "mesh.ply").exists()
    capsys.readouterr()
    assert main(["evaluate", str(tmp_path / "run" / "trajectory.txt"), str(tmp_path / "ds" / "groundtruth.txt"),
                 "--mesh", str(tmp_path / "run" / "mesh.ply"), "--world", str(tmp_path / "ds" / "world.ply")]) == 0
    out = capsys.readouterr().out.split()
    assert out[0] == "ate" and float(out[1]) < 0.05
    assert out[2] == "hausdorff" and float(out[3]) < 0.5


def test_cli_metrics(tmp_path, capsys):
    assert main(["metrics", "215130", "16120", "3.91", "0.88"]) == 0
    assert capsys.readouterr().out.splitlines()[-1] == "efficiency 3.0036"
    table = tmp_path / "t.csv"
    table.write_text("level,triangles,seconds\n" + "".join(f"{l},{n},{t}\n" for l, n, t in POISSON))
    assert main(["metrics", "--table", str(table), "--output", str(tmp_path / "out.txt")]) == 0
    text = (tmp_path / "out.txt").read_text().splitlines()
    assert text[0] == "from,to,detail_ratio,time_ratio,efficiency" and text[-1] == "best,10"


def test_cli_errors_exit_with_code_2(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = blue\n")
    assert main(["simulate", "--config", str(bad)]) == 2
    assert main(["metrics", "1", "2"]) == 2
    assert main(["metrics", "0", "1", "1", "1"]) == 2
    assert main(["odometry", str(tmp_path / "missing")]) == 2
    with pytest.raises(SystemExit):
        main(["fly"])


def test_odometry_then_reconstruction_degrades_gracefully(tmp_path):
    cfg = small_config(trajectory="circle", speed=1.0, n_scans=30, points_per_ring=900)
    root = simulate_dataset(cfg, tmp_path / "ds")
    res = run_odometry(cfg, io.Dataset.open(root))
    clouds = [LidarFrame(k.stamp, p @ k.cloud.points, k.cloud.ring, k.cloud.rel_time) for k, p in
              zip(res.keyframes, res.poses)]
    mesh = run_reconstruction(res.stamps, res.poses, clouds, cfg)
    gs, gp = io.read_trajectory(root / "groundtruth.txt")
    ate = compute_ate(res.stamps, res.poses, gs, gp)
    R, t = evaluation.alignment(res.stamps, res.poses, gs, gp)
    w = read_ply(root / "world.ply")
    haus = evaluation.hausdorff_to_world(mesh.vertices @ R.T + t, mesh.triangles, w.vertices[w.triangles])
    assert len(mesh) > 0
    assert haus <= ate + 2 * cfg.voxel_size

