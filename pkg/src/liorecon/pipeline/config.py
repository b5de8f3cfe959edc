"""Flat ``key = value`` run configuration.

Every key has a default and a valid range; loading a file with an unknown key
or an out-of-range value raises ``ConfigError``. ``#`` starts a comment.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from ..features import FeatureConfig
from ..registration import RegistrationConfig
from ..sim import SensorSpec


class ConfigError(ValueError):
    pass


def _opt(default, lo=None, hi=None, choices=None, doc=""):
    return dataclasses.field(default=default, metadata={"lo": lo, "hi": hi, "choices": choices, "doc": doc})


@dataclass
class RunConfig:
    # paths
    dataset: str = _opt("", doc="dataset directory (scans.csv, imu.csv)")
    output: str = _opt("", doc="output directory")
    seed: int = _opt(0, lo=0, doc="RNG seed for simulation noise")

    # simulation
    world: str = _opt("loop", choices=("loop", "room", "plane", "box"), doc="simulated world")
    trajectory: str = _opt("loop", choices=("loop", "static", "rotate", "line", "circle", "figure8"),
                           doc="simulated trajectory")
    n_scans: int = _opt(200, lo=1, doc="number of simulated scans")
    loop_perimeter: float = _opt(50.0, lo=10.0, doc="loop path length, m")
    speed: float = _opt(1.0, lo=0.0, doc="speed for line/circle/figure8, m/s")
    yaw_rate: float = _opt(1.0, doc="rotation rate for the rotating platform, rad/s")
    rings: int = _opt(16, lo=1, hi=256, doc="LiDAR scan lines")
    points_per_ring: int = _opt(900, lo=16, doc="beams per ring per sweep")
    vertical_fov: float = _opt(30.0, lo=0.0, hi=180.0, doc="vertical field of view, degrees")
    max_range: float = _opt(60.0, lo=1.0, doc="sensor max range, m")
    scan_period: float = _opt(0.1, lo=1e-3, hi=10.0, doc="sweep duration, s")
    range_noise: float = _opt(0.01, lo=0.0, hi=1.0, doc="range noise sigma, m")
    imu_rate: float = _opt(200.0, lo=1.0, doc="IMU sample rate, Hz")
    accel_noise: float = _opt(0.02, lo=0.0, doc="accelerometer noise sigma, m/s^2")
    gyro_noise: float = _opt(0.002, lo=0.0, doc="gyroscope noise sigma, rad/s")

    # features
    feature_window: int = _opt(5, lo=1, hi=50, doc="curvature half-window, points")
    sectors: int = _opt(6, lo=1, hi=64, doc="azimuth sectors per ring")
    edges_per_sector: int = _opt(2, lo=0, hi=100, doc="edge features per sector")
    planar_per_sector: int = _opt(4, lo=0, hi=100, doc="planar features per sector")
    edge_threshold: float = _opt(0.1, lo=0.0, doc="minimum curvature for an edge")
    planar_threshold: float = _opt(0.01, lo=0.0, doc="maximum curvature for a planar point")
    min_range: float = _opt(1.0, lo=0.0, doc="discard closer points, m")

    # registration
    reg_max_iters: int = _opt(30, lo=1, hi=1000, doc="registration iterations")
    huber: float = _opt(0.1, lo=1e-6, doc="Huber threshold, m")
    max_nn_dist: float = _opt(1.0, lo=1e-3, doc="max correspondence distance, m")
    degeneracy_ratio: float = _opt(1e-6, lo=0.0, hi=1.0, doc="min/max eigenvalue ratio below which H is degenerate")
    plane_outlier: float = _opt(0.2, lo=0.0, doc="max neighbour distance from a fitted map plane, m")
    plane_flatness: float = _opt(1.0, lo=0.0, hi=1.0, doc="max ratio of the two smallest neighbour spreads for a plane")
    local_map_keyframes: int = _opt(10, lo=1, hi=1000, doc="keyframes in the local registration map")

    # keyframes and graph
    keyframe_translation: float = _opt(1.0, lo=0.0, doc="keyframe spacing, m")
    keyframe_rotation: float = _opt(10.0, lo=0.0, hi=180.0, doc="keyframe spacing, degrees")
    window_size: int = _opt(30, lo=2, hi=10000, doc="sliding-window nodes before marginalization")
    loop_min_separation: int = _opt(20, lo=1, doc="min keyframe index gap for loop candidates")
    loop_radius: float = _opt(3.0, lo=0.0, doc="loop candidate search radius, m")
    loop_max_cost: float = _opt(0.01, lo=0.0, doc="max mean squared residual to accept a loop, m^2")
    max_skips: int = _opt(10, lo=0, doc="consecutive failed scans before aborting")
    graph_iters: int = _opt(20, lo=1, hi=1000, doc="pose graph iterations")

    # tsdf
    voxel_size: float = _opt(0.1, lo=1e-3, hi=10.0, doc="voxel edge length, m")
    truncation: float = _opt(0.0, lo=0.0, doc="truncation distance, m (0 selects 4 voxels)")
    weight_mode: str = _opt("constant", choices=("constant", "quadratic"), doc="per-sample weight")
    max_weight: float = _opt(100.0, lo=1.0, doc="weight cap")
    submap_size: int = _opt(0, lo=0, doc="keyframes per submap (0 integrates directly)")
    binary_ply: bool = _opt(False, doc="write little-endian binary PLY")

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            m = f.metadata
            if m.get("choices") and v not in m["choices"]:
                raise ConfigError(f"{f.name}={v!r}: expected one of {', '.join(m['choices'])}")
            if m.get("lo") is not None and v < m["lo"]:
                raise ConfigError(f"{f.name}={v!r}: below minimum {m['lo']}")
            if m.get("hi") is not None and v > m["hi"]:
                raise ConfigError(f"{f.name}={v!r}: above maximum {m['hi']}")
        if self.truncation and self.truncation < 2 * self.voxel_size:
            raise ConfigError("truncation must be at least twice the voxel size")

    # ------------------------------------------------------------------
    @classmethod
    def from_text(cls, text: str, **overrides) -> "RunConfig":
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {n}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"line {n}: unknown key {key!r}")
            values[key] = _convert(key, val, types[key])
        values.update({k: v for k, v in overrides.items() if v is not None})
        unknown = set(values) - set(types)
        if unknown:
            raise ConfigError(f"unknown keys: {', '.join(sorted(unknown))}")
        return cls(**values)

    @classmethod
    def load(cls, path, **overrides) -> "RunConfig":
        return cls.from_text(Path(path).read_text(), **overrides)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            v = str(v).lower() if isinstance(v, bool) else v
            lines.append(f"{f.name} = {v}  # {f.metadata['doc']}")
        return "\n".join(lines) + "\n"

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    # ------------------------------------------------------------------
    def sensor(self) -> SensorSpec:
        return SensorSpec(self.rings, self.points_per_ring, self.vertical_fov, self.max_range,
                          self.scan_period, self.range_noise, self.imu_rate)

    def features(self) -> FeatureConfig:
        return FeatureConfig(self.feature_window, self.sectors, self.edges_per_sector,
                             self.planar_per_sector, self.edge_threshold, self.planar_threshold,
                             self.min_range, self.max_range)

    def registration(self) -> RegistrationConfig:
        return RegistrationConfig(max_iters=self.reg_max_iters, huber=self.huber,
                                  max_nn_dist=self.max_nn_dist, degeneracy_ratio=self.degeneracy_ratio,
                                  plane_outlier=self.plane_outlier, plane_flatness=self.plane_flatness)


def _convert(key, val: str, typ):
    typ = typ if isinstance(typ, str) else typ.__name__
    try:
        if typ == "bool":
            low = val.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(val)
            return low in ("true", "1", "yes")
        if typ == "int":
            return int(val)
        if typ == "float":
            return float(val)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {val!r} as {typ}") from exc
    return val
