"""Ground-truth simulator: triangle worlds, analytic trajectories, ray-cast
LiDAR sweeps and exact IMU synthesis.

All trajectories here keep the sensor level (yaw-only attitude), which keeps
every derivative closed-form.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .features import LidarFrame
from .geometry import Pose, Rotation, quat_exp
from .imu import DEFAULT_GRAVITY, ImuBias, ImuSamples


# ---------------------------------------------------------------------------
# worlds

@dataclass
class WorldModel:
    triangles: np.ndarray          # (M, 3, 3)

    def __post_init__(self):
        self.triangles = np.asarray(self.triangles, dtype=float).reshape(-1, 3, 3)
        area = 0.5 * np.linalg.norm(np.cross(self.triangles[:, 1] - self.triangles[:, 0],
                                             self.triangles[:, 2] - self.triangles[:, 0]), axis=1)
        if np.any(area <= 1e-12) or not np.all(np.isfinite(self.triangles)):
            raise ValueError("world contains degenerate or non-finite facets")

    def __add__(self, other: "WorldModel") -> "WorldModel":
        return WorldModel(np.concatenate([self.triangles, other.triangles]))

    def __len__(self):
        return len(self.triangles)


def quad(a, b, c, d) -> np.ndarray:
    """Two triangles for the quad a-b-c-d (counter-clockwise)."""
    a, b, c, d = (np.asarray(v, dtype=float) for v in (a, b, c, d))
    return np.array([[a, b, c], [a, c, d]])


def plane(point, normal, size: float = 100.0) -> WorldModel:
    point = np.asarray(point, dtype=float)
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    helper = np.array([1.0, 0, 0]) if abs(n[0]) < 0.9 else np.array([0, 1.0, 0])
    u = np.cross(n, helper)
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    h = 0.5 * size
    return WorldModel(quad(point - h * u - h * v, point + h * u - h * v,
                           point + h * u + h * v, point - h * u + h * v))


def box(lo, hi, inward: bool = False, faces=("x-", "x+", "y-", "y+", "z-", "z+")) -> WorldModel:
    """Axis-aligned box; ``faces`` selects which of the six sides to emit."""
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    c = {
        "x-": quad((x0, y0, z0), (x0, y0, z1), (x0, y1, z1), (x0, y1, z0)),
        "x+": quad((x1, y0, z0), (x1, y1, z0), (x1, y1, z1), (x1, y0, z1)),
        "y-": quad((x0, y0, z0), (x1, y0, z0), (x1, y0, z1), (x0, y0, z1)),
        "y+": quad((x0, y1, z0), (x0, y1, z1), (x1, y1, z1), (x1, y1, z0)),
        "z-": quad((x0, y0, z0), (x0, y1, z0), (x1, y1, z0), (x1, y0, z0)),
        "z+": quad((x0, y0, z1), (x1, y0, z1), (x1, y1, z1), (x0, y1, z1)),
    }
    tris = np.concatenate([c[f] for f in faces])
    if inward:
        tris = tris[:, ::-1]
    return WorldModel(tris)


def sphere(center, radius: float, n_lat: int = 12, n_lon: int = 24) -> WorldModel:
    center = np.asarray(center, dtype=float)
    th = np.linspace(0, np.pi, n_lat + 1)
    ph = np.linspace(0, 2 * np.pi, n_lon + 1)
    P = lambda t, p: center + radius * np.array([np.sin(t) * np.cos(p), np.sin(t) * np.sin(p), np.cos(t)])
    tris = []
    for i in range(n_lat):
        for j in range(n_lon):
            a, b = P(th[i], ph[j]), P(th[i + 1], ph[j])
            c, d = P(th[i + 1], ph[j + 1]), P(th[i], ph[j + 1])
            if i > 0:
                tris.append([a, b, d])
            if i < n_lat - 1:
                tris.append([b, c, d])
    return WorldModel(np.array(tris))


def room_world(size=(10.0, 8.0, 3.0), floor_z: float = -1.0, pillar: bool = True) -> WorldModel:
    """Closed rectangular room centred on the origin in x/y, optional pillar."""
    sx, sy, sz = size
    w = box((-sx / 2, -sy / 2, floor_z), (sx / 2, sy / 2, floor_z + sz), inward=True)
    if pillar:
        w = w + box((1.5, 1.0, floor_z), (2.3, 1.8, floor_z + sz), faces=("x-", "x+", "y-", "y+"))
    return w


def loop_world(loop: "RoundedRectangleLoop", floor_z: float = -1.0, height: float = 4.0,
               clearance: float = 4.0) -> WorldModel:
    """Courtyard around a rounded-rectangle path: outer walls, an inner building
    block and pillars scattered beside the path."""
    xmin, ymin, xmax, ymax = loop.extent()
    inner_gap = 2.0
    top = floor_z + height
    w = plane((0, 0, floor_z), (0, 0, 1), size=4 * max(xmax - xmin, ymax - ymin) + 40)
    w = w + box((xmin - clearance, ymin - clearance, floor_z),
                (xmax + clearance, ymax + clearance, top), inward=True, faces=("x-", "x+", "y-", "y+"))
    w = w + box((xmin + inner_gap, ymin + inner_gap, floor_z),
                (xmax - inner_gap, ymax - inner_gap, top - 1.0), faces=("x-", "x+", "y-", "y+", "z+"))
    rng = np.random.default_rng(7)
    xs = np.linspace(xmin, xmax, 7)
    ys = np.linspace(ymin, ymax, 5)
    spots = [(x, ymin - 2.0) for x in xs] + [(x, ymax + 2.0) for x in xs]
    spots += [(xmin - 2.0, y) for y in ys[1:-1]] + [(xmax + 2.0, y) for y in ys[1:-1]]
    for x, y in spots:
        s = 0.2 + 0.2 * rng.random()
        h = 1.5 + 2.0 * rng.random()
        w = w + box((x - s, y - s, floor_z), (x + s, y + s, floor_z + h), faces=("x-", "x+", "y-", "y+", "z+"))
    return w


# ---------------------------------------------------------------------------
# trajectories
#
# Each trajectory exposes, for arrays of times: position (N,3), yaw (N,),
# velocity (N,3), acceleration (N,3) and yaw_rate (N,).

class Trajectory:
    duration: float = np.inf

    def position(self, t): raise NotImplementedError
    def yaw(self, t): raise NotImplementedError
    def velocity(self, t): raise NotImplementedError
    def acceleration(self, t): raise NotImplementedError
    def yaw_rate(self, t): raise NotImplementedError

    def rotation_matrices(self, t):
        psi = np.asarray(self.yaw(t), dtype=float)
        c, s = np.cos(psi), np.sin(psi)
        R = np.zeros(psi.shape + (3, 3))
        R[..., 0, 0], R[..., 0, 1] = c, -s
        R[..., 1, 0], R[..., 1, 1] = s, c
        R[..., 2, 2] = 1.0
        return R

    def pose(self, t: float) -> Pose:
        t = np.atleast_1d(float(t))
        q = quat_exp(np.array([0.0, 0.0, self.yaw(t)[0]]))
        return Pose(Rotation(q), self.position(t)[0])

    def angular_velocity_body(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        w = np.zeros((len(t), 3))
        w[:, 2] = self.yaw_rate(t)
        return w


class StaticTrajectory(Trajectory):
    def __init__(self, position=(0.0, 0.0, 0.0), yaw: float = 0.0, duration: float = np.inf):
        self.p = np.asarray(position, dtype=float)
        self.psi = float(yaw)
        self.duration = duration

    def position(self, t):
        return np.broadcast_to(self.p, np.atleast_1d(t).shape + (3,)).copy()

    def yaw(self, t):
        return np.full(np.atleast_1d(t).shape, self.psi)

    def velocity(self, t):
        return np.zeros(np.atleast_1d(t).shape + (3,))

    acceleration = velocity

    def yaw_rate(self, t):
        return np.zeros(np.atleast_1d(t).shape)


class RotatingPlatform(StaticTrajectory):
    """Fixed position, constant yaw rate."""

    def __init__(self, rate: float, position=(0.0, 0.0, 0.0), yaw0: float = 0.0, duration: float = np.inf):
        super().__init__(position, yaw0, duration)
        self.rate = float(rate)

    def yaw(self, t):
        return self.psi + self.rate * np.atleast_1d(np.asarray(t, dtype=float))

    def yaw_rate(self, t):
        return np.full(np.atleast_1d(t).shape, self.rate)


class LineTrajectory(Trajectory):
    """Constant velocity along a straight line, heading fixed."""

    def __init__(self, start, velocity, yaw: float = 0.0, duration: float = np.inf):
        self.p0 = np.asarray(start, dtype=float)
        self.v = np.asarray(velocity, dtype=float)
        self.psi = float(yaw)
        self.duration = duration

    def position(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return self.p0 + t[:, None] * self.v

    def yaw(self, t):
        return np.full(np.atleast_1d(t).shape, self.psi)

    def velocity(self, t):
        return np.broadcast_to(self.v, np.atleast_1d(t).shape + (3,)).copy()

    def acceleration(self, t):
        return np.zeros(np.atleast_1d(t).shape + (3,))

    def yaw_rate(self, t):
        return np.zeros(np.atleast_1d(t).shape)


class ArcTrajectory(Trajectory):
    """Uniform circular motion, heading tangent to the circle."""

    def __init__(self, center, radius: float, speed: float, phase0: float = -np.pi / 2,
                 duration: float = np.inf):
        self.c = np.asarray(center, dtype=float)
        self.r = float(radius)
        self.w = float(speed) / self.r
        self.phi0 = float(phase0)
        self.duration = duration

    def _phase(self, t):
        return self.phi0 + self.w * np.atleast_1d(np.asarray(t, dtype=float))

    def position(self, t):
        a = self._phase(t)
        return self.c + self.r * np.stack([np.cos(a), np.sin(a), np.zeros_like(a)], axis=-1)

    def yaw(self, t):
        return self._phase(t) + np.pi / 2

    def velocity(self, t):
        a = self._phase(t)
        return self.r * self.w * np.stack([-np.sin(a), np.cos(a), np.zeros_like(a)], axis=-1)

    def acceleration(self, t):
        a = self._phase(t)
        return -self.r * self.w**2 * np.stack([np.cos(a), np.sin(a), np.zeros_like(a)], axis=-1)

    def yaw_rate(self, t):
        return np.full(np.atleast_1d(t).shape, self.w)


class FigureEight(Trajectory):
    """Lemniscate ``x = A sin(wt), y = A/2 sin(2wt)`` with tangent heading."""

    def __init__(self, amplitude: float, omega: float, z: float = 0.0, duration: float = np.inf):
        self.A = float(amplitude)
        self.w = float(omega)
        self.z = float(z)
        self.duration = duration

    def _derivs(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        A, w = self.A, self.w
        s1, c1 = np.sin(w * t), np.cos(w * t)
        s2, c2 = np.sin(2 * w * t), np.cos(2 * w * t)
        p = np.stack([A * s1, 0.5 * A * s2], axis=-1)
        v = np.stack([A * w * c1, A * w * c2], axis=-1)
        a = np.stack([-A * w * w * s1, -2 * A * w * w * s2], axis=-1)
        j = np.stack([-A * w**3 * c1, -4 * A * w**3 * c2], axis=-1)
        return p, v, a, j

    def _lift(self, xy, z):
        return np.concatenate([xy, np.full(xy.shape[:-1] + (1,), z)], axis=-1)

    def position(self, t):
        return self._lift(self._derivs(t)[0], self.z)

    def velocity(self, t):
        return self._lift(self._derivs(t)[1], 0.0)

    def acceleration(self, t):
        return self._lift(self._derivs(t)[2], 0.0)

    def yaw(self, t):
        v = self._derivs(t)[1]
        return np.unwrap(np.arctan2(v[:, 1], v[:, 0]))

    def yaw_rate(self, t):
        _, v, a, _ = self._derivs(t)
        return (v[:, 0] * a[:, 1] - v[:, 1] * a[:, 0]) / (v[:, 0] ** 2 + v[:, 1] ** 2)


def _smoothstep_speed(t, v_max, t_ramp):
    """Arc length, speed and tangential acceleration for a quintic ramp to ``v_max``."""
    t = np.asarray(t, dtype=float)
    x = np.clip(t / t_ramp, 0.0, 1.0) if t_ramp > 0 else np.ones_like(t)
    ramp = t < t_ramp
    s_ramp = v_max * t_ramp * (x**6 - 3 * x**5 + 2.5 * x**4)
    s_cruise = v_max * (0.5 * t_ramp + (t - t_ramp))
    s = np.where(ramp, s_ramp, s_cruise)
    speed = np.where(ramp, v_max * (6 * x**5 - 15 * x**4 + 10 * x**3), v_max)
    acc = np.where(ramp, v_max / max(t_ramp, 1e-300) * (30 * x**4 - 60 * x**3 + 30 * x**2), 0.0)
    return s, speed, acc


class RoundedRectangleLoop(Trajectory):
    """Closed rounded-rectangle path starting at the origin heading +x.

    The path runs counter-clockwise: straight ``length_x`` along +x, a quarter
    arc of radius ``radius``, straight ``length_y`` along +y, and so on. Speed
    ramps from rest with a quintic profile so the path is completed exactly at
    ``duration``.
    """

    def __init__(self, length_x: float, length_y: float, radius: float, duration: float,
                 ramp: float = 2.0, z: float = 0.0):
        self.lx, self.ly, self.r = float(length_x), float(length_y), float(radius)
        self.duration = float(duration)
        self.ramp = float(ramp)
        self.z = float(z)
        self.length = 2 * self.lx + 2 * self.ly + 2 * np.pi * self.r
        self.v_max = self.length / (self.duration - 0.5 * self.ramp)
        q = 0.5 * np.pi * self.r
        self._seg_len = np.array([self.lx, q, self.ly, q, self.lx, q, self.ly, q])
        self._seg_start = np.concatenate([[0.0], np.cumsum(self._seg_len)[:-1]])
        lx, ly, r = self.lx, self.ly, self.r
        # start point, heading of each segment; arcs store their centre
        self._seg = [
            ("line", np.array([0.0, 0.0]), 0.0),
            ("arc", np.array([lx, r]), 0.0),
            ("line", np.array([lx + r, r]), 0.5 * np.pi),
            ("arc", np.array([lx, r + ly]), 0.5 * np.pi),
            ("line", np.array([lx, 2 * r + ly]), np.pi),
            ("arc", np.array([0.0, r + ly]), np.pi),
            ("line", np.array([-r, r + ly]), 1.5 * np.pi),
            ("arc", np.array([0.0, r]), 1.5 * np.pi),
        ]

    @classmethod
    def with_perimeter(cls, perimeter: float = 50.0, aspect: float = 1.6, radius: float = 2.0,
                       duration: float = 20.0, ramp: float = 2.0) -> "RoundedRectangleLoop":
        straight = 0.5 * (perimeter - 2 * np.pi * radius)
        ly = straight / (1 + aspect)
        return cls(straight - ly, ly, radius, duration, ramp)

    def extent(self):
        return (-self.r, 0.0, self.lx + self.r, self.ly + 2 * self.r)

    def _geometry(self, s):
        """Planar position, heading and curvature at arc length(s) ``s``."""
        s = np.mod(np.asarray(s, dtype=float), self.length)
        k = np.clip(np.searchsorted(self._seg_start, s, side="right") - 1, 0, 7)
        u = s - self._seg_start[k]
        xy = np.zeros(s.shape + (2,))
        head = np.zeros(s.shape)
        curv = np.zeros(s.shape)
        for n, (kind, ref, h0) in enumerate(self._seg):
            m = k == n
            if not np.any(m):
                continue
            if kind == "line":
                d = np.array([np.cos(h0), np.sin(h0)])
                xy[m] = ref + u[m, None] * d
                head[m] = h0
            else:
                a = h0 + u[m] / self.r
                xy[m] = ref + self.r * np.stack([np.sin(a), -np.cos(a)], axis=-1)
                head[m] = a
                curv[m] = 1.0 / self.r
        return xy, head, curv

    def _state(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        s, v, a = _smoothstep_speed(t, self.v_max, self.ramp)
        xy, head, curv = self._geometry(s)
        return xy, head, curv, v, a

    def position(self, t):
        xy = self._state(t)[0]
        return np.concatenate([xy, np.full(xy.shape[:-1] + (1,), self.z)], axis=-1)

    def yaw(self, t):
        return self._state(t)[1]

    def velocity(self, t):
        _, head, _, v, _ = self._state(t)
        return np.stack([v * np.cos(head), v * np.sin(head), np.zeros_like(v)], axis=-1)

    def acceleration(self, t):
        _, head, curv, v, a = self._state(t)
        tan = np.stack([np.cos(head), np.sin(head)], axis=-1)
        nor = np.stack([-np.sin(head), np.cos(head)], axis=-1)
        acc = a[:, None] * tan + (v * v * curv)[:, None] * nor
        return np.concatenate([acc, np.zeros_like(v)[:, None]], axis=-1)

    def yaw_rate(self, t):
        _, _, curv, v, _ = self._state(t)
        return v * curv


# ---------------------------------------------------------------------------
# sensor models

@dataclass
class SensorSpec:
    rings: int = 16
    points_per_ring: int = 900
    vertical_fov_deg: float = 30.0
    max_range: float = 60.0
    scan_period: float = 0.1
    noise_sigma: float = 0.0
    imu_rate: float = 200.0

    def __post_init__(self):
        for name in ("rings", "points_per_ring", "vertical_fov_deg", "max_range", "scan_period", "imu_rate"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")

    def beam_directions(self):
        """Unit beam directions (rings, columns, 3) in the sensor frame, and rel_time per column."""
        if self.rings == 1:
            elev = np.zeros(1)
        else:
            half = np.radians(self.vertical_fov_deg) / 2
            elev = np.linspace(-half, half, self.rings)
        cols = self.points_per_ring
        az = -np.pi + 2 * np.pi * np.arange(cols) / cols
        rel = np.arange(cols) / max(cols - 1, 1)
        ce = np.cos(elev)[:, None]
        d = np.stack([ce * np.cos(az)[None], ce * np.sin(az)[None],
                      np.broadcast_to(np.sin(elev)[:, None], (self.rings, cols))], axis=-1)
        return d, rel


def cast_rays(world: WorldModel, origins, dirs, max_range: float):
    """Range to the nearest facet along each ray, ``inf`` when nothing is hit."""
    return kernels.ray_triangle_hits(np.atleast_2d(origins), np.atleast_2d(dirs), world.triangles, max_range)


def raycast_scan(world: WorldModel, trajectory: Trajectory, start: float, spec: SensorSpec,
                 rng: np.random.Generator | None = None) -> LidarFrame:
    """One sweep; each column fires at its own time along the trajectory.

    Points are returned in the sensor frame of their own emission instant,
    i.e. with the motion distortion a real spinning LiDAR produces.
    """
    dirs, rel = spec.beam_directions()
    times = start + rel * spec.scan_period
    R = trajectory.rotation_matrices(times)            # (C, 3, 3)
    P = trajectory.position(times)                     # (C, 3)
    world_dirs = np.einsum("cij,rcj->rci", R, dirs)
    origins = np.broadcast_to(P[None], world_dirs.shape)
    r = cast_rays(world, origins.reshape(-1, 3), world_dirs.reshape(-1, 3), spec.max_range)
    r = r.reshape(spec.rings, -1)
    if spec.noise_sigma > 0:
        rng = rng or np.random.default_rng(0)
        r = r + rng.normal(0.0, spec.noise_sigma, size=r.shape)
    hit = np.isfinite(r) & (r > 0) & (r <= spec.max_range)
    pts = dirs * np.where(hit, r, 0.0)[..., None]
    ring = np.broadcast_to(np.arange(spec.rings)[:, None], hit.shape)
    relt = np.broadcast_to(rel[None], hit.shape)
    return LidarFrame(start + spec.scan_period, pts[hit], ring[hit], relt[hit], spec.scan_period)


@dataclass
class ImuNoise:
    accel_sigma: float = 0.0
    gyro_sigma: float = 0.0


def synthesize_imu(trajectory: Trajectory, rate: float, t0: float, t1: float,
                   bias: ImuBias | None = None, gravity=DEFAULT_GRAVITY,
                   noise: ImuNoise | None = None, rng: np.random.Generator | None = None) -> ImuSamples:
    """IMU samples on ``[t0, t1]`` at ``rate`` Hz from analytic derivatives."""
    if rate <= 0:
        raise ValueError("rate must be positive")
    bias = bias or ImuBias()
    noise = noise or ImuNoise()
    n = int(np.floor((t1 - t0) * rate + 1e-9)) + 1
    t = t0 + np.arange(n) / rate
    R = trajectory.rotation_matrices(t)
    a_w = trajectory.acceleration(t) - np.asarray(gravity, dtype=float)
    accel = np.einsum("nji,nj->ni", R, a_w) + bias.accel
    gyro = trajectory.angular_velocity_body(t) + bias.gyro
    if noise.accel_sigma > 0 or noise.gyro_sigma > 0:
        rng = rng or np.random.default_rng(0)
        accel = accel + rng.normal(0.0, noise.accel_sigma, accel.shape)
        gyro = gyro + rng.normal(0.0, noise.gyro_sigma, gyro.shape)
    return ImuSamples(t, accel, gyro)


def ground_truth_poses(trajectory: Trajectory, stamps) -> list:
    stamps = np.atleast_1d(np.asarray(stamps, dtype=float))
    if np.any(stamps < 0) or np.any(stamps > trajectory.duration + 1e-9):
        raise ValueError("stamp outside trajectory duration")
    return [trajectory.pose(s) for s in stamps]


def point_triangle_distance(points, triangles, chunk: int = 2048) -> np.ndarray:
    """Exact distance from each point to the nearest triangle (Ericson's closest-point test)."""
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    T = np.asarray(triangles, dtype=float).reshape(-1, 3, 3)
    out = np.empty(len(P))
    A, B, C = T[:, 0], T[:, 1], T[:, 2]
    AB, AC = B - A, C - A
    for s in range(0, len(P), chunk):
        p = P[s:s + chunk, None, :]
        AP = p - A
        d1 = np.einsum("ijk,jk->ij", AP, AB)
        d2 = np.einsum("ijk,jk->ij", AP, AC)
        BP = p - B
        d3 = np.einsum("ijk,jk->ij", BP, AB)
        d4 = np.einsum("ijk,jk->ij", BP, AC)
        CP = p - C
        d5 = np.einsum("ijk,jk->ij", CP, AB)
        d6 = np.einsum("ijk,jk->ij", CP, AC)
        va = d3 * d6 - d5 * d4
        vb = d5 * d2 - d1 * d6
        vc = d1 * d4 - d3 * d2
        denom = va + vb + vc
        with np.errstate(divide="ignore", invalid="ignore"):
            v = vb / denom
            w = vc / denom
        closest = A + v[..., None] * AB + w[..., None] * AC
        # vertex regions
        regions = [
            ((d1 <= 0) & (d2 <= 0), np.broadcast_to(A, closest.shape)),
            ((d3 >= 0) & (d4 <= d3), np.broadcast_to(B, closest.shape)),
            ((d6 >= 0) & (d5 <= d6), np.broadcast_to(C, closest.shape)),
        ]
        with np.errstate(divide="ignore", invalid="ignore"):
            tab = d1 / (d1 - d3)
            tac = d2 / (d2 - d6)
            tbc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        edge_regions = [
            ((vc <= 0) & (d1 >= 0) & (d3 <= 0), A + tab[..., None] * AB),
            ((vb <= 0) & (d2 >= 0) & (d6 <= 0), A + tac[..., None] * AC),
            ((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), B + tbc[..., None] * (C - B)),
        ]
        # later assignments must not override earlier (higher-priority) regions
        done = np.zeros(closest.shape[:2], dtype=bool)
        result = closest.copy()
        for mask, val in regions + edge_regions:
            m = mask & ~done
            result[m] = val[m]
            done |= m
        d = np.linalg.norm(p - result, axis=2)
        out[s:s + chunk] = d.min(axis=1)
    return out
