"""IMU integration: direct propagation, preintegration and pose interpolation.

Measurement model: ``accel = R^T (a_world - g)`` (specific force) and
``gyro = body angular rate``, so ``a_world = R accel + g`` with
``g = (0, 0, -9.81)`` by default. Both integrators use the same midpoint
rule: rotation advances by the mean rate over each step, accelerations are
averaged between the two endpoints (trapezoid).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, Rotation, quat_exp, quat_mul, quat_normalize, quat_to_matrix

DEFAULT_GRAVITY = (0.0, 0.0, -9.81)


class ImuTimeError(ValueError):
    """Timestamps out of order, or a query outside the covered interval."""


@dataclass(frozen=True)
class ImuBias:
    accel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gyro: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "accel", np.asarray(self.accel, dtype=float).reshape(3))
        object.__setattr__(self, "gyro", np.asarray(self.gyro, dtype=float).reshape(3))
        if not (np.all(np.isfinite(self.accel)) and np.all(np.isfinite(self.gyro))):
            raise ValueError("bias must be finite")


@dataclass(frozen=True)
class GravityModel:
    g: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_GRAVITY))

    def __post_init__(self):
        object.__setattr__(self, "g", np.asarray(self.g, dtype=float).reshape(3))


@dataclass
class NavState:
    pose: Pose
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(3)

    @classmethod
    def at_rest(cls) -> "NavState":
        return cls(Pose.identity(), np.zeros(3))


@dataclass(frozen=True)
class ImuSample:
    t: float
    accel: tuple
    gyro: tuple


class ImuSamples:
    """Immutable column store of IMU samples with strictly increasing stamps."""

    def __init__(self, t, accel, gyro):
        t = np.asarray(t, dtype=float).reshape(-1)
        accel = np.asarray(accel, dtype=float).reshape(-1, 3)
        gyro = np.asarray(gyro, dtype=float).reshape(-1, 3)
        if not (len(t) == len(accel) == len(gyro)):
            raise ValueError("t, accel and gyro lengths differ")
        if len(t) > 1 and np.any(np.diff(t) <= 0.0):
            raise ImuTimeError("IMU timestamps must be strictly increasing")
        self.t, self.accel, self.gyro = t, accel, gyro
        for a in (self.t, self.accel, self.gyro):
            a.setflags(write=False)

    @classmethod
    def empty(cls) -> "ImuSamples":
        return cls(np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3)))

    @classmethod
    def from_samples(cls, samples) -> "ImuSamples":
        samples = list(samples)
        if not samples:
            return cls.empty()
        return cls([s.t for s in samples], [s.accel for s in samples], [s.gyro for s in samples])

    def __len__(self):
        return len(self.t)

    def __iter__(self):
        for k in range(len(self)):
            yield ImuSample(float(self.t[k]), tuple(self.accel[k]), tuple(self.gyro[k]))

    @property
    def start(self) -> float:
        return float(self.t[0])

    @property
    def end(self) -> float:
        return float(self.t[-1])

    def covers(self, t0: float, t1: float, max_gap: float | None = None) -> bool:
        """True if ``[t0, t1]`` lies inside the stream, and with ``max_gap`` also
        no two consecutive samples bracketing the interval are further apart."""
        if not (len(self) > 0 and self.t[0] <= t0 + 1e-12 and self.t[-1] >= t1 - 1e-12):
            return False
        if max_gap is None or len(self) < 2:
            return True
        lo = max(int(np.searchsorted(self.t, t0, side="right")) - 1, 0)
        hi = min(int(np.searchsorted(self.t, t1, side="left")), len(self) - 1)
        return hi <= lo or float(np.diff(self.t[lo:hi + 1]).max()) <= max_gap

    def interpolate(self, t):
        """Linearly interpolated (accel, gyro) at time(s) ``t`` inside the stream."""
        t = np.asarray(t, dtype=float)
        if len(self) == 0 or np.any(t < self.t[0] - 1e-12) or np.any(t > self.t[-1] + 1e-12):
            raise ImuTimeError("interpolation time outside IMU stream")
        acc = np.stack([np.interp(t, self.t, self.accel[:, k]) for k in range(3)], axis=-1)
        gyr = np.stack([np.interp(t, self.t, self.gyro[:, k]) for k in range(3)], axis=-1)
        return acc, gyr

    def window(self, t0: float, t1: float) -> "ImuSamples":
        """Samples on ``[t0, t1]`` with interpolated samples inserted at both ends."""
        if t1 < t0:
            raise ImuTimeError("window end before start")
        if not self.covers(t0, t1):
            raise ImuTimeError(f"IMU stream does not cover [{t0}, {t1}]")
        inner = (self.t > t0 + 1e-12) & (self.t < t1 - 1e-12)
        ends = [t0] if t1 - t0 <= 1e-12 else [t0, t1]
        a_end, g_end = self.interpolate(np.array(ends))
        t = np.concatenate([[t0], self.t[inner], ends[1:]])
        acc = np.concatenate([a_end[:1], self.accel[inner], a_end[1:]])
        gyr = np.concatenate([g_end[:1], self.gyro[inner], g_end[1:]])
        return ImuSamples(t, acc, gyr)


@dataclass(frozen=True)
class PreintegratedDelta:
    dt: float
    alpha: np.ndarray
    beta: np.ndarray
    q: Rotation
    bias: ImuBias

    @classmethod
    def identity(cls, bias: ImuBias | None = None) -> "PreintegratedDelta":
        return cls(0.0, np.zeros(3), np.zeros(3), Rotation(), bias or ImuBias())


# ---------------------------------------------------------------------------

def _as_samples(samples) -> ImuSamples:
    return samples if isinstance(samples, ImuSamples) else ImuSamples.from_samples(samples)


def _midpoint_propagate(q0, p0, v0, samples: ImuSamples, bias: ImuBias, g):
    """Run the midpoint rule; returns quaternions, positions, velocities per sample."""
    n = len(samples)
    quats = np.empty((n, 4))
    pos = np.empty((n, 3))
    vel = np.empty((n, 3))
    quats[0], pos[0], vel[0] = q0, p0, v0
    if n == 1:
        return quats, pos, vel
    acc = samples.accel - bias.accel
    gyr = samples.gyro - bias.gyro
    dts = np.diff(samples.t)
    for k in range(n - 1):
        dt = dts[k]
        dq = quat_exp(0.5 * (gyr[k] + gyr[k + 1]) * dt)
        quats[k + 1] = quat_normalize(quat_mul(quats[k], dq))
        a0 = quat_to_matrix(quats[k]) @ acc[k]
        a1 = quat_to_matrix(quats[k + 1]) @ acc[k + 1]
        a_mid = 0.5 * (a0 + a1) + g
        pos[k + 1] = pos[k] + vel[k] * dt + 0.5 * a_mid * dt * dt
        vel[k + 1] = vel[k] + a_mid * dt
    return quats, pos, vel


def integrate_direct(state: NavState, samples, bias: ImuBias | None = None,
                     gravity: GravityModel | None = None) -> NavState:
    """Propagate a world-frame navigation state across an IMU sample stream."""
    samples = _as_samples(samples)
    if len(samples) == 0:
        return NavState(state.pose, state.velocity.copy())
    bias = bias or ImuBias()
    g = (gravity or GravityModel()).g
    quats, pos, vel = _midpoint_propagate(state.pose.rotation.q, state.pose.translation,
                                          state.velocity, samples, bias, g)
    return NavState(Pose(Rotation(quats[-1]), pos[-1]), vel[-1])


def preintegrate(samples, bias: ImuBias | None = None) -> PreintegratedDelta:
    """Relative motion (alpha, beta, q) expressed in the first sample's body frame."""
    samples = _as_samples(samples)
    bias = bias or ImuBias()
    if len(samples) < 2:
        return PreintegratedDelta.identity(bias)
    quats, pos, vel = _midpoint_propagate(np.array([1.0, 0, 0, 0]), np.zeros(3), np.zeros(3),
                                          samples, bias, np.zeros(3))
    return PreintegratedDelta(samples.end - samples.start, pos[-1], vel[-1],
                              Rotation(quats[-1]), bias)


def apply_delta(state: NavState, delta: PreintegratedDelta,
                gravity: GravityModel | None = None) -> NavState:
    """Evaluate the preintegrated motion equations from ``state``."""
    g = (gravity or GravityModel()).g
    dt = delta.dt
    R = state.pose.R
    p = state.pose.translation + state.velocity * dt + 0.5 * g * dt * dt + R @ delta.alpha
    v = state.velocity + g * dt + R @ delta.beta
    return NavState(Pose(state.pose.rotation @ delta.q, p), v)


def chain_deltas(first: PreintegratedDelta, second: PreintegratedDelta) -> PreintegratedDelta:
    """Concatenate two consecutive deltas (gravity-free composition)."""
    R1 = first.q.matrix()
    return PreintegratedDelta(
        first.dt + second.dt,
        first.alpha + first.beta * second.dt + R1 @ second.alpha,
        first.beta + R1 @ second.beta,
        first.q @ second.q,
        first.bias,
    )


def poses_at(times, anchor: NavState, samples, bias: ImuBias | None = None,
             gravity: GravityModel | None = None):
    """World rotations (N,3,3) and translations (N,3) at each query time.

    ``anchor`` is the state at the first sample time. Queries between samples
    take a partial midpoint step towards the linearly interpolated sample.
    """
    samples = _as_samples(samples)
    bias = bias or ImuBias()
    g = (gravity or GravityModel()).g
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if len(samples) == 0:
        raise ImuTimeError("empty IMU stream")
    if np.any(times < samples.start - 1e-12) or np.any(times > samples.end + 1e-12):
        raise ImuTimeError("query time outside IMU stream (extrapolation)")
    quats, pos, vel = _midpoint_propagate(anchor.pose.rotation.q, anchor.pose.translation,
                                          anchor.velocity, samples, bias, g)
    k = np.clip(np.searchsorted(samples.t, times, side="right") - 1, 0, len(samples) - 1)
    dt = times - samples.t[k]
    acc_t, gyr_t = samples.interpolate(np.clip(times, samples.start, samples.end))
    acc_t = acc_t - bias.accel
    gyr_t = gyr_t - bias.gyro
    acc_k = samples.accel[k] - bias.accel
    gyr_k = samples.gyro[k] - bias.gyro
    dq = quat_exp(0.5 * (gyr_k + gyr_t) * dt[:, None])
    q_t = quat_normalize(quat_mul(quats[k], dq))
    Rk = quat_to_matrix(quats[k])
    Rt = quat_to_matrix(q_t)
    a_mid = 0.5 * (np.einsum("nij,nj->ni", Rk, acc_k) + np.einsum("nij,nj->ni", Rt, acc_t)) + g
    p_t = pos[k] + vel[k] * dt[:, None] + 0.5 * a_mid * (dt * dt)[:, None]
    return Rt, p_t


def pose_at(t: float, anchor: NavState, samples, bias: ImuBias | None = None,
            gravity: GravityModel | None = None) -> Pose:
    R, p = poses_at([t], anchor, samples, bias, gravity)
    return Pose(Rotation.from_matrix(R[0]), p[0])


def imu_motion(anchor: NavState, samples, bias: ImuBias | None = None,
               gravity: GravityModel | None = None):
    """Closure ``times -> (R, t)`` for deskewing."""
    samples = _as_samples(samples)

    def motion(times):
        return poses_at(times, anchor, samples, bias, gravity)

    return motion
