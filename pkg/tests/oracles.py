"""Independent reference implementations used to check the package.

Nothing here imports the numerical core of ``liorecon``; each oracle is
built from first principles or from scipy.
"""
import math

import numpy as np
from scipy.linalg import expm, logm
from scipy.spatial.transform import Rotation as SciRot


def skew(v):
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def twist_matrix(xi):
    M = np.zeros((4, 4))
    M[:3, :3] = skew(xi[3:])
    M[:3, 3] = xi[:3]
    return M


def taylor_expm(A, terms=12, max_norm=0.5):
    """Truncated power series ``sum_{n<terms} A^n / n!`` with scaling and squaring.

    The argument is halved until its norm is below ``max_norm`` so the
    truncation error of the 12-term sum stays far below 1e-10.
    """
    nrm = np.linalg.norm(A, 2)
    s = max(0, int(math.ceil(math.log2(nrm / max_norm)))) if nrm > max_norm else 0
    B = A / 2**s
    out = np.eye(len(A))
    term = np.eye(len(A))
    for n in range(1, terms):
        term = term @ B / n
        out = out + term
    for _ in range(s):
        out = out @ out
    return out


def so3_matrix(phi):
    return taylor_expm(skew(phi))


def se3_matrix(xi):
    return expm(twist_matrix(np.asarray(xi, float)))


def se3_log_matrix(T):
    M = np.real(logm(T))
    return np.concatenate([M[:3, 3], [M[2, 1], M[0, 2], M[1, 0]]])


def right_jacobian_numeric(xi, h=1e-6):
    """Columns ``log(exp(xi)^-1 exp(xi + h e_k)) / h``, central differences."""
    xi = np.asarray(xi, float)
    T0inv = np.linalg.inv(se3_matrix(xi))
    J = np.zeros((6, 6))
    for k in range(6):
        d = np.zeros(6)
        d[k] = h
        plus = se3_log_matrix(T0inv @ se3_matrix(xi + d))
        minus = se3_log_matrix(T0inv @ se3_matrix(xi - d))
        J[:, k] = (plus - minus) / (2 * h)
    return J


def random_rotation_matrix(rng):
    return SciRot.random(random_state=rng).as_matrix()


def random_transform(rng, trans_scale=5.0):
    T = np.eye(4)
    T[:3, :3] = random_rotation_matrix(rng)
    T[:3, 3] = rng.normal(0, trans_scale, 3)
    return T


# ---------------------------------------------------------------------------
# IMU

def integrate_midpoint(R0, p0, v0, t, accel, gyro, g, ba=np.zeros(3), bg=np.zeros(3)):
    """Plain loop: rotation by the mean rate per step, trapezoid on world accel."""
    R = SciRot.from_matrix(R0)
    p = np.array(p0, float)
    v = np.array(v0, float)
    for k in range(len(t) - 1):
        dt = t[k + 1] - t[k]
        w = 0.5 * (gyro[k] + gyro[k + 1]) - bg
        R1 = R * SciRot.from_rotvec(w * dt)
        a = 0.5 * (R.apply(accel[k] - ba) + R1.apply(accel[k + 1] - ba)) + g
        p = p + v * dt + 0.5 * a * dt * dt
        v = v + a * dt
        R = R1
    return R.as_matrix(), p, v


def integrate_gyro_fine(t0, t1, rate_fn, n):
    """Orientation after integrating ``rate_fn`` with ``n`` midpoint steps."""
    ts = np.linspace(t0, t1, n + 1)
    R = SciRot.identity()
    for a, b in zip(ts[:-1], ts[1:]):
        R = R * SciRot.from_rotvec(rate_fn(0.5 * (a + b)) * (b - a))
    return R


# ---------------------------------------------------------------------------
# geometry of points, lines, planes

def line_distance_sweep(x, a, b, span=20.0):
    """Minimum of ``|x - (a + s (b - a))|`` over a dense sweep of ``s`` with one refinement."""
    d = b - a
    s = np.linspace(-span, span, 400001)
    dist = np.linalg.norm(x[None] - (a[None] + s[:, None] * d[None]), axis=1)
    k = int(np.argmin(dist))
    step = s[1] - s[0]
    s2 = np.linspace(s[k] - step, s[k] + step, 20001)
    dist2 = np.linalg.norm(x[None] - (a[None] + s2[:, None] * d[None]), axis=1)
    return float(dist2.min())


def plane_fit_rms(points):
    c = points - points.mean(axis=0)
    _, _, vt = np.linalg.svd(c, full_matrices=False)
    return float(np.sqrt(np.mean((c @ vt[2]) ** 2)))


def corner_curvature(corner, u, v, window=5):
    """Smoothness at the vertex of a right-angle polyline with unit spacing."""
    corner = np.asarray(corner, float)
    pts = [corner + k * u for k in range(window, 0, -1)] + [corner] + [corner + k * v for k in range(1, window + 1)]
    pts = np.array(pts)
    i = window
    s = np.zeros(3)
    for j in range(len(pts)):
        if j != i:
            s += pts[i] - pts[j]
    return np.linalg.norm(s) / (2 * window * np.linalg.norm(pts[i])), pts


def ray_plane(origin, direction, point, normal):
    denom = np.dot(direction, normal)
    return float(np.dot(np.asarray(point) - origin, normal) / denom)


# ---------------------------------------------------------------------------
# linear algebra

def random_spd(rng, n, cond=1e3):
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    ev = np.exp(rng.uniform(0, np.log(cond), n))
    return Q @ np.diag(ev) @ Q.T


def numeric_jacobian(f, x, h=1e-6):
    x = np.asarray(x, float)
    f0 = np.asarray(f(x))
    J = np.zeros((f0.size, x.size))
    for k in range(x.size):
        d = np.zeros_like(x)
        d[k] = h
        J[:, k] = (np.asarray(f(x + d)) - np.asarray(f(x - d))).ravel() / (2 * h)
    return J


# Poisson runtime/detail table (depth, seconds, triangles) used for the
# efficiency-factor reproduction.
POISSON_TABLE = [(6, 0.88, 16120), (8, 3.91, 215130), (10, 35.59, 3148301), (12, 199.22, 15593463)]
