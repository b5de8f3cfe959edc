"""SO(3)/SE(3) machinery.

Twists are ordered ``[rho, phi]`` (translation first) everywhere in the
package. Quaternions are stored ``(w, x, y, z)`` with ``w >= 0``.
Pose perturbations are left-multiplicative: ``T <- exp(dxi) @ T``.
"""
from __future__ import annotations

import numpy as np

SMALL_ANGLE = 1e-8
LOG_ANGLE_LIMIT = np.pi - 1e-6


class DomainError(ValueError):
    """Input outside the domain where a map is well defined."""


def hat(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(M) -> np.ndarray:
    return np.array([M[2, 1], M[0, 2], M[1, 0]])


def se3_hat(xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    M = np.zeros((4, 4))
    M[:3, :3] = hat(xi[3:])
    M[:3, 3] = xi[:3]
    return M


def se3_vee(M) -> np.ndarray:
    return np.concatenate([M[:3, 3], vee(M[:3, :3])])


def se3_ad(xi) -> np.ndarray:
    """Matrix of the Lie bracket ``[xi, .]`` in ``[rho, phi]`` ordering."""
    xi = np.asarray(xi, dtype=float)
    A = np.zeros((6, 6))
    A[:3, :3] = hat(xi[3:])
    A[:3, 3:] = hat(xi[:3])
    A[3:, 3:] = A[:3, :3]
    return A


# ---------------------------------------------------------------------------
# batched quaternion helpers, shape (..., 4)

def quat_mul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    return np.where(q[..., :1] < 0.0, -q, q)


def quat_conj(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_exp(phi) -> np.ndarray:
    """Rotation vector(s) to unit quaternion(s)."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1, keepdims=True)
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    # second-order Taylor expansion below the threshold
    w = np.where(small, 1.0 - theta**2 / 8.0, np.cos(0.5 * safe))
    k = np.where(small, 0.5 - theta**2 / 48.0, np.sin(0.5 * safe) / safe)
    return quat_normalize(np.concatenate([w, k * phi], axis=-1))


def quat_log(q) -> np.ndarray:
    q = quat_normalize(q)
    w = q[..., :1]
    v = q[..., 1:]
    s = np.linalg.norm(v, axis=-1, keepdims=True)
    small = s < SMALL_ANGLE
    safe = np.where(small, 1.0, s)
    theta = 2.0 * np.arctan2(s, w)
    k = np.where(small, 2.0 / w * (1.0 - s**2 / (3.0 * w**2)), theta / safe)
    return k * v


def quat_to_matrix(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    w, x, y, z = np.moveaxis(q, -1, 0)
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def matrix_to_quat(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(1.0 + tr)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return quat_normalize(q)


# ---------------------------------------------------------------------------

class Rotation:
    """Unit quaternion rotation. ``r @ r2`` composes, ``r @ points`` rotates."""

    __slots__ = ("q",)

    def __init__(self, q=(1.0, 0.0, 0.0, 0.0)):
        q = np.asarray(q, dtype=float)
        if q.shape != (4,) or not np.all(np.isfinite(q)):
            raise ValueError(f"invalid quaternion {q!r}")
        self.q = quat_normalize(q)

    @classmethod
    def identity(cls) -> "Rotation":
        return cls()

    @classmethod
    def from_matrix(cls, R) -> "Rotation":
        return cls(matrix_to_quat(R))

    @classmethod
    def from_rotvec(cls, phi) -> "Rotation":
        return so3_exp(phi)

    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def inverse(self) -> "Rotation":
        return Rotation(quat_conj(self.q))

    def log(self) -> np.ndarray:
        return so3_log(self)

    def angle(self) -> float:
        return float(np.linalg.norm(quat_log(self.q)))

    def __matmul__(self, other):
        if isinstance(other, Rotation):
            return Rotation(quat_mul(self.q, other.q))
        other = np.asarray(other, dtype=float)
        return other @ self.matrix().T

    def __repr__(self):
        return f"Rotation(q={self.q.tolist()})"


class Pose:
    """Rigid transform ``x -> R x + t``."""

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation: Rotation | None = None, translation=(0.0, 0.0, 0.0)):
        self.rotation = Rotation() if rotation is None else rotation
        t = np.asarray(translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError(f"non-finite translation {t!r}")
        self.translation = t

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, T) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls(Rotation.from_matrix(T[:3, :3]), T[:3, 3])

    @classmethod
    def from_quat_trans(cls, q_wxyz, t) -> "Pose":
        return cls(Rotation(q_wxyz), t)

    @property
    def R(self) -> np.ndarray:
        return self.rotation.matrix()

    @property
    def t(self) -> np.ndarray:
        return self.translation

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> "Pose":
        rinv = self.rotation.inverse()
        return Pose(rinv, -(rinv @ self.translation))

    def __matmul__(self, other):
        if isinstance(other, Pose):
            return Pose(self.rotation @ other.rotation,
                        self.rotation @ other.translation + self.translation)
        other = np.asarray(other, dtype=float)
        return other @ self.R.T + self.translation

    def __repr__(self):
        return f"Pose(q={self.rotation.q.tolist()}, t={self.translation.tolist()})"


# ---------------------------------------------------------------------------

def so3_exp(phi) -> Rotation:
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (3,) or not np.all(np.isfinite(phi)):
        raise ValueError(f"so3_exp needs a finite 3-vector, got {phi!r}")
    return Rotation(quat_exp(phi))


def so3_log(r: Rotation) -> np.ndarray:
    return quat_log(r.q)


def so3_left_jacobian(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    K = hat(phi)
    if theta < SMALL_ANGLE:
        return np.eye(3) + 0.5 * K + K @ K / 6.0
    return (np.eye(3) + (1 - np.cos(theta)) / theta**2 * K
            + (theta - np.sin(theta)) / theta**3 * (K @ K))


def so3_left_jacobian_inv(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    K = hat(phi)
    if theta < SMALL_ANGLE:
        return np.eye(3) - 0.5 * K + K @ K / 12.0
    c = 1.0 / theta**2 - (1 + np.cos(theta)) / (2 * theta * np.sin(theta))
    return np.eye(3) - 0.5 * K + c * (K @ K)


def se3_exp(xi) -> Pose:
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (6,):
        raise ValueError(f"twist must have 6 components, got shape {xi.shape}")
    rho, phi = xi[:3], xi[3:]
    return Pose(so3_exp(phi), so3_left_jacobian(phi) @ rho)


def se3_log(T: Pose) -> np.ndarray:
    phi = so3_log(T.rotation)
    if np.linalg.norm(phi) >= LOG_ANGLE_LIMIT:
        raise DomainError("se3_log: rotation angle too close to pi")
    rho = so3_left_jacobian_inv(phi) @ T.translation
    return np.concatenate([rho, phi])


def adjoint(T: Pose) -> np.ndarray:
    """``Ad(T)`` with ``hat(Ad(T) xi) = T hat(xi) T^-1``."""
    R = T.R
    A = np.zeros((6, 6))
    A[:3, :3] = R
    A[:3, 3:] = hat(T.translation) @ R
    A[3:, 3:] = R
    return A


def right_jacobian_inv_approx(e) -> np.ndarray:
    """First-order inverse right Jacobian ``I + 1/2 [[phi^, rho^], [0, phi^]]``."""
    return np.eye(6) + 0.5 * se3_ad(e)


def se3_right_jacobian(xi, terms: int = 30) -> np.ndarray:
    """Exact right Jacobian of SE(3), summed as ``sum (-ad)^n / (n+1)!``."""
    ad = -se3_ad(xi)
    J = np.eye(6)
    term = np.eye(6)
    for n in range(1, terms):
        term = term @ ad / (n + 1)
        J = J + term
    return J


def right_jacobian_inv(e) -> np.ndarray:
    return np.linalg.inv(se3_right_jacobian(e))


def pose_distance(a: Pose, b: Pose) -> tuple[float, float]:
    """Translation distance (m) and rotation angle (rad) between two poses."""
    d = a.inverse() @ b
    return float(np.linalg.norm(d.translation)), d.rotation.angle()
