"""Edge/plane residuals, correspondence search and Gauss-Newton scan alignment.

Poses are updated by left multiplication, ``T <- exp(dxi) T``, so the
Jacobian of a world point ``p = T x`` w.r.t. the twist is ``[I, -p^]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .features import FeatureSet
from .geometry import Pose, se3_exp


@dataclass
class RegistrationConfig:
    max_iters: int = 30
    damping: float = 1e-4
    huber: float = 0.1
    max_nn_dist: float = 1.0
    edge_knn: int = 5
    plane_knn: int = 5
    plane_outlier: float = 0.2
    converge_tol: float = 1e-6
    degeneracy_ratio: float = 1e-6
    max_lm_retries: int = 8
    rematch_tol: float = 1e-3
    max_rematch: int = 10
    line_ratio: float = 3.0
    plane_flatness: float = 1.0


@dataclass
class EdgeCorrespondences:
    """Source points (sensor frame) matched to lines through world anchors ``a``, ``b``."""

    src: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __len__(self):
        return len(self.src)


@dataclass
class PlaneCorrespondences:
    """Source points (sensor frame) matched to unit-normal planes ``(pa, pb, pc, pd)``."""

    src: np.ndarray
    coeffs: np.ndarray

    def __len__(self):
        return len(self.src)


@dataclass
class Correspondences:
    edges: EdgeCorrespondences
    planes: PlaneCorrespondences

    def __len__(self):
        return len(self.edges) + len(self.planes)

    @classmethod
    def empty(cls) -> "Correspondences":
        z = np.zeros((0, 3))
        return cls(EdgeCorrespondences(z, z, z), PlaneCorrespondences(z, np.zeros((0, 4))))


@dataclass
class RegistrationResult:
    pose: Pose
    iterations: int
    cost: float
    converged: bool
    degenerate: bool = False
    n_edge: int = 0
    n_plane: int = 0
    cost_history: list = field(default_factory=list)

    @property
    def n_correspondences(self) -> int:
        return self.n_edge + self.n_plane


# ---------------------------------------------------------------------------
# residuals

def edge_residuals(x, a, b) -> np.ndarray:
    x, a, b = (np.asarray(v, dtype=float).reshape(-1, 3) for v in (x, a, b))
    base = np.linalg.norm(a - b, axis=1)
    if np.any(base <= 1e-6):
        raise ValueError("edge anchors coincide")
    return np.linalg.norm(np.cross(x - a, x - b), axis=1) / base


def edge_residual(x, a, b) -> float:
    """Distance from ``x`` to the line through ``a`` and ``b``."""
    return float(edge_residuals(x, a, b)[0])


def plane_residuals(points, coeffs) -> np.ndarray:
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    coeffs = np.asarray(coeffs, dtype=float).reshape(-1, 4)
    norm = np.linalg.norm(coeffs[:, :3], axis=1)
    if np.any(norm <= 0.0):
        raise ValueError("plane normal is zero")
    return (np.einsum("ij,ij->i", points, coeffs[:, :3]) + coeffs[:, 3]) / norm


def plane_residual(point, coeffs) -> float:
    """Signed distance of ``point`` to ``pa x + pb y + pc z + pd = 0``."""
    return float(plane_residuals(point, coeffs)[0])


def fit_planes(neighbours, outlier: float = 0.2, flatness: float = 1.0):
    """Batch least-squares planes for ``(n, k, 3)`` neighbour sets.

    Returns unit-normal coefficients ``(n, 4)`` and an acceptance mask that
    rejects rank-deficient sets, sets with any point beyond ``outlier`` and,
    when ``flatness < 1``, sets whose smallest scatter eigenvalue exceeds
    ``flatness`` times the middle one (neighbours straddling a crease).
    """
    P = np.asarray(neighbours, dtype=float)
    if P.ndim == 2:
        P = P[None]
    n = P.shape[0]
    if n == 0:
        return np.zeros((0, 4)), np.zeros(0, dtype=bool)
    centroid = P.mean(axis=1)
    Q = P - centroid[:, None, :]
    cov = np.einsum("nki,nkj->nij", Q, Q)
    evals, evecs = np.linalg.eigh(cov)
    normal = evecs[:, :, 0]
    d = -np.einsum("ni,ni->n", normal, centroid)
    coeffs = np.concatenate([normal, d[:, None]], axis=1)
    scale = np.maximum(evals[:, 2], 1e-300)
    ok = (P.shape[1] >= 3) & (evals[:, 1] > 1e-10 * scale) & (evals[:, 2] > 1e-18)
    dist = np.abs(np.einsum("nki,ni->nk", P, normal) + d[:, None])
    ok &= np.all(dist <= outlier, axis=1)
    if flatness < 1.0:
        ok &= evals[:, 0] <= flatness * evals[:, 1]
    return coeffs, ok


def fit_plane(points, outlier: float = 0.2):
    """Plane coefficients for >= 3 points, or ``None`` when rejected."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) < 3:
        return None
    coeffs, ok = fit_planes(points[None], outlier)
    return coeffs[0] if ok[0] else None


# ---------------------------------------------------------------------------
# feature map and correspondences

class FeatureMap:
    """World-frame edge and planar feature points with k-d trees."""

    def __init__(self, edge_points, edge_rings, planar_points, planar_rings):
        self.edge_points = np.asarray(edge_points, dtype=float).reshape(-1, 3)
        self.edge_rings = np.asarray(edge_rings, dtype=np.int64).reshape(-1)
        self.planar_points = np.asarray(planar_points, dtype=float).reshape(-1, 3)
        self.planar_rings = np.asarray(planar_rings, dtype=np.int64).reshape(-1)
        self.edge_tree = cKDTree(self.edge_points) if len(self.edge_points) else None
        self.planar_tree = cKDTree(self.planar_points) if len(self.planar_points) else None

    @classmethod
    def empty(cls) -> "FeatureMap":
        z = np.zeros((0, 3))
        return cls(z, np.zeros(0), z, np.zeros(0))

    @classmethod
    def from_features(cls, features: FeatureSet, pose: Pose | None = None) -> "FeatureMap":
        f = features if pose is None else features.transformed(pose)
        return cls(f.edge_points, f.edge_rings, f.planar_points, f.planar_rings)

    @classmethod
    def from_keyframes(cls, keyframes) -> "FeatureMap":
        """Build from ``(pose, FeatureSet)`` pairs (features in sensor frame)."""
        parts = [f.transformed(p) for p, f in keyframes]
        if not parts:
            return cls.empty()
        return cls(np.concatenate([f.edge_points for f in parts]),
                   np.concatenate([f.edge_rings for f in parts]),
                   np.concatenate([f.planar_points for f in parts]),
                   np.concatenate([f.planar_rings for f in parts]))

    @property
    def is_empty(self) -> bool:
        return self.edge_tree is None and self.planar_tree is None

    def __len__(self):
        return len(self.edge_points) + len(self.planar_points)


def _knn(tree, n_points, queries, k):
    k = min(k, n_points)
    d, i = tree.query(queries, k=k)
    if k == 1:
        d, i = d[:, None], i[:, None]
    return d, i


def find_correspondences(features: FeatureSet, fmap: FeatureMap, guess: Pose,
                         config: RegistrationConfig | None = None) -> Correspondences:
    cfg = config or RegistrationConfig()
    out = Correspondences.empty()
    edges, planes = out.edges, out.planes

    if fmap.edge_tree is not None and features.n_edge and len(fmap.edge_points) >= 2:
        q = guess @ features.edge_points
        d, i = _knn(fmap.edge_tree, len(fmap.edge_points), q, cfg.edge_knn)
        ok = np.all(d <= cfg.max_nn_dist, axis=1) & (d.shape[1] >= 2)
        nb = fmap.edge_points[i]
        # neighbourhood must look like a line; the second anchor is taken along it
        Q = nb - nb.mean(axis=1, keepdims=True)
        ev, evec = np.linalg.eigh(np.einsum("nki,nkj->nij", Q, Q))
        ok &= ev[:, 2] > cfg.line_ratio * ev[:, 1]
        axis = evec[:, :, 2]
        vec = nb[:, 1:] - nb[:, :1]
        length = np.linalg.norm(vec, axis=2)
        cos = np.abs(np.einsum("nki,ni->nk", vec, axis)) / np.maximum(length, 1e-300)
        along = (cos > 0.9) & (length > 1e-6)
        other_ring = along & (fmap.edge_rings[i[:, 1:]] != fmap.edge_rings[i[:, :1]])
        pick = np.where(other_ring.any(axis=1), np.argmax(other_ring, axis=1), np.argmax(along, axis=1))
        ok &= along.any(axis=1)
        a = nb[:, 0]
        b = nb[np.arange(len(nb)), pick + 1]
        edges = EdgeCorrespondences(features.edge_points[ok], a[ok], b[ok])

    if fmap.planar_tree is not None and features.n_planar and len(fmap.planar_points) >= 3:
        q = guess @ features.planar_points
        d, i = _knn(fmap.planar_tree, len(fmap.planar_points), q, cfg.plane_knn)
        ok = np.all(d <= cfg.max_nn_dist, axis=1)
        coeffs, fit_ok = fit_planes(fmap.planar_points[i], cfg.plane_outlier, cfg.plane_flatness)
        ok &= fit_ok
        planes = PlaneCorrespondences(features.planar_points[ok], coeffs[ok])

    return Correspondences(edges, planes)


# ---------------------------------------------------------------------------
# stacked residuals and Jacobians

def residuals(pose: Pose, corr: Correspondences) -> np.ndarray:
    parts = []
    if len(corr.edges):
        parts.append(edge_residuals(pose @ corr.edges.src, corr.edges.a, corr.edges.b))
    if len(corr.planes):
        parts.append(plane_residuals(pose @ corr.planes.src, corr.planes.coeffs))
    return np.concatenate(parts) if parts else np.zeros(0)


def _point_jacobian(p, grad):
    """Row ``grad^T [I, -p^]`` for each world point."""
    return np.concatenate([grad, np.cross(p, grad)], axis=1)


def residuals_and_jacobian(pose: Pose, corr: Correspondences):
    """Stacked residuals (edges first) and their (m, 6) Jacobian w.r.t. a left twist."""
    r_parts, J_parts = [], []
    if len(corr.edges):
        p = pose @ corr.edges.src
        a, b = corr.edges.a, corr.edges.b
        u = (b - a) / np.linalg.norm(b - a, axis=1, keepdims=True)
        diff = (p - a) - np.einsum("ij,ij->i", p - a, u)[:, None] * u
        r = edge_residuals(p, a, b)
        safe = np.where(r > 1e-12, r, 1.0)
        grad = np.where((r > 1e-12)[:, None], diff / safe[:, None], 0.0)
        r_parts.append(r)
        J_parts.append(_point_jacobian(p, grad))
    if len(corr.planes):
        p = pose @ corr.planes.src
        c = corr.planes.coeffs
        norm = np.linalg.norm(c[:, :3], axis=1, keepdims=True)
        r_parts.append(plane_residuals(p, c))
        J_parts.append(_point_jacobian(p, c[:, :3] / norm))
    if not r_parts:
        return np.zeros(0), np.zeros((0, 6))
    return np.concatenate(r_parts), np.concatenate(J_parts)


def huber_weights(r, delta: float) -> np.ndarray:
    a = np.abs(r)
    return np.where(a <= delta, 1.0, delta / np.maximum(a, 1e-300))


def huber_cost(r, delta: float) -> float:
    a = np.abs(r)
    return float(np.sum(np.where(a <= delta, a * a, 2.0 * delta * a - delta * delta)))


def edge_offsets(x, a, b) -> np.ndarray:
    """Perpendicular offset vectors from ``x`` to the lines ``a``-``b``; their
    norms are the edge residuals."""
    x, a, b = (np.asarray(v, dtype=float).reshape(-1, 3) for v in (x, a, b))
    u = (b - a) / np.linalg.norm(b - a, axis=1, keepdims=True)
    return (x - a) - np.einsum("ij,ij->i", x - a, u)[:, None] * u, u


def _normal_equations(pose, corr, huber):
    """Huber-weighted ``H`` and gradient of the robust cost.

    Edge terms are linearized through their 3-vector offset rather than the
    scalar distance: the squared norm is the same cost, but the offset is
    linear in the point, which keeps Gauss-Newton well behaved when points sit
    within noise of their line.
    """
    H = np.zeros((6, 6))
    g = np.zeros(6)
    r_parts = []
    if len(corr.edges):
        p = pose @ corr.edges.src
        off, u = edge_offsets(p, corr.edges.a, corr.edges.b)
        d = np.linalg.norm(off, axis=1)
        w = huber_weights(d, huber)
        # d(off)/dp = I - u u^T ; d(p)/dxi = [I, -p^]
        P = np.eye(3)[None] - u[:, :, None] * u[:, None, :]
        Jp = np.concatenate([np.broadcast_to(np.eye(3), (len(p), 3, 3)), _skew_neg(p)], axis=2)
        J = P @ Jp
        H += np.einsum("n,nki,nkj->ij", w, J, J)
        g += np.einsum("n,nki,nk->i", w, J, off)
        r_parts.append(d)
    if len(corr.planes):
        p = pose @ corr.planes.src
        c = corr.planes.coeffs
        n = c[:, :3] / np.linalg.norm(c[:, :3], axis=1, keepdims=True)
        r = plane_residuals(p, c)
        w = huber_weights(r, huber)
        J = _point_jacobian(p, n)
        H += J.T @ (w[:, None] * J)
        g += J.T @ (w * r)
        r_parts.append(r)
    r = np.concatenate(r_parts) if r_parts else np.zeros(0)
    return r, H, g


def _skew_neg(p):
    """Stack of ``-p^`` matrices."""
    S = np.zeros((len(p), 3, 3))
    S[:, 0, 1], S[:, 0, 2] = p[:, 2], -p[:, 1]
    S[:, 1, 0], S[:, 1, 2] = -p[:, 2], p[:, 0]
    S[:, 2, 0], S[:, 2, 1] = p[:, 1], -p[:, 0]
    return S


def _lm_step(pose, corr, lam, cfg):
    """One damped step on fixed correspondences.

    Returns ``(pose, dxi, lam, cost_before, cost_after, H)``; ``dxi`` is None
    when no trial step reduced the robust cost.
    """
    r, H, g = _normal_equations(pose, corr, cfg.huber)
    cost0 = huber_cost(r, cfg.huber)
    for _ in range(cfg.max_lm_retries):
        dxi = np.linalg.solve(H + lam * np.eye(6), -g)
        cand = se3_exp(dxi) @ pose
        cost1 = huber_cost(residuals(cand, corr), cfg.huber)
        if cost1 <= cost0:
            return cand, dxi, max(lam / 10.0, 1e-12), cost0, cost1, H
        lam *= 10.0
    return pose, None, lam, cost0, cost0, H


def align_fixed(corr: Correspondences, initial: Pose, iterations: int = 10,
                config: RegistrationConfig | None = None):
    """Damped Gauss-Newton on a frozen correspondence set; returns ``(pose, costs)``."""
    cfg = config or RegistrationConfig()
    pose, lam = initial, cfg.damping
    costs = [huber_cost(residuals(pose, corr), cfg.huber)]
    for _ in range(iterations):
        pose, dxi, lam, _, cost1, _ = _lm_step(pose, corr, lam, cfg)
        if dxi is None:
            break
        costs.append(cost1)
    return pose, costs


def is_degenerate(H, ratio: float) -> bool:
    ev = np.linalg.eigvalsh(0.5 * (H + H.T))
    return bool(ev[-1] <= 0.0 or ev[0] < ratio * ev[-1])


def gauss_newton_align(features: FeatureSet, fmap: FeatureMap, initial: Pose,
                       config: RegistrationConfig | None = None) -> RegistrationResult:
    """Estimate the sensor pose that puts ``features`` onto ``fmap``.

    Features are re-matched at the current pose while steps are larger than
    ``rematch_tol`` (at most ``max_rematch`` times); after that the
    correspondence set is frozen so the
    iteration can settle instead of cycling between near-equal matchings.
    Each step is a Levenberg-style damped Gauss-Newton step on the
    Huber-weighted edge and plane residuals. A result is converged when the
    step norm drops below ``converge_tol`` and the normal equations are well
    conditioned.
    """
    cfg = config or RegistrationConfig()
    pose = initial
    lam = cfg.damping
    history = []
    degenerate = False
    converged = False
    corr = Correspondences.empty()
    frozen = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        if not frozen:
            corr = find_correspondences(features, fmap, pose, cfg)
        if len(corr) < 6:
            degenerate = True
            break
        pose, dxi, lam, cost0, cost1, H = _lm_step(pose, corr, lam, cfg)
        history.append(cost1)
        degenerate = is_degenerate(H, cfg.degeneracy_ratio)
        step = np.inf if dxi is None else np.linalg.norm(dxi)
        if step < cfg.converge_tol or (dxi is None and frozen):
            converged = not degenerate
            break
        frozen = frozen or step < cfg.rematch_tol or it >= cfg.max_rematch
    cost = float(np.sum(residuals(pose, corr) ** 2)) if len(corr) else 0.0
    return RegistrationResult(pose, it, cost, converged, degenerate,
                              len(corr.edges), len(corr.planes), history)
