"""SE(3) keyframe pose graph with Schur-complement marginalization.

Node updates are left-multiplicative, ``T <- exp(dxi) T``. For an edge
``err = log(Z^-1 Ti^-1 Tj)`` with measurement ``Z`` this gives the Jacobians
``-Jr^-1(err) Ad(Tj^-1)`` with respect to node i and ``+Jr^-1(err) Ad(Tj^-1)`` with
respect to node j.
The normal equations are written ``H dx = b`` with ``b = -J^T W e``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    Pose, Rotation, adjoint, right_jacobian_inv, right_jacobian_inv_approx, se3_exp, se3_log,
)

log = logging.getLogger(__name__)


class GaugeError(ValueError):
    """The graph has no fixed node and no prior, so its gauge is free."""


class SingularSystemError(np.linalg.LinAlgError):
    pass


@dataclass
class GraphNode:
    id: int
    pose: Pose
    fixed: bool = False


@dataclass
class GraphEdge:
    i: int
    j: int
    measurement: Pose
    information: np.ndarray = field(default_factory=lambda: np.eye(6))
    kind: str = "odom"

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError("edge endpoints must differ")
        info = np.asarray(self.information, dtype=float)
        if info.shape != (6, 6) or not np.allclose(info, info.T, atol=1e-12):
            raise ValueError("information must be a symmetric 6x6 matrix")
        self.information = 0.5 * (info + info.T)


@dataclass
class MarginalPrior:
    """Quadratic prior ``dx^T H dx - 2 b^T dx`` left behind by marginalization.

    ``dx`` stacks ``log(T_k T_lin_k^-1)`` over ``ids``.
    """

    ids: list
    H: np.ndarray
    b: np.ndarray
    linearization: dict

    def deltas(self, poses: dict) -> np.ndarray:
        return np.concatenate([
            se3_log(poses[k] @ self.linearization[k].inverse()) for k in self.ids
        ]) if self.ids else np.zeros(0)


@dataclass
class HessianSystem:
    H: np.ndarray
    b: np.ndarray
    ids: list
    cost: float = 0.0

    @property
    def index(self) -> dict:
        return {k: n for n, k in enumerate(self.ids)}

    def block_slice(self, node_id) -> slice:
        n = self.index[node_id]
        return slice(6 * n, 6 * n + 6)


@dataclass
class OptimizeReport:
    iterations: int
    initial_cost: float
    final_cost: float
    converged: bool
    diverged: bool = False
    cost_history: list = field(default_factory=list)


class PoseGraph:
    def __init__(self):
        self.nodes: dict[int, GraphNode] = {}
        self.edges: list[GraphEdge] = []
        self.prior: MarginalPrior | None = None

    def add_node(self, node_id: int, pose: Pose, fixed: bool = False) -> GraphNode:
        if node_id in self.nodes:
            raise ValueError(f"duplicate node id {node_id}")
        node = GraphNode(node_id, pose, fixed)
        self.nodes[node_id] = node
        return node

    def add_edge(self, i: int, j: int, measurement: Pose, information=None, kind: str = "odom"):
        if i not in self.nodes or j not in self.nodes:
            raise KeyError(f"edge ({i}, {j}) references an unknown node")
        edge = GraphEdge(i, j, measurement, np.eye(6) if information is None else information, kind)
        self.edges.append(edge)
        return edge

    def poses(self) -> dict:
        return {k: n.pose for k, n in self.nodes.items()}

    def free_ids(self) -> list:
        return [k for k in sorted(self.nodes) if not self.nodes[k].fixed]

    def copy(self) -> "PoseGraph":
        g = PoseGraph()
        for k, n in self.nodes.items():
            g.nodes[k] = GraphNode(k, n.pose, n.fixed)
        g.edges = list(self.edges)
        g.prior = self.prior
        return g

    def cost(self) -> float:
        return _total_cost(self, self.poses())


# ---------------------------------------------------------------------------

def edge_error(T_ij: Pose, T_i: Pose, T_j: Pose) -> np.ndarray:
    """``log(T_ij^-1 T_i^-1 T_j)`` as a ``[rho, phi]`` twist."""
    return se3_log(T_ij.inverse() @ T_i.inverse() @ T_j)


def edge_jacobians(e, T_j: Pose, exact: bool = False):
    """Jacobians of the edge error with respect to nodes i and j; ``exact`` swaps the first-order Jr^-1 for the full series."""
    Jinv = right_jacobian_inv(e) if exact else right_jacobian_inv_approx(e)
    B = Jinv @ adjoint(T_j.inverse())
    return -B, B


def _prior_terms(prior: MarginalPrior, poses: dict):
    dx = prior.deltas(poses)
    cost = float(dx @ prior.H @ dx - 2.0 * prior.b @ dx)
    return dx, cost


def _total_cost(graph: PoseGraph, poses: dict) -> float:
    cost = 0.0
    for e in graph.edges:
        r = edge_error(e.measurement, poses[e.i], poses[e.j])
        cost += float(r @ e.information @ r)
    if graph.prior is not None:
        cost += _prior_terms(graph.prior, poses)[1]
    return cost


def _assemble(edges, prior, poses, variable_ids, exact=False):
    index = {k: n for n, k in enumerate(variable_ids)}
    n = len(variable_ids)
    H = np.zeros((6 * n, 6 * n))
    b = np.zeros(6 * n)
    cost = 0.0
    for e in edges:
        r = edge_error(e.measurement, poses[e.i], poses[e.j])
        A, B = edge_jacobians(r, poses[e.j], exact)
        W = e.information
        cost += float(r @ W @ r)
        blocks = [(index.get(e.i), A), (index.get(e.j), B)]
        for ni, Ji in blocks:
            if ni is None:
                continue
            si = slice(6 * ni, 6 * ni + 6)
            b[si] -= Ji.T @ W @ r
            for nk, Jk in blocks:
                if nk is None:
                    continue
                sk = slice(6 * nk, 6 * nk + 6)
                H[si, sk] += Ji.T @ W @ Jk
    if prior is not None:
        dx, pcost = _prior_terms(prior, poses)
        cost += pcost
        pos = np.concatenate([np.arange(6 * index[k], 6 * index[k] + 6) for k in prior.ids])
        H[np.ix_(pos, pos)] += prior.H
        b[pos] += prior.b - prior.H @ dx
    return HessianSystem(H, b, list(variable_ids), cost)


def assemble(graph: PoseGraph, exact: bool = False) -> HessianSystem:
    """Gauss-Newton normal equations over the free nodes of ``graph``."""
    if not any(n.fixed for n in graph.nodes.values()) and graph.prior is None:
        raise GaugeError("pose graph needs a fixed node or a marginal prior")
    return _assemble(graph.edges, graph.prior, graph.poses(), graph.free_ids(), exact)


def marginalize(system: HessianSystem, marginal_ids) -> MarginalPrior:
    """Schur-eliminate ``marginal_ids`` and return the reduced system on the rest.

    ``linearization`` of the result is left empty; callers that keep the prior
    across pose updates fill it with the poses the system was built at.
    """
    index = system.index
    m_ids = [k for k in system.ids if k in set(marginal_ids)]
    r_ids = [k for k in system.ids if k not in set(marginal_ids)]
    m = np.concatenate([np.arange(6 * index[k], 6 * index[k] + 6) for k in m_ids]) if m_ids else np.zeros(0, int)
    r = np.concatenate([np.arange(6 * index[k], 6 * index[k] + 6) for k in r_ids]) if r_ids else np.zeros(0, int)
    H, b = system.H, system.b
    if m.size == 0:
        return MarginalPrior(r_ids, H[np.ix_(r, r)].copy(), b[r].copy(), {})
    Hmm = H[np.ix_(m, m)]
    Hmm = 0.5 * (Hmm + Hmm.T)
    if np.linalg.eigvalsh(Hmm)[0] < 1e-12:
        Hmm = Hmm + 1e-9 * np.eye(len(m))
    try:
        L = np.linalg.cholesky(Hmm)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError("H_mm is singular after regularization") from exc
    Hrm = H[np.ix_(r, m)]
    X = np.linalg.solve(L, Hrm.T)          # L^-1 H_mr
    y = np.linalg.solve(L, b[m])
    H_red = H[np.ix_(r, r)] - X.T @ X
    b_red = b[r] - X.T @ y
    return MarginalPrior(r_ids, 0.5 * (H_red + H_red.T), b_red, {})


def marginalize_node(graph: PoseGraph, node_id: int, exact: bool = False) -> MarginalPrior:
    """Remove ``node_id`` from ``graph``, folding its edges and the current prior
    into a new prior over the remaining connected free nodes."""
    poses = graph.poses()
    touching = [e for e in graph.edges if node_id in (e.i, e.j)]
    involved = set()
    for e in touching:
        involved.update((e.i, e.j))
    if graph.prior is not None:
        involved.update(graph.prior.ids)
    involved.add(node_id)
    variables = [k for k in sorted(involved) if not graph.nodes[k].fixed]
    system = _assemble(touching, graph.prior, poses, variables, exact)
    prior = marginalize(system, [node_id])
    prior.linearization = {k: poses[k] for k in prior.ids}
    graph.edges = [e for e in graph.edges if node_id not in (e.i, e.j)]
    del graph.nodes[node_id]
    graph.prior = prior if prior.ids else None
    return prior


def optimize(graph: PoseGraph, max_iters: int = 20, damping: float = 1e-6,
             tol: float = 1e-8, exact: bool = False) -> OptimizeReport:
    """Levenberg-damped Gauss-Newton over the free nodes, in place.

    Fixed nodes are never touched. A step is kept only if it lowers the total
    cost; otherwise damping grows tenfold and the step is retried.
    """
    system = assemble(graph, exact)
    initial = system.cost
    history = [initial]
    ids = system.ids
    lam = damping
    converged = False
    it = 0
    if not ids:
        return OptimizeReport(0, initial, initial, True, False, history)
    for it in range(1, max_iters + 1):
        accepted = False
        for _ in range(10):
            A = system.H + lam * np.eye(len(system.b))
            try:
                dx = np.linalg.solve(A, system.b)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            if np.max(np.abs(dx)) < tol:
                converged = True
                break
            trial = graph.poses()
            for n, k in enumerate(ids):
                trial[k] = se3_exp(dx[6 * n:6 * n + 6]) @ trial[k]
            new_cost = _total_cost(graph, trial)
            if new_cost <= system.cost:
                for k in ids:
                    graph.nodes[k].pose = trial[k]
                lam = max(lam / 10.0, 1e-12)
                accepted = True
                break
            lam *= 10.0
        if converged or not accepted:
            converged = converged or not accepted
            break
        system = assemble(graph, exact)
        history.append(system.cost)
    final = _total_cost(graph, graph.poses())
    diverged = final > 10.0 * max(initial, 1e-300)
    if diverged:
        log.warning("pose graph optimization diverged: cost %.3g -> %.3g", initial, final)
    return OptimizeReport(it, initial, final, converged, diverged, history)


# ---------------------------------------------------------------------------
# plain-text dump

def _pose_fields(p: Pose) -> str:
    w, x, y, z = p.rotation.q
    t = p.translation
    return " ".join(f"{v:.9g}" for v in (*t, x, y, z, w))


def _parse_pose(vals) -> Pose:
    tx, ty, tz, qx, qy, qz, qw = (float(v) for v in vals)
    return Pose(Rotation((qw, qx, qy, qz)), (tx, ty, tz))


def write_graph(graph: PoseGraph, path) -> None:
    """``VERTEX id tx ty tz qx qy qz qw`` / ``EDGE i j tx ty tz qx qy qz qw`` lines."""
    with open(path, "w") as fh:
        for k in sorted(graph.nodes):
            fh.write(f"VERTEX {k} {_pose_fields(graph.nodes[k].pose)}\n")
        for e in graph.edges:
            fh.write(f"EDGE {e.i} {e.j} {_pose_fields(e.measurement)}\n")


def read_graph(path) -> PoseGraph:
    graph = PoseGraph()
    first = True
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "VERTEX":
                graph.add_node(int(parts[1]), _parse_pose(parts[2:9]), fixed=first)
                first = False
            elif parts[0] == "EDGE":
                graph.add_edge(int(parts[1]), int(parts[2]), _parse_pose(parts[3:10]))
            else:
                raise ValueError(f"unknown graph record {parts[0]!r}")
    return graph
