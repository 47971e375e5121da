"""Ring pose graph with a loop-closure edge, refined by Gauss-Newton.

Node poses ``x_i`` map camera-``i`` points into the reference frame (camera 1).
An edge ``(i, j)`` measures ``T_ij = x_j^-1 x_i``, the transform taking
camera-``i`` points into camera ``j``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import MissingEdge, NotConverged, SingularSystem
from .lie import Pose, exp_map, log_map, se3_left_jacobian_inv
from .pairwise import SolverConfig, pose_error

NUMERIC_STEP = 1e-7


@dataclass(frozen=True)
class PoseNode:
    id: int
    pose: Pose


@dataclass(frozen=True, eq=False)
class PoseEdge:
    i: int  # from
    j: int  # to
    measurement: Pose
    information: np.ndarray = field(default_factory=lambda: np.eye(6))

    def __post_init__(self):
        info = np.asarray(self.information, dtype=float)
        if info.shape != (6, 6):
            raise ValueError("information matrix must be 6x6")
        if np.max(np.abs(info - info.T)) > 1e-12:
            raise ValueError("information matrix must be symmetric")
        try:
            np.linalg.cholesky(info)
        except np.linalg.LinAlgError as exc:
            raise ValueError("information matrix must be positive definite") from exc
        object.__setattr__(self, "information", info)


@dataclass(frozen=True, eq=False)
class PoseGraph:
    nodes: list  # list[PoseNode], ids 1..N in order
    edges: list  # list[PoseEdge]
    fixed: int = 1

    def __post_init__(self):
        ids = [n.id for n in self.nodes]
        if ids != list(range(1, len(ids) + 1)):
            raise ValueError("node ids must be 1..N in order")
        if self.fixed not in ids:
            raise ValueError(f"fixed node {self.fixed} does not exist")
        for e in self.edges:
            if e.i not in ids or e.j not in ids:
                raise MissingEdge(f"edge ({e.i}, {e.j}) references a missing node")

    @property
    def n(self) -> int:
        return len(self.nodes)

    def poses(self) -> list:
        return [node.pose for node in self.nodes]

    def pose(self, node_id: int) -> Pose:
        return self.nodes[node_id - 1].pose

    def edge(self, i: int, j: int) -> PoseEdge:
        for e in self.edges:
            if (e.i, e.j) == (i, j):
                return e
        raise MissingEdge(f"no edge ({i}, {j})")

    def with_poses(self, poses) -> PoseGraph:
        return replace(self, nodes=[PoseNode(k + 1, p) for k, p in enumerate(poses)])


def ring_edges(measurements, information=None) -> list:
    """Edges ``(1,2), ..., (N-1,N), (N,1)`` from N relative-pose measurements."""
    n = len(measurements)
    infos = information if information is not None else [np.eye(6)] * n
    return [PoseEdge(k + 1, (k + 1) % n + 1, measurements[k], infos[k]) for k in range(n)]


def chain_initialize(pairwise, n: int) -> PoseGraph:
    """Fix camera 1 at identity and chain the measurements 1 -> 2 -> ... -> N.

    The closure edge ``(N, 1)`` is kept in the graph but not used here.
    """
    by_pair = {(e.i, e.j): e for e in pairwise}
    poses = [Pose.identity()]
    for i in range(1, n):
        e = by_pair.get((i, i + 1))
        if e is None:
            raise MissingEdge(f"ring chain is broken at ({i}, {i + 1})")
        poses.append(poses[-1] @ e.measurement.inverse())
    if n >= 2 and (n, 1) not in by_pair:
        raise MissingEdge(f"closure edge ({n}, 1) is missing")
    return PoseGraph([PoseNode(k + 1, p) for k, p in enumerate(poses)], list(pairwise), fixed=1)


def edge_residual(edge: PoseEdge, x_from: Pose, x_to: Pose) -> np.ndarray:
    """``log(T_ij^-1 x_j^-1 x_i)``: zero when prediction and measurement agree."""
    return log_map(edge.measurement.inverse() @ x_to.inverse() @ x_from)


def objective(g: PoseGraph, poses=None) -> float:
    poses = g.poses() if poses is None else poses
    total = 0.0
    for e in g.edges:
        r = edge_residual(e, poses[e.i - 1], poses[e.j - 1])
        total += float(r @ e.information @ r)
    return total


def _numeric_jacobians(e: PoseEdge, xi: Pose, xj: Pose):
    Ji = np.zeros((6, 6))
    Jj = np.zeros((6, 6))
    h = NUMERIC_STEP
    for k in range(6):
        d = np.zeros(6)
        d[k] = h
        up, dn = exp_map(d), exp_map(-d)
        Ji[:, k] = (edge_residual(e, up @ xi, xj) - edge_residual(e, dn @ xi, xj)) / (2 * h)
        Jj[:, k] = (edge_residual(e, xi, up @ xj) - edge_residual(e, xi, dn @ xj)) / (2 * h)
    return Ji, Jj


def _analytic_jacobians(e: PoseEdge, xi: Pose, xj: Pose):
    r = edge_residual(e, xi, xj)
    Ji = se3_left_jacobian_inv(-r) @ xi.inverse().adjoint()
    return Ji, -Ji


def optimize(g: PoseGraph, cfg: SolverConfig | None = None, jacobians: str = "numeric") -> PoseGraph:
    """Minimise the information-weighted residuals over every edge.

    Updates are ``x <- exp(delta) x``; the fixed node is never touched.
    Raises :class:`SingularSystem` if the free nodes are under-constrained.
    """
    cfg = cfg or SolverConfig()
    jac = {"numeric": _numeric_jacobians, "analytic": _analytic_jacobians}[jacobians]
    n = g.n
    free = [k for k in range(1, n + 1) if k != g.fixed]
    slot = {node_id: s for s, node_id in enumerate(free)}
    dim = 6 * len(free)
    poses = g.poses()
    cost = objective(g, poses)
    if dim == 0:
        return g
    converged = False
    for _ in range(cfg.max_iterations):
        H = np.zeros((dim, dim))
        b = np.zeros(dim)
        for e in g.edges:
            xi, xj = poses[e.i - 1], poses[e.j - 1]
            r = edge_residual(e, xi, xj)
            Ji, Jj = jac(e, xi, xj)
            blocks = [(e.i, Ji), (e.j, Jj)]
            for a, Ja in blocks:
                if a not in slot:
                    continue
                sa = slice(6 * slot[a], 6 * slot[a] + 6)
                b[sa] += Ja.T @ e.information @ r
                for c, Jc in blocks:
                    if c not in slot:
                        continue
                    sc = slice(6 * slot[c], 6 * slot[c] + 6)
                    H[sa, sc] += Ja.T @ e.information @ Jc
        scale = np.sqrt(np.maximum(np.diag(H), 0.0))
        if np.any(scale == 0):
            raise SingularSystem("a free node has no constraining edge")
        Hs = H / np.outer(scale, scale)
        if np.linalg.cond(Hs) > 1e12:
            raise SingularSystem("pose graph normal equations are rank deficient")
        try:
            L = np.linalg.cholesky(Hs)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem("pose graph normal equations are not positive definite") from exc
        y = np.linalg.solve(L, -b / scale)
        delta = np.linalg.solve(L.T, y) / scale

        step = 1.0
        accepted = False
        for _ in range(cfg.max_halvings):
            trial = list(poses)
            for node_id, s in slot.items():
                trial[node_id - 1] = exp_map(step * delta[6 * s : 6 * s + 6]) @ poses[node_id - 1]
            trial_cost = objective(g, trial)
            if trial_cost <= cost:
                accepted = True
                break
            step *= 0.5
        if accepted:
            poses, cost = trial, trial_cost
        if not accepted or np.linalg.norm(step * delta) < cfg.convergence_eps:
            converged = True
            break
    out = g.with_poses(poses)
    if not converged:
        raise NotConverged(f"pose graph did not converge in {cfg.max_iterations} iterations", out)
    return out


def closure_residual(g: PoseGraph) -> tuple[float, float]:
    """Mismatch between camera 1 and camera N carried back through ``T_N1``."""
    e = g.edge(g.n, 1)
    predicted_first = g.pose(g.n) @ e.measurement.inverse()
    return pose_error(predicted_first, g.pose(1))


def relative_poses(poses) -> list:
    """``x_j^-1 x_i`` around the ring, closure pair last."""
    n = len(poses)
    return [poses[(k + 1) % n].inverse() @ poses[k] for k in range(n)]


def node_errors(poses, truth) -> np.ndarray:
    """Per node ``(rot_deg, trans_cm)`` against ground truth, shape (N, 2)."""
    return np.array([pose_error(p, t) for p, t in zip(poses, truth)])


def node_twist_error(poses, truth) -> float:
    """Mean norm of ``log(truth^-1 pose)`` over nodes (radians and metres mixed)."""
    return float(np.mean([np.linalg.norm(log_map(t.inverse() @ p)) for p, t in zip(poses, truth)]))


def _pose_fields(T: Pose) -> str:
    q = Rotation.from_matrix(T.rotation).as_quat()  # x, y, z, w
    return " ".join(f"{v:.17g}" for v in (*T.translation, *q))


def _parse_pose_fields(values) -> Pose:
    t = np.array(values[:3], dtype=float)
    q = np.array(values[3:7], dtype=float)
    return Pose(Rotation.from_quat(q).as_matrix(), t)


def format_graph(g: PoseGraph, include_edges: bool = True) -> str:
    lines = [f"NODE {node.id} {_pose_fields(node.pose)}" for node in g.nodes]
    if include_edges:
        for e in g.edges:
            scale = float(np.mean(np.diag(e.information)))
            lines.append(f"EDGE {e.i} {e.j} {_pose_fields(e.measurement)} {scale:.17g}")
    return "\n".join(lines) + "\n"


def write_graph(path, g: PoseGraph, include_edges: bool = True) -> None:
    Path(path).write_text(format_graph(g, include_edges))


def write_nodes(path, poses) -> None:
    lines = [f"NODE {k + 1} {_pose_fields(p)}" for k, p in enumerate(poses)]
    Path(path).write_text("\n".join(lines) + "\n")


def parse_graph(text: str):
    """Return ``(poses by id, edges)`` from NODE/EDGE records."""
    poses, edges = {}, []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "NODE" and len(parts) == 9:
            poses[int(parts[1])] = _parse_pose_fields([float(x) for x in parts[2:]])
        elif parts[0] == "EDGE" and len(parts) == 11:
            vals = [float(x) for x in parts[3:]]
            edges.append(
                PoseEdge(int(parts[1]), int(parts[2]), _parse_pose_fields(vals[:7]), vals[7] * np.eye(6))
            )
        else:
            raise ValueError(f"line {lineno}: unrecognised graph record {line!r}")
    return poses, edges


def read_graph(path) -> PoseGraph:
    poses, edges = parse_graph(Path(path).read_text())
    ids = sorted(poses)
    return PoseGraph([PoseNode(k, poses[k]) for k in ids], edges, fixed=1)


def read_nodes(path) -> dict:
    poses, _ = parse_graph(Path(path).read_text())
    return poses
