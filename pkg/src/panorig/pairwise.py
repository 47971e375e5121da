"""Relative pose between two cameras from matched 3D points.

The cost is ``0.5 * sum ||p'_i - exp(xi) p_i||^2`` over the correspondence
set, minimised by Gauss-Newton on left perturbations of the pose and seeded
by the closed-form SVD alignment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometry, NotConverged, TooFewPoints
from .lie import Pose, exp_map, rotation_angle
from .matching import CorrespondenceSet


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 50
    convergence_eps: float = 1e-10
    huber_delta: float = 0.0  # metres; 0 disables the robust loss
    max_halvings: int = 40

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.convergence_eps > 0:
            raise ValueError("convergence_eps must be positive")
        if self.huber_delta < 0:
            raise ValueError("huber_delta must be >= 0")


@dataclass(frozen=True)
class PairwiseEstimate:
    pose: Pose  # maps camera-a points into camera b
    rmse: float
    iterations: int
    inlier_count: int
    objective_history: tuple = ()


def _check(c: CorrespondenceSet):
    if len(c) < 3:
        raise TooFewPoints(f"need at least 3 correspondences, got {len(c)}")
    a = c.points_a - c.points_a.mean(axis=0)
    s = np.linalg.svd(a, compute_uv=False)
    if s[0] == 0 or s[1] <= 1e-9 * s[0]:
        raise DegenerateGeometry("points are collinear; the rotation about their line is free")


def closed_form_align(c: CorrespondenceSet) -> Pose:
    """Least-squares rigid transform taking ``points_a`` onto ``points_b``."""
    _check(c)
    ca = c.points_a.mean(axis=0)
    cb = c.points_b.mean(axis=0)
    H = (c.points_a - ca).T @ (c.points_b - cb)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return Pose(R, cb - R @ ca)


def residuals(xi, c: CorrespondenceSet) -> np.ndarray:
    """``p'_i - exp(xi) p_i`` stacked as (N, 3)."""
    return _residuals_pose(exp_map(xi), c)


def _residuals_pose(T: Pose, c: CorrespondenceSet) -> np.ndarray:
    return c.points_b - T.apply(c.points_a)


def objective(xi, c: CorrespondenceSet) -> float:
    r = residuals(xi, c)
    return 0.5 * float(np.sum(r * r))


def residual_jacobians(T: Pose, c: CorrespondenceSet) -> np.ndarray:
    """(N, 3, 6) derivative of each residual w.r.t. a left perturbation of ``T``."""
    q = T.apply(c.points_a)
    J = np.zeros((len(q), 3, 6))
    J[:, :, :3] = -np.eye(3)
    # minus the point Jacobian [I | -hat(q)], i.e. hat(q) in the rotation block
    J[:, 0, 4], J[:, 0, 5] = -q[:, 2], q[:, 1]
    J[:, 1, 3], J[:, 1, 5] = q[:, 2], -q[:, 0]
    J[:, 2, 3], J[:, 2, 4] = -q[:, 1], q[:, 0]
    return J


def _weights(r: np.ndarray, delta: float) -> np.ndarray:
    if delta <= 0:
        return np.ones(len(r))
    n = np.linalg.norm(r, axis=1)
    w = np.ones(len(r))
    big = n > delta
    w[big] = delta / n[big]
    return w


def _cost(r: np.ndarray, delta: float) -> float:
    n2 = np.sum(r * r, axis=1)
    if delta <= 0:
        return 0.5 * float(n2.sum())
    n = np.sqrt(n2)
    return float(np.sum(np.where(n <= delta, 0.5 * n2, delta * (n - 0.5 * delta))))


def estimate_pose(c: CorrespondenceSet, cfg: SolverConfig | None = None) -> PairwiseEstimate:
    cfg = cfg or SolverConfig()
    _check(c)
    T = closed_form_align(c)
    r = _residuals_pose(T, c)
    cost = _cost(r, cfg.huber_delta)
    history = [cost]
    converged = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        w = _weights(r, cfg.huber_delta)
        J = residual_jacobians(T, c)
        H = np.einsum("n,nki,nkj->ij", w, J, J)
        g = np.einsum("n,nki,nk->i", w, J, r)
        try:
            delta = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError as exc:
            raise DegenerateGeometry("normal equations are singular") from exc
        step = 1.0
        accepted = False
        for _ in range(cfg.max_halvings):
            T_new = exp_map(step * delta) @ T
            r_new = _residuals_pose(T_new, c)
            cost_new = _cost(r_new, cfg.huber_delta)
            if cost_new <= cost:
                accepted = True
                break
            step *= 0.5
        if accepted:
            T, r, cost = T_new, r_new, cost_new
            history.append(cost)
        if not accepted or np.linalg.norm(step * delta) < cfg.convergence_eps:
            # no descent left at working precision counts as converged
            converged = True
            break
    rmse = math.sqrt(float(np.mean(np.sum(r * r, axis=1))))
    est = PairwiseEstimate(T, rmse, it, len(c), tuple(history))
    if not converged:
        raise NotConverged(f"pairwise solve did not converge in {cfg.max_iterations} iterations", est)
    return est


def pose_error(estimate: Pose, truth: Pose) -> tuple[float, float]:
    """Geodesic rotation error in degrees and translation error in centimetres."""
    rot = math.degrees(rotation_angle(estimate.rotation @ truth.rotation.T))
    trans = float(np.linalg.norm(estimate.translation - truth.translation)) * 100.0
    return rot, trans
