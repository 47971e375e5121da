"""Rigid-body transforms on SE(3) and their tangent space se(3).

Twists are plain ``numpy`` 6-vectors ordered translation first,
``(rho_x, rho_y, rho_z, phi_x, phi_y, phi_z)``; ``phi`` is an axis-angle
rotation in radians. Perturbations are applied on the left everywhere:
``T <- exp(delta) @ T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AngleNearPi

# Series branches below this angle; the closed forms lose digits to cancellation
# (``theta - sin(theta)`` in particular) well before 1e-8.
SMALL_ANGLE = 1e-4
# log is refused this close to pi.
PI_MARGIN = 1e-6
# Switch to the symmetric-part axis extraction near pi.
NEAR_PI = 1e-3


def hat3(v) -> np.ndarray:
    """Cross-product matrix of ``v``: ``hat3(v) @ w == np.cross(v, w)``."""
    x, y, z = (float(c) for c in v)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee3(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def hat6(xi) -> np.ndarray:
    """4x4 matrix form of a twist."""
    xi = np.asarray(xi, dtype=float)
    out = np.zeros((4, 4))
    out[:3, :3] = hat3(xi[3:])
    out[:3, 3] = xi[:3]
    return out


def twist(rho, phi) -> np.ndarray:
    return np.concatenate([np.asarray(rho, dtype=float), np.asarray(phi, dtype=float)])


@dataclass(frozen=True, eq=False)
class Pose:
    """A rigid transform ``p -> rotation @ p + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> Pose:
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_translation(cls, t) -> Pose:
        return cls(np.eye(3), t)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> Pose:
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def apply(self, points) -> np.ndarray:
        """Transform one point ``(3,)`` or a stack ``(N, 3)``."""
        p = np.asarray(points, dtype=float)
        if p.ndim == 1:
            return self.rotation @ p + self.translation
        return p @ self.rotation.T + self.translation

    def __matmul__(self, other: Pose) -> Pose:
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def adjoint(self) -> np.ndarray:
        """6x6 adjoint, so that ``T @ exp(xi) == exp(adjoint(T) @ xi) @ T``."""
        ad = np.zeros((6, 6))
        ad[:3, :3] = self.rotation
        ad[3:, 3:] = self.rotation
        ad[:3, 3:] = hat3(self.translation) @ self.rotation
        return ad

    def allclose(self, other: Pose, atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0.0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0.0, atol=atol)
        )

    def is_identity(self) -> bool:
        """Exactly the identity, with no tolerance."""
        return bool(np.array_equal(self.rotation, np.eye(3)) and not np.any(self.translation))

    def to_row12(self) -> np.ndarray:
        """Row-major ``[R | t]`` as 12 numbers."""
        return np.hstack([self.rotation, self.translation[:, None]]).reshape(12)

    @classmethod
    def from_row12(cls, values) -> Pose:
        m = np.asarray(values, dtype=float).reshape(3, 4)
        return cls(m[:, :3], m[:, 3])

    def __repr__(self):
        return f"Pose(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def format_pose(T: Pose) -> str:
    return " ".join(f"{x:.17g}" for x in T.to_row12())


def parse_pose(line: str) -> Pose:
    values = [float(x) for x in line.split()]
    if len(values) != 12:
        raise ValueError(f"expected 12 numbers for a pose, got {len(values)}")
    return Pose.from_row12(values)


def _rodrigues_coeffs(theta: float):
    """Return ``sin(t)/t``, ``(1-cos(t))/t^2``, ``(t-sin(t))/t^3``."""
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        return (
            1.0 - t2 / 6.0 + t2 * t2 / 120.0,
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
        )
    s = math.sin(theta)
    half = math.sin(0.5 * theta)
    # 1 - cos(t) = 2 sin^2(t/2) avoids cancellation for small t
    return s / theta, 2.0 * half * half / theta**2, (theta - s) / theta**3


def so3_exp(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    a, b, _ = _rodrigues_coeffs(theta)
    K = hat3(phi)
    return np.eye(3) + a * K + b * (K @ K)


def so3_left_jacobian(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    _, b, c = _rodrigues_coeffs(theta)
    K = hat3(phi)
    return np.eye(3) + b * K + c * (K @ K)


def so3_left_jacobian_inv(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        e = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        half = 0.5 * theta
        e = (1.0 - half / math.tan(half)) / theta**2
    K = hat3(phi)
    return np.eye(3) - 0.5 * K + e * (K @ K)


def rotation_angle(R: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, in radians."""
    c = (np.trace(R) - 1.0) / 2.0
    s = np.linalg.norm(vee3(R - R.T)) / 2.0
    return math.atan2(s, min(1.0, max(-1.0, c)))


def so3_log(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    c = min(1.0, max(-1.0, (np.trace(R) - 1.0) / 2.0))
    w = vee3(R - R.T) / 2.0
    s = float(np.linalg.norm(w))
    theta = math.atan2(s, c)
    if theta > math.pi - PI_MARGIN:
        raise AngleNearPi(f"rotation angle {theta!r} is within {PI_MARGIN} of pi")
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        return w * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0)
    if theta > math.pi - NEAR_PI:
        B = (R + R.T) / 2.0 - c * np.eye(3)
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / math.sqrt(B[k, k] * (1.0 - c))
        axis /= np.linalg.norm(axis)
        if axis @ w < 0:
            axis = -axis
        return theta * axis
    return w * (theta / s)


def exp_map(xi) -> Pose:
    xi = np.asarray(xi, dtype=float)
    rho, phi = xi[:3], xi[3:]
    theta = float(np.linalg.norm(phi))
    a, b, c = _rodrigues_coeffs(theta)
    K = hat3(phi)
    K2 = K @ K
    R = np.eye(3) + a * K + b * K2
    V = np.eye(3) + b * K + c * K2
    return Pose(R, V @ rho)


def log_map(T: Pose) -> np.ndarray:
    """Inverse of :func:`exp_map`. Raises :class:`AngleNearPi` near a half turn."""
    phi = so3_log(T.rotation)
    rho = so3_left_jacobian_inv(phi) @ T.translation
    return twist(rho, phi)


def point_jacobian(T: Pose, p) -> np.ndarray:
    """Derivative of ``exp(delta) @ T @ p`` w.r.t. ``delta`` at zero, shape (3, 6)."""
    q = T.apply(p)
    return np.hstack([np.eye(3), -hat3(q)])


def _se3_q(rho, phi) -> np.ndarray:
    theta = float(np.linalg.norm(phi))
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        c1 = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
        c2 = 1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0
        c3 = 1.0 / 120.0 - t2 / 2520.0
    else:
        s, c = math.sin(theta), math.cos(theta)
        c1 = (theta - s) / theta**3
        c2 = (theta * theta + 2.0 * c - 2.0) / (2.0 * theta**4)
        c3 = (2.0 * theta - 3.0 * s + theta * c) / (2.0 * theta**5)
    P, F = hat3(rho), hat3(phi)
    FP, PF = F @ P, P @ F
    FPF = FP @ F
    FF = F @ F
    return (
        0.5 * P
        + c1 * (FP + PF + FPF)
        + c2 * (FF @ P + PF @ F - 3.0 * FPF)
        + c3 * (FPF @ F + F @ FPF)
    )


def se3_left_jacobian(xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    J = so3_left_jacobian(xi[3:])
    out = np.zeros((6, 6))
    out[:3, :3] = J
    out[3:, 3:] = J
    out[:3, 3:] = _se3_q(xi[:3], xi[3:])
    return out


def se3_left_jacobian_inv(xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    Ji = so3_left_jacobian_inv(xi[3:])
    out = np.zeros((6, 6))
    out[:3, :3] = Ji
    out[3:, 3:] = Ji
    out[:3, 3:] = -Ji @ _se3_q(xi[:3], xi[3:]) @ Ji
    return out


def is_valid_pose(T: Pose, tol: float = 1e-9) -> bool:
    R = T.rotation
    return bool(
        np.linalg.norm(R.T @ R - np.eye(3)) < tol and abs(np.linalg.det(R) - 1.0) < tol
    )
