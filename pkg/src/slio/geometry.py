"""Minimal rigid-body math on SO(3) / SE(3).

Rotations are plain 3x3 numpy arrays (no quaternion state; quaternions
appear only at the trajectory-file boundary). All reals are double
precision. Small-angle branches switch at 1e-8 where rounding noise would
otherwise dominate the closed forms.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SMALL_ANGLE = 1e-8


def skew(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix [v]x with [v]x @ w == cross(v, w)."""
    x, y, z = v
    return np.array([[0.0, -z, y],
                     [z, 0.0, -x],
                     [-y, x, 0.0]])


def exp_so3(theta: np.ndarray) -> np.ndarray:
    """Rodrigues exponential map; second-order Taylor below SMALL_ANGLE."""
    theta = np.asarray(theta, dtype=np.float64)
    angle = float(np.linalg.norm(theta))
    k = skew(theta)
    if angle < SMALL_ANGLE:
        return np.eye(3) + k + 0.5 * (k @ k)
    a2 = angle * angle
    return np.eye(3) + (np.sin(angle) / angle) * k \
        + ((1.0 - np.cos(angle)) / a2) * (k @ k)


def log_so3(rot: np.ndarray) -> np.ndarray:
    """Inverse of exp_so3; axis extraction from R + I near angle pi."""
    trace = float(np.trace(rot))
    cos_angle = min(1.0, max(-1.0, 0.5 * (trace - 1.0)))
    angle = float(np.arccos(cos_angle))
    vee = 0.5 * np.array([rot[2, 1] - rot[1, 2],
                          rot[0, 2] - rot[2, 0],
                          rot[1, 0] - rot[0, 1]])
    if angle < SMALL_ANGLE:
        return vee
    if np.pi - angle < 1e-6:
        # sin(angle) ~ 0: take the axis from the symmetric part
        sym = 0.5 * (rot + np.eye(3))
        axis_idx = int(np.argmax(np.diag(sym)))
        axis = sym[:, axis_idx] / np.sqrt(max(sym[axis_idx, axis_idx], 1e-30))
        axis = axis / np.linalg.norm(axis)
        # pick the sign consistent with the antisymmetric part
        if np.dot(axis, vee) < 0.0:
            axis = -axis
        return axis * angle
    return vee * (angle / np.sin(angle))


def exp_so3_batch(thetas: np.ndarray) -> np.ndarray:
    """Vectorized Rodrigues for (N, 3) tangent vectors -> (N, 3, 3)."""
    thetas = np.asarray(thetas, dtype=np.float64)
    n = thetas.shape[0]
    angles = np.linalg.norm(thetas, axis=1)
    out = np.tile(np.eye(3), (n, 1, 1))
    k = np.zeros((n, 3, 3))
    k[:, 0, 1] = -thetas[:, 2]
    k[:, 0, 2] = thetas[:, 1]
    k[:, 1, 0] = thetas[:, 2]
    k[:, 1, 2] = -thetas[:, 0]
    k[:, 2, 0] = -thetas[:, 1]
    k[:, 2, 1] = thetas[:, 0]
    k2 = k @ k
    small = angles < SMALL_ANGLE
    a = np.where(small, 1.0, angles)
    c1 = np.where(small, 1.0, np.sin(a) / a)
    c2 = np.where(small, 0.5, (1.0 - np.cos(a)) / (a * a))
    out += c1[:, None, None] * k + c2[:, None, None] * k2
    return out


def is_rotation(rot: np.ndarray, tol: float = 1e-9) -> bool:
    return (np.abs(rot.T @ rot - np.eye(3)).max() < tol
            and abs(np.linalg.det(rot) - 1.0) < tol)


@dataclass
class PoseSE3:
    """Rigid transform: x_out = rotation @ x_in + translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @staticmethod
    def identity() -> "PoseSE3":
        return PoseSE3()

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Apply to one point (3,) or a batch (N, 3)."""
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim == 1:
            return self.rotation @ pts + self.translation
        return pts @ self.rotation.T + self.translation

    def compose(self, other: "PoseSE3") -> "PoseSE3":
        return PoseSE3(self.rotation @ other.rotation,
                       self.rotation @ other.translation + self.translation)

    def inverse(self) -> "PoseSE3":
        rt = self.rotation.T
        return PoseSE3(rt.copy(), -(rt @ self.translation))

    def copy(self) -> "PoseSE3":
        return PoseSE3(self.rotation.copy(), self.translation.copy())


def transform_point(pose: PoseSE3, point: np.ndarray) -> np.ndarray:
    return pose.transform(point)


def rotation_to_quaternion(rot: np.ndarray) -> np.ndarray:
    """Rotation matrix -> (qx, qy, qz, qw), w >= 0."""
    trace = rot[0, 0] + rot[1, 1] + rot[2, 2]
    if trace > 0.0:
        s = np.sqrt(trace + 1.0) * 2.0
        qw = 0.25 * s
        qx = (rot[2, 1] - rot[1, 2]) / s
        qy = (rot[0, 2] - rot[2, 0]) / s
        qz = (rot[1, 0] - rot[0, 1]) / s
    elif rot[0, 0] > rot[1, 1] and rot[0, 0] > rot[2, 2]:
        s = np.sqrt(1.0 + rot[0, 0] - rot[1, 1] - rot[2, 2]) * 2.0
        qw = (rot[2, 1] - rot[1, 2]) / s
        qx = 0.25 * s
        qy = (rot[0, 1] + rot[1, 0]) / s
        qz = (rot[0, 2] + rot[2, 0]) / s
    elif rot[1, 1] > rot[2, 2]:
        s = np.sqrt(1.0 + rot[1, 1] - rot[0, 0] - rot[2, 2]) * 2.0
        qw = (rot[0, 2] - rot[2, 0]) / s
        qx = (rot[0, 1] + rot[1, 0]) / s
        qy = 0.25 * s
        qz = (rot[1, 2] + rot[2, 1]) / s
    else:
        s = np.sqrt(1.0 + rot[2, 2] - rot[0, 0] - rot[1, 1]) * 2.0
        qw = (rot[1, 0] - rot[0, 1]) / s
        qx = (rot[0, 2] + rot[2, 0]) / s
        qy = (rot[1, 2] + rot[2, 1]) / s
        qz = 0.25 * s
    q = np.array([qx, qy, qz, qw])
    if q[3] < 0.0:
        q = -q
    return q / np.linalg.norm(q)


def quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    """(qx, qy, qz, qw) -> rotation matrix."""
    qx, qy, qz, qw = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qz * qw), 2 * (qx * qz + qy * qw)],
        [2 * (qx * qy + qz * qw), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qx * qw)],
        [2 * (qx * qz - qy * qw), 2 * (qy * qz + qx * qw), 1 - 2 * (qx * qx + qy * qy)],
    ])
