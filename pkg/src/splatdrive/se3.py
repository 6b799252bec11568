"""Rigid transforms and rotation parameterization helpers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .gauss import quat_to_rotmat, rotmat_to_quat


@dataclass
class RigidPose:
    """SE(3) element: x_out = R @ x_in + t."""

    R: np.ndarray  # (3, 3)
    t: np.ndarray  # (3,)

    def __post_init__(self) -> None:
        self.R = np.ascontiguousarray(self.R, dtype=np.float64)
        self.t = np.ascontiguousarray(self.t, dtype=np.float64)
        if self.R.shape != (3, 3):
            raise InvalidInputError(f"pose R: expected (3, 3), got {self.R.shape}")
        if self.t.shape != (3,):
            raise InvalidInputError(f"pose t: expected (3,), got {self.t.shape}")
        err = np.abs(self.R @ self.R.T - np.eye(3)).max()
        if err > 1e-6:
            raise InvalidInputError(f"pose rotation is not orthonormal (err {err:.2e})")

    @classmethod
    def identity(cls) -> "RigidPose":
        return cls(np.eye(3), np.zeros(3))

    def compose(self, other: "RigidPose") -> "RigidPose":
        """self after other: (self * other)(x) = self(other(x))."""
        return RigidPose(self.R @ other.R, self.R @ other.t + self.t)

    def inverse(self) -> "RigidPose":
        return RigidPose(self.R.T, -self.R.T @ self.t)

    def transform(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.R.T + self.t

    def to_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.R
        m[:3, 3] = self.t
        return m

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "RigidPose":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise InvalidInputError(f"pose matrix: expected (4, 4), got {m.shape}")
        return cls(m[:3, :3], m[:3, 3])


def axis_angle_to_rotmat(v: np.ndarray) -> np.ndarray:
    """Rodrigues formula; v is axis * angle, batched over leading dims."""
    v = np.asarray(v, dtype=np.float64)
    theta = np.linalg.norm(v, axis=-1, keepdims=True)
    small = theta < 1e-12
    axis = np.where(small, 0.0, v / np.where(small, 1.0, theta))
    th = theta[..., 0]
    x, y, z = axis[..., 0], axis[..., 1], axis[..., 2]
    c, s = np.cos(th), np.sin(th)
    one_c = 1.0 - c
    R = np.empty(v.shape[:-1] + (3, 3))
    R[..., 0, 0] = c + x * x * one_c
    R[..., 0, 1] = x * y * one_c - z * s
    R[..., 0, 2] = x * z * one_c + y * s
    R[..., 1, 0] = y * x * one_c + z * s
    R[..., 1, 1] = c + y * y * one_c
    R[..., 1, 2] = y * z * one_c - x * s
    R[..., 2, 0] = z * x * one_c - y * s
    R[..., 2, 1] = z * y * one_c + x * s
    R[..., 2, 2] = c + z * z * one_c
    return R


def rotmat_to_axis_angle(R: np.ndarray) -> np.ndarray:
    """Log map via the canonical (w >= 0) quaternion; angle in [0, pi]."""
    q = rotmat_to_quat(R)
    w = q[..., 0]
    xyz = q[..., 1:]
    s = np.linalg.norm(xyz, axis=-1)
    angle = 2.0 * np.arctan2(s, w)
    # angle / sin(half) -> 2 / w as s -> 0
    small = s < 1e-12
    factor = np.where(small, 2.0, angle / np.where(small, 1.0, s))
    return xyz * factor[..., None]


def rotation_about_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
