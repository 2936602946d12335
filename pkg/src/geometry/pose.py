"""
pose.py
-------
Rigid-body poses, 4x4 homogeneous transforms and the relative-motion
targets used by the pose losses.

Poses are camera-to-world: ``X_world = R · X_cam + translation``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from src.geometry.quaternion import (
    Quaternion,
    quat_canonicalize,
    quat_inverse,
    quat_multiply,
    quat_normalize,
    quat_to_rotation_matrix,
    rotation_matrix_to_quat,
)
from src.utils.errors import GeometryError

ORTHONORMAL_TOL = 1e-9


def _vec3(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).reshape(3)
    return arr.copy()


@dataclass(frozen=True)
class Pose:
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: Quaternion = field(default_factory=Quaternion.identity)

    def __post_init__(self):
        object.__setattr__(self, "translation", _vec3(self.translation))
        if abs(self.rotation.norm() - 1.0) > 1e-9:
            raise GeometryError(f"pose rotation is not unit-norm: {self.rotation}")

    @classmethod
    def identity(cls):
        return cls(np.zeros(3), Quaternion.identity())

    def __eq__(self, other) -> bool:
        return (
            type(other) is type(self)
            and np.array_equal(self.translation, other.translation)
            and self.rotation == other.rotation
        )



class RelativePose(Pose):
    """Motion between two timesteps; same layout as ``Pose``."""


# ── Homogeneous transforms ───────────────────────────────────────────────────

def check_transform(T: np.ndarray, tol: float = ORTHONORMAL_TOL) -> np.ndarray:
    T = np.asarray(T, dtype=np.float64)
    if T.shape != (4, 4):
        raise GeometryError(f"homogeneous transform must be 4x4, got {T.shape}")
    if not np.array_equal(T[3], [0.0, 0.0, 0.0, 1.0]):
        raise GeometryError(f"last row must be (0, 0, 0, 1), got {T[3].tolist()}")
    R = T[:3, :3]
    if np.max(np.abs(R.T @ R - np.eye(3))) >= tol:
        raise GeometryError("rotation block is not orthonormal")
    return T


def pose_to_transform(p: Pose) -> np.ndarray:
    T = np.eye(4)
    T[:3, :3] = quat_to_rotation_matrix(p.rotation)
    T[:3, 3] = p.translation
    return T


def transform_to_pose(T: np.ndarray, cls=Pose) -> Pose:
    T = np.asarray(T, dtype=np.float64)
    return cls(T[:3, 3].copy(), rotation_matrix_to_quat(T[:3, :3]))


def invert_transform(T: np.ndarray) -> np.ndarray:
    R = T[:3, :3]
    out = np.eye(4)
    out[:3, :3] = R.T
    out[:3, 3] = -R.T @ T[:3, 3]
    return out


# ── Relative motion ──────────────────────────────────────────────────────────

def relative_pose_target(prev: Pose, curr: Pose) -> RelativePose:
    """
    Ground-truth relative motion in the form the pose losses compare against:
    world-frame translation difference and rotation q_prev⁻¹ ⊗ q_curr.
    """
    rotation = quat_canonicalize(
        quat_normalize(quat_multiply(quat_inverse(prev.rotation), curr.rotation))
    )
    return RelativePose(curr.translation - prev.translation, rotation)


def camera_motion(rel: RelativePose, prev_rotation: Quaternion) -> RelativePose:
    """
    Convert a world-frame ``relative_pose_target`` into the camera-frame motion
    T_prev⁻¹ · T_curr, which maps current-camera points into the previous camera.
    """
    R_prev = quat_to_rotation_matrix(prev_rotation)
    return RelativePose(R_prev.T @ rel.translation, rel.rotation)


def compose_camera_motion(prev: Pose, motion: RelativePose) -> Pose:
    """Inverse of ``camera_motion``: T_curr = T_prev · T(motion)."""
    T = pose_to_transform(prev) @ pose_to_transform(motion)
    rotation = quat_normalize(quat_multiply(prev.rotation, motion.rotation))
    return Pose(T[:3, 3], quat_canonicalize(rotation))
