"""
quaternion.py
-------------
Unit-quaternion algebra in (w, x, y, z) order, Hamilton convention.

All functions are pure and safe to call from any thread.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from src.utils.errors import GeometryError

_NORM_EPS = 1e-300


@dataclass(frozen=True)
class Quaternion:
    w: float
    x: float
    y: float
    z: float

    # ── Constructors / views ─────────────────────────────────────────────────

    @classmethod
    def identity(cls) -> "Quaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, values) -> "Quaternion":
        arr = np.asarray(values, dtype=np.float64).reshape(4)
        return cls(float(arr[0]), float(arr[1]), float(arr[2]), float(arr[3]))

    @classmethod
    def from_axis_angle(cls, axis, angle_rad: float) -> "Quaternion":
        axis = np.asarray(axis, dtype=np.float64).reshape(3)
        n = float(np.linalg.norm(axis))
        if n <= _NORM_EPS:
            raise GeometryError("rotation axis has zero length")
        axis = axis / n
        half = 0.5 * angle_rad
        s = math.sin(half)
        return cls(math.cos(half), axis[0] * s, axis[1] * s, axis[2] * s)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z], dtype=np.float64)

    def norm(self) -> float:
        return math.sqrt(self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z)

    def __neg__(self) -> "Quaternion":
        return Quaternion(-self.w, -self.x, -self.y, -self.z)


# ── Operations ───────────────────────────────────────────────────────────────

def quat_normalize(q: Quaternion) -> Quaternion:
    n = q.norm()
    if not n > _NORM_EPS or not math.isfinite(n):
        raise GeometryError(f"degenerate rotation: quaternion {q} has norm {n}")
    return Quaternion(q.w / n, q.x / n, q.y / n, q.z / n)


def quat_multiply(a: Quaternion, b: Quaternion) -> Quaternion:
    """Hamilton product a ⊗ b (apply b first, then a)."""
    return Quaternion(
        a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
        a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
        a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
    )


def quat_inverse(q: Quaternion) -> Quaternion:
    # unit norm assumed: inverse == conjugate
    return Quaternion(q.w, -q.x, -q.y, -q.z)


def quat_canonicalize(q: Quaternion) -> Quaternion:
    return -q if q.w < 0.0 else q


def quat_to_rotation_matrix(q: Quaternion) -> np.ndarray:
    w, x, y, z = q.w, q.x, q.y, q.z
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ],
        dtype=np.float64,
    )


def rotation_matrix_to_quat(R: np.ndarray) -> Quaternion:
    """Inverse of ``quat_to_rotation_matrix``; result is canonical (w >= 0)."""
    R = np.asarray(R, dtype=np.float64)
    trace = R[0, 0] + R[1, 1] + R[2, 2]

    if trace > 0.0:
        s = 2.0 * math.sqrt(trace + 1.0)
        q = Quaternion(0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s)
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = Quaternion((R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s)
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = Quaternion((R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s)
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = Quaternion((R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s)

    return quat_canonicalize(quat_normalize(q))


def rotate_vector(q: Quaternion, v) -> np.ndarray:
    return quat_to_rotation_matrix(q) @ np.asarray(v, dtype=np.float64).reshape(3)


def angular_error_deg(a: Quaternion, b: Quaternion) -> float:
    """Geodesic angle between two unit quaternions, in [0, 180] degrees."""
    dot = abs(a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z)
    return math.degrees(2.0 * math.acos(min(1.0, dot)))
