"""
pose_terms.py
-------------
Batched, differentiable pose quantities the pose losses are built from.

Rotations are (N, 4) tensors in (w, x, y, z) order. Predicted rotations are
normalized and moved to the w ≥ 0 hemisphere before any Euclidean residual.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from src.autodiff import ops
from src.autodiff.tensor import Tensor
from src.geometry.pose import Pose, RelativePose
from src.geometry.quaternion import Quaternion
from src.utils.errors import GeometryError

TRAINING_NORM_EPS = 1e-12
_CONJUGATE = np.array([1.0, -1.0, -1.0, -1.0])


@dataclass
class PoseBatch:
    translation: Tensor     # (N, 3)
    rotation: Tensor        # (N, 4), unit rows

    @property
    def batch(self) -> int:
        return self.translation.shape[0]

    @classmethod
    def from_poses(cls, poses: Sequence[Pose], requires_grad: bool = False) -> "PoseBatch":
        t = np.stack([p.translation for p in poses])
        q = np.stack([p.rotation.as_array() for p in poses])
        return cls(Tensor(t, requires_grad=requires_grad), Tensor(q, requires_grad=requires_grad))

    def detach(self) -> "PoseBatch":
        return PoseBatch(self.translation.detach(), self.rotation.detach())

    def to_poses(self, cls=Pose) -> list[Pose]:
        out = []
        for t, q in zip(self.translation.values, self.rotation.values):
            q = q / np.linalg.norm(q)
            out.append(cls(t.copy(), Quaternion.from_array(q)))
        return out


@dataclass
class PosePrediction:
    """Raw network output: translation (N, 3) and un-normalized rotation (N, 4)."""

    translation: Tensor
    rotation_raw: Tensor

    def normalized(self, eps: float = TRAINING_NORM_EPS) -> PoseBatch:
        return PoseBatch(self.translation, canonical_rotation(self.rotation_raw, eps=eps))


PoseLike = Union[Pose, Sequence[Pose], PoseBatch]


def as_pose_batch(p: PoseLike) -> PoseBatch:
    if isinstance(p, PoseBatch):
        return p
    if isinstance(p, Pose):
        return PoseBatch.from_poses([p])
    return PoseBatch.from_poses(list(p))


# ── Differentiable quaternion helpers ────────────────────────────────────────

def hemisphere_sign(q: Tensor) -> Tensor:
    """Constant ±1 tensor shaped like ``q`` that moves each row to w ≥ 0."""
    sign = np.where(q.values[..., :1] < 0.0, -1.0, 1.0)
    return Tensor(np.broadcast_to(sign, q.shape).copy())


def canonical_rotation(raw: Tensor, eps: float = TRAINING_NORM_EPS) -> Tensor:
    if np.any(np.all(raw.values == 0.0, axis=-1)):
        raise GeometryError("degenerate rotation: network emitted an all-zero quaternion")
    unit = ops.normalize_last(raw, eps=eps)
    return ops.mul(unit, hemisphere_sign(unit))


def canonicalize_rows(q: Tensor) -> Tensor:
    return ops.mul(q, hemisphere_sign(q))


def quat_conjugate_rows(q: Tensor) -> Tensor:
    return ops.mul(q, Tensor(np.broadcast_to(_CONJUGATE, q.shape).copy()))


def quat_product_rows(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise Hamilton product a ⊗ b of two (N, 4) tensors."""
    if a.shape != b.shape or a.shape[-1] != 4:
        raise GeometryError(f"quaternion product needs matching (N, 4) inputs, got {a.shape} and {b.shape}")
    av, bv = a.values, b.values

    def _product(p, q):
        pw, px, py, pz = p[..., 0], p[..., 1], p[..., 2], p[..., 3]
        qw, qx, qy, qz = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
        return np.stack(
            [
                pw * qw - px * qx - py * qy - pz * qz,
                pw * qx + px * qw + py * qz - pz * qy,
                pw * qy - px * qz + py * qw + pz * qx,
                pw * qz + px * qy - py * qx + pz * qw,
            ],
            axis=-1,
        )

    def _backward(g):
        # d(a⊗b)/da · g = g ⊗ conj(b);  d(a⊗b)/db · g = conj(a) ⊗ g
        return _product(g, bv * _CONJUGATE), _product(av * _CONJUGATE, g)

    return Tensor.from_op("quat_product", _product(av, bv), (a, b), _backward)


def relative_rotation(prev_q: Tensor, curr_q: Tensor) -> Tensor:
    """canon(q_prev⁻¹ ⊗ q_curr) for unit rows."""
    return canonicalize_rows(quat_product_rows(quat_conjugate_rows(prev_q), curr_q))


def to_relative_batch(rels: Sequence[RelativePose]) -> PoseBatch:
    return PoseBatch.from_poses(list(rels))
