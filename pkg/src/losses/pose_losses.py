"""
pose_losses.py
--------------
Global pose, relative motion (geometric consistency) and odometry losses.

Residual norms are plain (not squared) Euclidean norms averaged over the
batch; with N = 1 they are exactly the per-frame norms. ``eps`` goes under
the square root to smooth the origin kink during training.
"""

from __future__ import annotations

from src.autodiff import ops
from src.autodiff.tensor import Tensor
from src.losses.pose_terms import PoseLike, as_pose_batch, relative_rotation
from src.losses.uncertainty import UncertaintyWeights, weighted_term


def residual_norm(a: Tensor, b: Tensor, eps: float = 0.0) -> Tensor:
    """Batch mean of row-wise ‖a − b‖₂."""
    return ops.mean(ops.l2_norm(ops.sub(a, b), axis=-1, eps=eps))


def euclidean_pose_loss(pred: PoseLike, gt: PoseLike, u: UncertaintyWeights, eps: float = 0.0) -> Tensor:
    pred, gt = as_pose_batch(pred), as_pose_batch(gt)
    l_x = residual_norm(gt.translation, pred.translation, eps)
    l_q = residual_norm(gt.rotation, pred.rotation, eps)
    return ops.add(weighted_term(l_x, u.s_x), weighted_term(l_q, u.s_q))


def relative_motion_loss(
    pred_prev: PoseLike,
    pred_curr: PoseLike,
    gt_rel: PoseLike,
    u: UncertaintyWeights,
    eps: float = 0.0,
) -> Tensor:
    pred_prev, pred_curr, gt_rel = as_pose_batch(pred_prev), as_pose_batch(pred_curr), as_pose_batch(gt_rel)
    pred_dx = ops.sub(pred_curr.translation, pred_prev.translation)
    pred_dq = relative_rotation(pred_prev.rotation, pred_curr.rotation)
    l_x = residual_norm(gt_rel.translation, pred_dx, eps)
    l_q = residual_norm(gt_rel.rotation, pred_dq, eps)
    return ops.add(weighted_term(l_x, u.s_x_rel), weighted_term(l_q, u.s_q_rel))


def localization_loss(
    pred_prev: PoseLike,
    pred_curr: PoseLike,
    gt_curr: PoseLike,
    gt_rel: PoseLike,
    u: UncertaintyWeights,
    eps: float = 0.0,
) -> Tensor:
    """Geometric consistency loss: global pose term plus relative motion term."""
    return ops.add(
        euclidean_pose_loss(pred_curr, gt_curr, u, eps),
        relative_motion_loss(pred_prev, pred_curr, gt_rel, u, eps),
    )


def odometry_loss(pred_rel: PoseLike, gt_rel: PoseLike, u: UncertaintyWeights, eps: float = 0.0) -> Tensor:
    pred_rel, gt_rel = as_pose_batch(pred_rel), as_pose_batch(gt_rel)
    l_x = residual_norm(gt_rel.translation, pred_rel.translation, eps)
    l_q = residual_norm(gt_rel.rotation, pred_rel.rotation, eps)
    return ops.add(weighted_term(l_x, u.s_x_vo), weighted_term(l_q, u.s_q_vo))
