"""
metrics.py
----------
Pose, odometry and segmentation metrics.

Medians use the mean of the two middle values for even counts; threshold
accuracy counts a frame only when both errors are strictly below their
thresholds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from src.geometry.pose import Pose
from src.geometry.quaternion import angular_error_deg
from src.utils.errors import MetricError

DEFAULT_T_THRESH = 0.05
DEFAULT_R_THRESH = 5.0


@dataclass(frozen=True)
class LocalizationReport:
    median_translation: float
    median_rotation: float
    accuracy_5cm5deg: float
    translation_errors: np.ndarray = field(repr=False)
    rotation_errors: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class OdometryReport:
    translational_drift: float     # percent of path length
    rotational_drift: float        # degrees per metre


@dataclass(frozen=True)
class SegmentationReport:
    per_class: tuple               # IoU per class id, nan where the class is absent from both maps
    mean_iou: float

    def present(self) -> dict:
        return {c: v for c, v in enumerate(self.per_class) if not np.isnan(v)}


def _check_lengths(preds: Sequence, gts: Sequence) -> None:
    if len(preds) != len(gts):
        raise MetricError(f"prediction/ground-truth length mismatch: {len(preds)} vs {len(gts)}")
    if len(preds) == 0:
        raise MetricError("metrics need at least one frame")


def pose_errors(preds: Sequence[Pose], gts: Sequence[Pose]) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame translation error (m) and rotation error (deg)."""
    _check_lengths(preds, gts)
    t = np.array([np.linalg.norm(p.translation - g.translation) for p, g in zip(preds, gts)])
    r = np.array([angular_error_deg(p.rotation, g.rotation) for p, g in zip(preds, gts)])
    return t, r


def median_pose_error(preds: Sequence[Pose], gts: Sequence[Pose]) -> tuple[float, float]:
    t, r = pose_errors(preds, gts)
    return float(np.median(t)), float(np.median(r))


def accuracy_from_errors(t: np.ndarray, r: np.ndarray, t_thresh: float, r_thresh: float) -> float:
    return float(np.mean((np.asarray(t) < t_thresh) & (np.asarray(r) < r_thresh)))


def pose_accuracy(preds: Sequence[Pose], gts: Sequence[Pose],
                  t_thresh: float = DEFAULT_T_THRESH, r_thresh: float = DEFAULT_R_THRESH) -> float:
    t, r = pose_errors(preds, gts)
    return accuracy_from_errors(t, r, t_thresh, r_thresh)


def localization_report(preds: Sequence[Pose], gts: Sequence[Pose]) -> LocalizationReport:
    t, r = pose_errors(preds, gts)
    return LocalizationReport(
        median_translation=float(np.median(t)),
        median_rotation=float(np.median(r)),
        accuracy_5cm5deg=accuracy_from_errors(t, r, DEFAULT_T_THRESH, DEFAULT_R_THRESH),
        translation_errors=t,
        rotation_errors=r,
    )


def vo_drift(pred_rels: Sequence[Pose], gt_rels: Sequence[Pose], gt_path_length: float) -> OdometryReport:
    """Summed per-pair errors normalised by the ground-truth path length."""
    if not gt_path_length > 0:
        raise MetricError(f"path length must be positive, got {gt_path_length}")
    t, r = pose_errors(pred_rels, gt_rels)
    return OdometryReport(
        translational_drift=float(t.sum() / gt_path_length * 100.0),
        rotational_drift=float(r.sum() / gt_path_length),
    )


def confusion_counts(pred_labels: np.ndarray, gt_labels: np.ndarray, num_classes: int) -> np.ndarray:
    """(C, C) matrix, rows = ground truth, columns = prediction."""
    pred = np.asarray(pred_labels)
    gt = np.asarray(gt_labels)
    if pred.shape != gt.shape:
        raise MetricError(f"label map shapes differ: {pred.shape} vs {gt.shape}")
    for name, arr in (("prediction", pred), ("ground truth", gt)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise MetricError(f"{name} labels outside [0, {num_classes})")
    flat = gt.astype(np.int64).ravel() * num_classes + pred.astype(np.int64).ravel()
    return np.bincount(flat, minlength=num_classes * num_classes).reshape(num_classes, num_classes)


def iou_from_confusion(conf: np.ndarray) -> SegmentationReport:
    tp = np.diag(conf).astype(np.float64)
    union = conf.sum(axis=0) + conf.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(union > 0, tp / union, np.nan)
    present = per_class[~np.isnan(per_class)]
    mean = float(present.mean()) if present.size else float("nan")
    return SegmentationReport(per_class=tuple(float(v) for v in per_class), mean_iou=mean)


def iou(pred_labels: np.ndarray, gt_labels: np.ndarray, num_classes: int) -> SegmentationReport:
    """Classes absent from both maps are excluded from the mean."""
    return iou_from_confusion(confusion_counts(pred_labels, gt_labels, num_classes))
