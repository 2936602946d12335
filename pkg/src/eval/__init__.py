from src.eval.metrics import (
    LocalizationReport,
    OdometryReport,
    SegmentationReport,
    iou,
    localization_report,
    median_pose_error,
    pose_accuracy,
    vo_drift,
)
from src.eval.reports import build_report, export_trajectory, read_report, read_trajectory, write_report

__all__ = [
    "LocalizationReport",
    "OdometryReport",
    "SegmentationReport",
    "build_report",
    "export_trajectory",
    "iou",
    "localization_report",
    "median_pose_error",
    "pose_accuracy",
    "read_report",
    "read_trajectory",
    "vo_drift",
    "write_report",
]
