"""
reports.py
----------
Evaluation report (YAML key-value document), trajectory CSV and the
top-down trajectory plot (SVG).

Report schema (version 1):

    format: vloc-report
    version: 1
    split, checkpoint, frames, sequences
    median_translation        m
    median_rotation           deg
    accuracy_5cm5deg          fraction in [0, 1]
    vo_translational_drift    % of path length
    vo_rotational_drift       deg / m
    per_class_iou             {class name: IoU or null when absent}
    mean_iou
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
import yaml  # noqa: E402

from src.dataio.atomic import atomic_path, atomic_write_text  # noqa: E402
from src.eval.metrics import LocalizationReport, OdometryReport, SegmentationReport, pose_errors  # noqa: E402
from src.geometry.pose import Pose  # noqa: E402
from src.utils.errors import DataFormatError  # noqa: E402

REPORT_FORMAT = "vloc-report"
REPORT_VERSION = 1
TRAJECTORY_COLUMNS = [
    "frame", "gt_x", "gt_y", "gt_z", "pred_x", "pred_y", "pred_z", "trans_err", "rot_err",
]


def _clean(value: float):
    return None if value is None or (isinstance(value, float) and math.isnan(value)) else float(value)


def build_report(
    loc: LocalizationReport | None,
    odo: OdometryReport | None,
    seg: SegmentationReport | None,
    palette: Sequence[str],
    **context,
) -> dict:
    """Sections the evaluated task does not produce are written as null."""
    report = {"format": REPORT_FORMAT, "version": REPORT_VERSION, **context}
    report.update(
        median_translation=_clean(loc.median_translation) if loc else None,
        median_rotation=_clean(loc.median_rotation) if loc else None,
        accuracy_5cm5deg=_clean(loc.accuracy_5cm5deg) if loc else None,
        vo_translational_drift=_clean(odo.translational_drift) if odo else None,
        vo_rotational_drift=_clean(odo.rotational_drift) if odo else None,
        per_class_iou=(
            {name: _clean(v) for name, v in zip(palette, seg.per_class)} if seg else None
        ),
        mean_iou=_clean(seg.mean_iou) if seg else None,
    )
    return report


def write_report(path: str | Path, report: dict) -> Path:
    return atomic_write_text(path, yaml.safe_dump(report, sort_keys=False, default_flow_style=False))


def read_report(path: str | Path) -> dict:
    path = Path(path)
    try:
        report = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise DataFormatError(f"{path}: cannot read report ({exc})") from exc
    if not isinstance(report, dict) or report.get("format") != REPORT_FORMAT:
        raise DataFormatError(f"{path}: not a {REPORT_FORMAT} document")
    return report


# ---------------------------------
# Trajectory export
# ---------------------------------
def trajectory_frame(preds: Sequence[Pose], gts: Sequence[Pose]) -> pd.DataFrame:
    t_err, r_err = pose_errors(preds, gts)
    gt_xyz = np.array([g.translation for g in gts])
    pred_xyz = np.array([p.translation for p in preds])
    return pd.DataFrame(
        {
            "frame": np.arange(len(gts)),
            "gt_x": gt_xyz[:, 0], "gt_y": gt_xyz[:, 1], "gt_z": gt_xyz[:, 2],
            "pred_x": pred_xyz[:, 0], "pred_y": pred_xyz[:, 1], "pred_z": pred_xyz[:, 2],
            "trans_err": t_err,
            "rot_err": r_err,
        },
        columns=TRAJECTORY_COLUMNS,
    )


def plot_trajectory(df: pd.DataFrame, path: str | Path, title: str = "") -> Path:
    """Top-down (x, y) view of ground truth against prediction, as SVG."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 6))
    try:
        ax.plot(df["gt_x"], df["gt_y"], color="tab:red", linewidth=1.5, label="ground truth")
        ax.plot(df["pred_x"], df["pred_y"], color="tab:olive", linewidth=1.0, marker=".", markersize=3,
                label="prediction")
        ax.set_aspect("equal", adjustable="datalim")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        if title:
            ax.set_title(title)
        ax.legend(loc="best")
        with atomic_path(path) as tmp:
            fig.savefig(tmp, format="svg")
    finally:
        plt.close(fig)
    return path


def export_trajectory(
    preds: Sequence[Pose],
    gts: Sequence[Pose],
    path: str | Path,
    plot_path: str | Path | None = None,
) -> pd.DataFrame:
    df = trajectory_frame(preds, gts)
    path = Path(path)
    with atomic_path(path) as tmp:
        df.to_csv(tmp, index=False, float_format="%.17g")
    if plot_path is not None:
        plot_trajectory(df, plot_path, title=path.stem)
    return df


def read_trajectory(path: str | Path) -> pd.DataFrame:
    path = Path(path)
    try:
        df = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataFormatError(f"{path}: cannot read trajectory CSV ({exc})") from exc
    if list(df.columns) != TRAJECTORY_COLUMNS:
        raise DataFormatError(f"{path}: unexpected columns {list(df.columns)}")
    return df
