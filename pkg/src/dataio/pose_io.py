"""
pose_io.py
----------
Pose text files: one 4x4 homogeneous camera-to-world matrix, four lines of
four space-separated reals, 17 significant digits.

A trailing ``# pose tx ty tz qw qx qy qz`` comment carries the exact
translation and quaternion so a read-back pose is bit-identical to the one
written; it must agree with the matrix rows. Files without the comment
(public 7-Scenes pose files) are converted from the matrix.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from src.dataio.atomic import atomic_write_text
from src.geometry.pose import Pose, pose_to_transform, transform_to_pose
from src.geometry.quaternion import Quaternion
from src.utils.errors import DataFormatError, GeometryError

LAST_ROW_TOL = 1e-9
ORTHONORMAL_TOL = 1e-6
TAG_MATCH_TOL = 1e-9
_POSE_TAG = "# pose"


def format_pose(pose: Pose) -> str:
    T = pose_to_transform(pose)
    lines = [" ".join(f"{v:.17g}" for v in row) for row in T]
    exact = [*pose.translation, *pose.rotation.as_array()]
    lines.append(_POSE_TAG + " " + " ".join(f"{v:.17g}" for v in exact))
    return "\n".join(lines) + "\n"


def write_pose_file(path: str | Path, pose: Pose) -> Path:
    return atomic_write_text(path, format_pose(pose))


def parse_pose_text(text: str, source: str = "<string>") -> Pose:
    rows: list[list[float]] = []
    exact: list[float] | None = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if line.startswith(_POSE_TAG):
                exact = _parse_floats(line[len(_POSE_TAG):].split(), source, lineno, expected=7)
            continue
        rows.append(_parse_floats(line.split(), source, lineno, expected=4))

    if len(rows) != 4:
        raise DataFormatError(f"{source}: expected 4 matrix lines, found {len(rows)}")

    T = np.array(rows, dtype=np.float64)
    if np.max(np.abs(T[3] - [0.0, 0.0, 0.0, 1.0])) > LAST_ROW_TOL:
        raise DataFormatError(f"{source}: last row must be (0, 0, 0, 1), got {T[3].tolist()}")
    R = T[:3, :3]
    err = float(np.max(np.abs(R.T @ R - np.eye(3))))
    if err > ORTHONORMAL_TOL:
        raise DataFormatError(f"{source}: rotation block is not orthonormal (max deviation {err:.3g})")

    if exact is not None:
        try:
            pose = Pose(np.array(exact[:3]), Quaternion(*exact[3:]))
        except GeometryError as exc:
            raise DataFormatError(f"{source}: {exc}") from exc
        mismatch = float(np.max(np.abs(pose_to_transform(pose) - T)))
        if mismatch > TAG_MATCH_TOL:
            raise DataFormatError(
                f"{source}: '{_POSE_TAG}' tag does not match the matrix (max deviation {mismatch:.3g})"
            )
        return pose

    T[3] = [0.0, 0.0, 0.0, 1.0]
    return transform_to_pose(T)


def parse_pose_file(path: str | Path) -> Pose:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(f"{path}: cannot read pose file ({exc.strerror})") from exc
    return parse_pose_text(text, str(path))


def _parse_floats(tokens: list[str], source: str, lineno: int, expected: int) -> list[float]:
    if len(tokens) != expected:
        raise DataFormatError(f"{source}:{lineno}: expected {expected} values, found {len(tokens)}")
    try:
        values = [float(tok) for tok in tokens]
    except ValueError as exc:
        raise DataFormatError(f"{source}:{lineno}: {exc}") from exc
    if not np.all(np.isfinite(values)):
        raise DataFormatError(f"{source}:{lineno}: non-finite value")
    return values
