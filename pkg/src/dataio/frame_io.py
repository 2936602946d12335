"""
frame_io.py
-----------
Per-frame image files, written with Pillow:

    frame-NNNNNN.color.png   8-bit RGB
    frame-NNNNNN.depth.png   16-bit single channel, millimetres, 0 = invalid
    frame-NNNNNN.label.png   8-bit class ids
    frame-NNNNNN.pose.txt    see ``pose_io``

Depths beyond the 16-bit millimetre range (65.535 m), the sky sentinel
included, are stored as 0 and come back as ``SKY_DEPTH``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from src.dataio.atomic import atomic_path
from src.dataio.pose_io import parse_pose_file, write_pose_file
from src.synthworld.renderer import RenderedFrame
from src.utils.errors import DataFormatError
from src.warp.warper import SKY_DEPTH

DEPTH_SCALE = 1000.0                      # stored units per metre
MAX_DEPTH_M = np.iinfo(np.uint16).max / DEPTH_SCALE
IMAGE_FORMAT = "PNG"
IMAGE_EXT = "png"


def encode_depth(depth: np.ndarray) -> np.ndarray:
    mm = np.rint(np.asarray(depth, dtype=np.float64) * DEPTH_SCALE)
    invalid = ~np.isfinite(mm) | (mm <= 0) | (mm > np.iinfo(np.uint16).max)
    return np.where(invalid, 0, mm).astype(np.uint16)


def decode_depth(stored: np.ndarray) -> np.ndarray:
    stored = np.asarray(stored)
    return np.where(stored == 0, SKY_DEPTH, stored.astype(np.float64) / DEPTH_SCALE)


def encode_rgb(rgb: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)


def _save(array: np.ndarray, path: Path) -> None:
    with atomic_path(path) as tmp:
        Image.fromarray(array).save(tmp, format=IMAGE_FORMAT)


def _load(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img)
    except (OSError, ValueError) as exc:
        raise DataFormatError(f"{path}: cannot read image ({exc})") from exc


def write_frame(record, frame: RenderedFrame) -> None:
    """Writes the four files of ``record`` (a ``dataset.FrameRecord``)."""
    h, w = frame.depth.shape
    if frame.rgb.shape != (h, w, 3) or frame.labels.shape != (h, w):
        raise DataFormatError(
            f"frame {record.index}: inconsistent dims rgb={frame.rgb.shape} "
            f"depth={frame.depth.shape} labels={frame.labels.shape}"
        )
    _save(encode_rgb(frame.rgb), record.rgb_path)
    _save(encode_depth(frame.depth), record.depth_path)
    _save(np.asarray(frame.labels, dtype=np.uint8), record.label_path)
    write_pose_file(record.pose_path, frame.pose)


def read_frame(record, size: tuple[int, int] | None = None, with_labels: bool = True) -> RenderedFrame:
    """
    Reads ``record`` back. ``size`` is the (height, width) declared by the
    dataset manifest; any file with other dims is rejected. Datasets without
    semantic annotation pass ``with_labels=False`` and get ``labels=None``.
    """
    rgb = _load(record.rgb_path)
    depth = _load(record.depth_path)
    labels = _load(record.label_path) if with_labels else None

    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise DataFormatError(f"{record.rgb_path}: expected an RGB image, got shape {rgb.shape}")
    expected = tuple(size) if size is not None else rgb.shape[:2]
    checks = [(record.rgb_path, rgb), (record.depth_path, depth)]
    if labels is not None:
        checks.append((record.label_path, labels))
    for path, arr in checks:
        if tuple(arr.shape[:2]) != expected:
            raise DataFormatError(f"{path}: dims {arr.shape[:2]} do not match manifest {expected}")

    return RenderedFrame(
        rgb=rgb.astype(np.float64) / 255.0,
        depth=decode_depth(depth.astype(np.uint16)),
        labels=labels.astype(np.uint8) if labels is not None else None,
        pose=parse_pose_file(record.pose_path),
    )
