"""
camera.py
---------
Pinhole camera model. Convention: +z forward, +x right, +y down, pixel
origin at the top-left pixel centre.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from src.utils.errors import GeometryError


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise GeometryError(
                f"principal point ({self.cx}, {self.cy}) outside a {self.width}x{self.height} image"
            )

    @classmethod
    def default_for(cls, size: int) -> "CameraIntrinsics":
        """Square image with a 2·atan(1/2) ≈ 53° field of view."""
        return cls(fx=float(size), fy=float(size), cx=size / 2.0, cy=size / 2.0, width=size, height=size)

    def as_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
        }

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


def project(pt, K: CameraIntrinsics) -> np.ndarray:
    """Camera-frame point(s) ``(..., 3)`` → pixel coordinates ``(..., 2)``."""
    pt = np.asarray(pt, dtype=np.float64)
    z = pt[..., 2]
    if np.any(~(z > 0)):
        raise GeometryError("point behind camera: projection needs positive depth")
    u = K.fx * pt[..., 0] / z + K.cx
    v = K.fy * pt[..., 1] / z + K.cy
    return np.stack([u, v], axis=-1)


def unproject(px, depth, K: CameraIntrinsics) -> np.ndarray:
    """Pixel coordinate(s) ``(..., 2)`` with depth ``(...)`` → camera-frame point(s)."""
    px = np.asarray(px, dtype=np.float64)
    d = np.asarray(depth, dtype=np.float64)
    if np.any(~(d > 0)):
        raise GeometryError("unproject needs positive depth")
    u, v = px[..., 0], px[..., 1]
    if np.any((u < -0.5) | (u > K.width - 0.5) | (v < -0.5) | (v > K.height - 0.5)):
        raise GeometryError("pixel outside the image bounds")
    return np.stack([(u - K.cx) * d / K.fx, (v - K.cy) * d / K.fy, d * np.ones_like(u)], axis=-1)


def pixel_grid(K: CameraIntrinsics) -> np.ndarray:
    """(H, W, 2) array of (x, y) pixel-centre coordinates."""
    xs, ys = np.meshgrid(
        np.arange(K.width, dtype=np.float64), np.arange(K.height, dtype=np.float64)
    )
    return np.stack([xs, ys], axis=-1)


def ray_directions(K: CameraIntrinsics) -> np.ndarray:
    """(H, W, 3) camera-frame rays with unit z component (t along a ray == depth)."""
    grid = pixel_grid(K)
    return np.stack(
        [(grid[..., 0] - K.cx) / K.fx, (grid[..., 1] - K.cy) / K.fy, np.ones(grid.shape[:2])],
        axis=-1,
    )
