"""
warper.py
---------
Differentiable inverse warping of previous-timestep feature maps into the
current view.

For each current pixel u with depth D_t(u) the source location in the
previous frame is  π( T(motion) · π⁻¹(u, D_t(u)) ), where ``motion`` is the
camera-frame ego-motion T_{t-1}⁻¹ · T_t (see ``geometry.camera_motion``).
The grid is computed once at input resolution; coarser feature maps use
average-pooled copies of it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from src.autodiff.tensor import Tensor
from src.geometry.camera import CameraIntrinsics, pixel_grid, ray_directions
from src.geometry.pose import RelativePose
from src.geometry.quaternion import quat_to_rotation_matrix
from src.utils.errors import WarpError
from src.utils.log import get_logger

logger = get_logger(__name__)

SKY_DEPTH = 100.0          # sentinel written by the renderer, never a valid sample
_INVALID_COORD = -1.0


@dataclass
class WarpGrid:
    """
    coords : (N, H, W, 2) source (x, y) pixel coordinates in the previous frame.
    valid  : (N, H, W) boolean mask.
    """

    coords: np.ndarray
    valid: np.ndarray

    @property
    def batch(self) -> int:
        return self.coords.shape[0]

    @property
    def height(self) -> int:
        return self.coords.shape[1]

    @property
    def width(self) -> int:
        return self.coords.shape[2]


def _is_identity(rel: RelativePose) -> bool:
    return (
        not np.any(rel.translation)
        and rel.rotation.w == 1.0
        and rel.rotation.x == 0.0
        and rel.rotation.y == 0.0
        and rel.rotation.z == 0.0
    )


def _depth_array(depth) -> np.ndarray:
    d = depth.values if isinstance(depth, Tensor) else np.asarray(depth, dtype=np.float64)
    if d.ndim == 2:
        d = d[None]
    if d.ndim != 3:
        raise WarpError(f"depth must be (H, W) or (N, H, W), got shape {d.shape}")
    return d


def compute_warp_grid(
    rel: RelativePose | Sequence[RelativePose],
    depth,
    K: CameraIntrinsics,
    max_depth: float = SKY_DEPTH,
) -> WarpGrid:
    """
    Parameters
    ----------
    rel       : camera-frame motion per batch item (a single pose for N = 1).
    depth     : current-frame depth in meters, (H, W) or (N, H, W).
    K         : intrinsics of the depth map resolution.
    max_depth : depths at or above this value (sky) are invalid.
    """
    d = _depth_array(depth)
    n, h, w = d.shape
    if (h, w) != (K.height, K.width):
        raise WarpError(f"depth map {h}x{w} does not match intrinsics {K.height}x{K.width}")

    rels = [rel] * n if isinstance(rel, RelativePose) else list(rel)
    if len(rels) != n:
        raise WarpError(f"{len(rels)} relative poses for a batch of {n} depth maps")

    depth_ok = np.isfinite(d) & (d > 0) & (d < max_depth)
    if not depth_ok.any():
        raise WarpError("depth map has no valid pixel")

    base = pixel_grid(K)
    rays = ray_directions(K)
    coords = np.empty((n, h, w, 2))
    valid = np.empty((n, h, w), dtype=bool)

    for i, motion in enumerate(rels):
        ok = depth_ok[i]
        if _is_identity(motion):
            coords[i] = base
            valid[i] = ok
            continue

        safe_d = np.where(ok, d[i], 1.0)
        pts = rays * safe_d[..., None]
        R = quat_to_rotation_matrix(motion.rotation)
        moved = pts @ R.T + motion.translation
        z = moved[..., 2]
        front = z > 1e-9
        safe_z = np.where(front, z, 1.0)
        u = K.fx * moved[..., 0] / safe_z + K.cx
        v = K.fy * moved[..., 1] / safe_z + K.cy
        inside = (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)

        valid[i] = ok & front & inside
        coords[i, ..., 0] = np.where(valid[i], u, _INVALID_COORD)
        coords[i, ..., 1] = np.where(valid[i], v, _INVALID_COORD)

    logger.debug(f"warp grid: {valid.mean():.1%} of {n}x{h}x{w} pixels valid")
    return WarpGrid(coords, valid)


def downscale_grid(grid: WarpGrid, factor: int) -> WarpGrid:
    """
    Average-pool coordinates over factor×factor blocks and map them to the
    coarse pixel lattice with pixel-centre alignment: c' = (c + 0.5)/f − 0.5.
    A coarse pixel is valid only if its whole block is valid and the mapped
    coordinate lies inside the coarse image.
    """
    if factor < 1 or factor & (factor - 1):
        raise WarpError(f"downscale factor must be a power of two, got {factor}")
    if factor == 1:
        return WarpGrid(grid.coords.copy(), grid.valid.copy())

    n, h, w = grid.valid.shape
    if h % factor or w % factor:
        raise WarpError(f"grid {h}x{w} is not divisible by factor {factor}")
    hs, ws = h // factor, w // factor

    pooled = grid.coords.reshape(n, hs, factor, ws, factor, 2).mean(axis=(2, 4))
    block_ok = grid.valid.reshape(n, hs, factor, ws, factor).all(axis=(2, 4))
    coarse = (pooled + 0.5) / factor - 0.5

    inside = (
        (coarse[..., 0] >= 0) & (coarse[..., 0] <= ws - 1)
        & (coarse[..., 1] >= 0) & (coarse[..., 1] <= hs - 1)
    )
    valid = block_ok & inside
    coarse = np.where(valid[..., None], coarse, _INVALID_COORD)
    return WarpGrid(coarse, valid)


def bilinear_sample(src: Tensor, grid: WarpGrid) -> Tensor:
    """
    Four-neighbour bilinear read of ``src`` (N, H, W, C) at ``grid`` coordinates.
    Invalid grid pixels produce zeros. Differentiable with respect to ``src``.
    """
    squeeze = src.values.ndim == 3
    sv = src.values[None] if squeeze else src.values
    n, h, w, c = sv.shape
    if grid.batch != n:
        raise WarpError(f"grid batch {grid.batch} does not match feature batch {n}")

    valid = grid.valid
    x = np.where(valid, grid.coords[..., 0], 0.0)
    y = np.where(valid, grid.coords[..., 1], 0.0)

    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    wx1 = x - x0
    wy1 = y - y0
    wx0 = 1.0 - wx1
    wy0 = 1.0 - wy1
    x0c, x1c = np.clip(x0, 0, w - 1), np.clip(x0 + 1, 0, w - 1)
    y0c, y1c = np.clip(y0, 0, h - 1), np.clip(y0 + 1, 0, h - 1)

    mask = valid.astype(np.float64)
    bidx = np.broadcast_to(np.arange(n)[:, None, None], valid.shape)
    corners = (
        (y0c, x0c, wy0 * wx0 * mask),
        (y0c, x1c, wy0 * wx1 * mask),
        (y1c, x0c, wy1 * wx0 * mask),
        (y1c, x1c, wy1 * wx1 * mask),
    )

    full_shape = valid.shape + (c,)
    out = np.zeros(full_shape)
    for yy, xx, wt in corners:
        out += wt[..., None] * sv[bidx, yy, xx]

    def _backward(g):
        dsrc = np.zeros_like(sv)
        for yy, xx, wt in corners:
            np.add.at(dsrc, (bidx, yy, xx), g.reshape(full_shape) * wt[..., None])
        return (dsrc[0] if squeeze else dsrc,)

    if squeeze:
        out = out[0]
    return Tensor.from_op("bilinear_sample", out, (src,), _backward)


def warp_features(
    prev_feats: Tensor,
    rel: RelativePose | Sequence[RelativePose],
    depth,
    K: CameraIntrinsics,
    scale: int,
) -> Tensor:
    grid = compute_warp_grid(rel, depth, K)
    return FeatureWarper(grid).warp(prev_feats, scale)


@dataclass
class FeatureWarper:
    """
    Holds one full-resolution grid and the coarse grids derived from it, so a
    frame's grid is computed once and applied at every fusion scale.
    """

    grid: WarpGrid
    _coarse: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_depth(cls, rel, depth, K: CameraIntrinsics) -> "FeatureWarper":
        return cls(compute_warp_grid(rel, depth, K))

    def grid_at(self, scale: int) -> WarpGrid:
        if scale not in self._coarse:
            self._coarse[scale] = downscale_grid(self.grid, scale)
        return self._coarse[scale]

    def warp(self, prev_feats: Tensor, scale: int) -> Tensor:
        feats_shape = prev_feats.shape[-3:-1]
        grid = self.grid_at(scale)
        if feats_shape != (grid.height, grid.width):
            raise WarpError(
                f"feature map {feats_shape} does not match input grid "
                f"{self.grid.height}x{self.grid.width} at scale 1/{scale}"
            )
        return bilinear_sample(prev_feats, grid)

    def valid_fraction(self) -> float:
        return float(self.grid.valid.mean())
