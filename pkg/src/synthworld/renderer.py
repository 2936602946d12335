"""
renderer.py
-----------
Vectorized ray caster for ``SceneSpec`` worlds.

Depth and labels come from one ray per pixel centre; the ray parameter
along a camera ray with unit z component equals the camera-frame depth, so
the nearest hit parameter is written to the depth map directly. Rays that
hit nothing see the sky and carry ``SKY_DEPTH``.

Colour is the mean of ``SUPERSAMPLE``² rays spread over the pixel, and
surface textures are band-limited to the pixel footprint of each hit, so
the image resamples smoothly under sub-pixel motion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from src.geometry.camera import CameraIntrinsics, ray_directions
from src.geometry.pose import Pose
from src.geometry.quaternion import quat_to_rotation_matrix
from src.synthworld.scene import CLASS_COLORS, FLOOR, SKY, WALL, SceneSpec
from src.warp.warper import SKY_DEPTH

_HIT_EPS = 1e-9
_FLAT_EPS = 1e-12
_MIN_INCIDENCE = 0.1

SUPERSAMPLE = 2
TEXTURE_BLUR_PX = 1.0


@dataclass(frozen=True)
class RenderedFrame:
    rgb: np.ndarray        # (H, W, 3) float64 in [0, 1]
    depth: np.ndarray      # (H, W) metres, SKY_DEPTH where nothing was hit
    labels: np.ndarray     # (H, W) uint8 class ids
    pose: Pose

    @property
    def size(self) -> tuple[int, int]:
        return self.depth.shape


def prefilter_gain(freq, footprint: np.ndarray) -> np.ndarray:
    """Gain of a Gaussian pixel prefilter (σ = TEXTURE_BLUR_PX) at ``freq`` cycles per metre."""
    return np.exp(-2.0 * (np.pi * TEXTURE_BLUR_PX * freq * footprint) ** 2)


def surface_texture(
    u: np.ndarray, v: np.ndarray, class_id: int, seed: int, footprint: np.ndarray | None = None
) -> np.ndarray:
    """
    Soft checkerboard plus low-frequency sinusoid noise, tinted by class.

    ``footprint`` is the surface length (m) one pixel covers at each sample;
    every component is attenuated by ``prefilter_gain``, so distant and
    grazing surfaces fade to their mean shade. ``None`` renders unfiltered.
    """
    rng = np.random.default_rng(seed)
    cell = rng.uniform(0.45, 0.8)
    freqs = rng.uniform(0.3, 1.5, size=(3, 2))
    phases = rng.uniform(0, 2 * np.pi, size=3)
    tint = rng.uniform(-0.08, 0.08, size=3)
    if footprint is None:
        footprint = np.zeros_like(u)

    # sin·sin is a pair of plane waves of 1/(√2·cell) cycles per metre
    checker = np.sin(np.pi * u / cell) * np.sin(np.pi * v / cell)
    checker = checker * prefilter_gain(1.0 / (np.sqrt(2.0) * cell), footprint)
    noise = np.mean(
        [
            np.sin(2 * np.pi * (f[0] * u + f[1] * v) + ph) * prefilter_gain(np.hypot(*f), footprint)
            for f, ph in zip(freqs, phases)
        ],
        axis=0,
    )
    shade = 0.62 + 0.25 * checker + 0.14 * noise
    base = np.clip(np.asarray(CLASS_COLORS[class_id]) + tint, 0.05, 1.0)
    return np.clip(shade[:, None] * base[None, :] / 0.8, 0.0, 1.0)


class _HitBuffer:
    """
    Nearest-hit accumulator over all surfaces of a scene. ``pixel_angle``
    (1 / focal length) sizes the texture footprint of each hit.
    """

    def __init__(self, origin: np.ndarray, dirs: np.ndarray, pixel_angle: float):
        n = dirs.shape[0]
        self.origin = origin
        self.dirs = dirs
        self.pixel_angle = pixel_angle
        self.depth = np.full(n, np.inf)
        self.labels = np.full(n, SKY, dtype=np.uint8)
        self.rgb = np.zeros((n, 3))

    def offer(self, t: np.ndarray, mask: np.ndarray, uv: np.ndarray, class_id: int, seed: int, normal_axis) -> None:
        closer = mask & (t < self.depth)
        if not closer.any():
            return
        dirs = self.dirs[closer]
        axis = np.broadcast_to(normal_axis, mask.shape)[closer]
        along_normal = np.abs(dirs[np.arange(len(dirs)), axis])
        incidence = np.maximum(along_normal, _MIN_INCIDENCE * np.linalg.norm(dirs, axis=1))
        footprint = t[closer] * self.pixel_angle / incidence

        self.depth[closer] = t[closer]
        self.labels[closer] = class_id
        self.rgb[closer] = surface_texture(uv[closer, 0], uv[closer, 1], class_id, seed, footprint)


def _plane_hits(origin: np.ndarray, dirs: np.ndarray, axis: int, value: float) -> tuple[np.ndarray, np.ndarray]:
    d = dirs[:, axis]
    flat = np.abs(d) < _FLAT_EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (value - origin[axis]) / np.where(flat, 1.0, d)
    return t, (~flat) & (t > _HIT_EPS)


def _box_hits(origin: np.ndarray, dirs: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    """Slab test. Returns entry parameter, hit mask and the axis of the entry face."""
    d = np.where(np.abs(dirs) < _FLAT_EPS, np.copysign(_FLAT_EPS, dirs + 0.0), dirs)
    t1 = (lo[None, :] - origin[None, :]) / d
    t2 = (hi[None, :] - origin[None, :]) / d
    t_min = np.minimum(t1, t2)
    t_near = t_min.max(axis=1)
    t_far = np.maximum(t1, t2).min(axis=1)
    return t_near, (t_near <= t_far) & (t_near > _HIT_EPS), t_min.argmax(axis=1)


def _cast(scene: SceneSpec, origin: np.ndarray, dirs: np.ndarray, pixel_angle: float) -> _HitBuffer:
    hits = _HitBuffer(origin, dirs, pixel_angle)
    extent, top = scene.extent, scene.wall_height

    # floor
    t, mask = _plane_hits(origin, dirs, 2, 0.0)
    p = origin[None, :] + t[:, None] * dirs
    mask &= (p[:, 0] >= 0) & (p[:, 0] <= extent) & (p[:, 1] >= 0) & (p[:, 1] <= extent)
    hits.offer(t, mask, p[:, :2], FLOOR, scene.floor_seed, 2)

    # perimeter walls: x = 0, x = E, y = 0, y = E
    for i, (axis, value) in enumerate([(0, 0.0), (0, extent), (1, 0.0), (1, extent)]):
        t, mask = _plane_hits(origin, dirs, axis, value)
        p = origin[None, :] + t[:, None] * dirs
        along = p[:, 1 - axis]
        mask &= (along >= 0) & (along <= extent) & (p[:, 2] >= 0) & (p[:, 2] <= top)
        hits.offer(t, mask, np.stack([along, p[:, 2]], axis=1), WALL, scene.wall_seed + i, axis)

    # pillars
    for box in scene.boxes:
        lo, hi = np.asarray(box.lo, dtype=np.float64), np.asarray(box.hi, dtype=np.float64)
        t, mask, face = _box_hits(origin, dirs, lo, hi)
        p = origin[None, :] + t[:, None] * dirs
        # texture coordinates: the two axes spanning the entry face
        u = np.where(face == 0, p[:, 1], p[:, 0])
        v = np.where(face == 2, p[:, 1], p[:, 2])
        hits.offer(t, mask, np.stack([u, v], axis=1), box.class_id, box.texture_seed, face)

    sky = ~np.isfinite(hits.depth)
    hits.depth[sky] = SKY_DEPTH
    if sky.any():
        elevation = np.clip(dirs[sky, 2] / np.linalg.norm(dirs[sky], axis=1), -1.0, 1.0)
        hits.rgb[sky] = np.clip(
            np.asarray(CLASS_COLORS[SKY])[None, :] * (0.85 + 0.15 * elevation[:, None]), 0.0, 1.0
        )
    return hits


def render_frame(scene: SceneSpec, pose: Pose, K: CameraIntrinsics) -> RenderedFrame:
    """Deterministic ray cast against floor, perimeter walls and pillars."""
    R = quat_to_rotation_matrix(pose.rotation)
    origin = np.asarray(pose.translation, dtype=np.float64)
    pixel_angle = 1.0 / K.fx
    rays = ray_directions(K).reshape(-1, 3)

    centre = _cast(scene, origin, rays @ R.T, pixel_angle)

    offsets = (np.arange(SUPERSAMPLE) + 0.5) / SUPERSAMPLE - 0.5
    rgb = np.zeros_like(centre.rgb)
    for dy in offsets:
        for dx in offsets:
            shifted = rays + np.array([dx / K.fx, dy / K.fy, 0.0])
            rgb += _cast(scene, origin, shifted @ R.T, pixel_angle).rgb
    rgb /= SUPERSAMPLE ** 2

    shape = (K.height, K.width)
    return RenderedFrame(
        rgb=rgb.reshape(shape + (3,)),
        depth=centre.depth.reshape(shape),
        labels=centre.labels.reshape(shape),
        pose=pose,
    )
