"""
scene.py
--------
Procedural square world: textured floor, four perimeter walls and
axis-aligned box pillars. World frame is z-up with the floor at z = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# ── Class palette ────────────────────────────────────────────────────────────

FLOOR, WALL, PILLAR, SKY = 0, 1, 2, 3
CLASS_NAMES = ("floor", "wall", "pillar", "sky")
CLASS_COLORS = {
    FLOOR: (0.55, 0.50, 0.42),
    WALL: (0.70, 0.72, 0.78),
    PILLAR: (0.80, 0.35, 0.25),
    SKY: (0.45, 0.65, 0.95),
}
NUM_CLASSES = len(CLASS_NAMES)

DEFAULT_EXTENT = 20.0
DEFAULT_WALL_HEIGHT = 3.0

# pillars live in an annulus around the centre so loops through the middle stay free
_PILLAR_RING = (6.0, 8.5)
_MIN_PILLARS = 3
_MAX_PILLARS = 6


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple
    class_id: int = PILLAR
    texture_seed: int = 0

    def contains_xy(self, x: float, y: float, margin: float = 0.0) -> bool:
        return (self.lo[0] - margin <= x <= self.hi[0] + margin) and (self.lo[1] - margin <= y <= self.hi[1] + margin)


@dataclass(frozen=True)
class SceneSpec:
    extent: float = DEFAULT_EXTENT
    wall_height: float = DEFAULT_WALL_HEIGHT
    boxes: tuple = ()
    floor_seed: int = 0
    wall_seed: int = 0
    seed: int = 0
    palette: tuple = field(default=CLASS_NAMES)

    @property
    def center(self) -> np.ndarray:
        return np.array([self.extent / 2.0, self.extent / 2.0])

    def is_free(self, x: float, y: float, margin: float = 0.5) -> bool:
        if not (margin <= x <= self.extent - margin and margin <= y <= self.extent - margin):
            return False
        return not any(b.contains_xy(x, y, margin) for b in self.boxes)

    def as_dict(self) -> dict:
        return {
            "seed": self.seed,
            "extent": self.extent,
            "wall_height": self.wall_height,
            "floor_seed": self.floor_seed,
            "wall_seed": self.wall_seed,
            "boxes": [
                {"lo": [float(v) for v in b.lo], "hi": [float(v) for v in b.hi],
                 "class_id": int(b.class_id), "texture_seed": int(b.texture_seed)}
                for b in self.boxes
            ],
        }


def generate_scene(seed: int, extent: float = DEFAULT_EXTENT) -> SceneSpec:
    """Deterministic scene: 3–6 non-overlapping pillars spread around the centre."""
    rng = np.random.default_rng(seed)
    n_pillars = int(rng.integers(_MIN_PILLARS, _MAX_PILLARS + 1))
    center = extent / 2.0
    scale = extent / DEFAULT_EXTENT

    boxes: list[Box] = []
    # evenly spaced sectors with jitter keep pillars apart and visible from every heading
    offset = rng.uniform(0, 2 * np.pi)
    for i in range(n_pillars):
        angle = offset + 2 * np.pi * i / n_pillars + rng.uniform(-0.3, 0.3)
        radius = rng.uniform(*_PILLAR_RING) * scale
        half = float(rng.uniform(0.3, 0.6) * scale)
        cx, cy = center + radius * np.cos(angle), center + radius * np.sin(angle)
        cx = float(np.clip(cx, half + 0.1, extent - half - 0.1))
        cy = float(np.clip(cy, half + 0.1, extent - half - 0.1))
        boxes.append(
            Box(
                lo=(cx - half, cy - half, 0.0),
                hi=(cx + half, cy + half, float(DEFAULT_WALL_HEIGHT * rng.uniform(0.7, 1.0))),
                class_id=PILLAR,
                texture_seed=int(rng.integers(2**31)),
            )
        )

    return SceneSpec(
        extent=float(extent),
        wall_height=DEFAULT_WALL_HEIGHT,
        boxes=tuple(boxes),
        floor_seed=int(rng.integers(2**31)),
        wall_seed=int(rng.integers(2**31)),
        seed=int(seed),
    )
