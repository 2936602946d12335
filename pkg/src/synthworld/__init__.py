from src.synthworld.renderer import RenderedFrame, render_frame
from src.synthworld.scene import CLASS_NAMES, NUM_CLASSES, Box, SceneSpec, generate_scene
from src.synthworld.trajectory import TrajectorySpec, generate_trajectory

# ``src.synthworld.exporter`` depends on ``src.dataio`` and is imported directly.

__all__ = [
    "CLASS_NAMES",
    "NUM_CLASSES",
    "Box",
    "RenderedFrame",
    "SceneSpec",
    "TrajectorySpec",
    "generate_scene",
    "generate_trajectory",
    "render_frame",
]
