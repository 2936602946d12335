"""
trajectory.py
-------------
Multi-loop camera trajectories through a ``SceneSpec``.

Every loop is a circle through a common start point in the middle of the
scene. The circles share their tangent at that point, so loops join without
a jump and the trajectory can be traversed as one continuous drive. Loops
differ in radius, heading wobble and pitch wobble.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from src.geometry.pose import Pose
from src.geometry.quaternion import angular_error_deg, rotation_matrix_to_quat
from src.synthworld.scene import SceneSpec
from src.utils.errors import TrajectoryError
from src.utils.log import get_logger

logger = get_logger(__name__)

MAX_STEP_M = 0.3
MAX_TURN_DEG = 10.0
CAMERA_HEIGHT = 1.5
FREE_MARGIN = 0.5
MAX_ATTEMPTS = 20

_MAX_RADIUS = 2.4
_STEP_FILL = 0.28           # target arc step as a fraction of 2π·r / F
_TANGENT_MIN_FRAMES = 45    # below this the heading cannot follow the circle within MAX_TURN_DEG


@dataclass(frozen=True)
class TrajectorySpec:
    loops: int
    frames_per_loop: int
    camera_height: float
    poses: tuple

    def __len__(self) -> int:
        return len(self.poses)

    def loop_of(self, index: int) -> int:
        return index // self.frames_per_loop

    def loop_poses(self, loop: int) -> tuple:
        start = loop * self.frames_per_loop
        return self.poses[start:start + self.frames_per_loop]

    def path_length(self, loop: int | None = None) -> float:
        poses = self.poses if loop is None else self.loop_poses(loop)
        return float(sum(np.linalg.norm(b.translation - a.translation) for a, b in zip(poses, poses[1:])))


def camera_rotation(yaw: float, pitch: float) -> np.ndarray:
    """
    Camera-to-world rotation for a camera looking along heading ``yaw``
    (radians from +x) tilted down by ``pitch``. Columns are the camera's
    right, down and forward axes in world coordinates.
    """
    forward = np.array([math.cos(pitch) * math.cos(yaw), math.cos(pitch) * math.sin(yaw), -math.sin(pitch)])
    right = np.array([math.sin(yaw), -math.cos(yaw), 0.0])
    down = np.cross(forward, right)
    return np.stack([right, down, forward], axis=1)


def _loop_poses(start: np.ndarray, base_dir: float, radius: float, frames: int, wobble: tuple,
                height: float) -> list[Pose]:
    amp, freq, pitch_amp = wobble
    center = start + radius * np.array([math.cos(base_dir), math.sin(base_dir)])
    # the start point sits at circle angle base_dir + π; counter-clockwise tangent there
    start_heading = base_dir + 1.5 * math.pi

    poses = []
    for i in range(frames):
        theta = 2 * math.pi * i / frames
        angle = base_dir + math.pi + theta
        xy = center + radius * np.array([math.cos(angle), math.sin(angle)])
        if frames >= _TANGENT_MIN_FRAMES:
            yaw = angle + math.pi / 2 + amp * math.sin(freq * theta)
        else:
            yaw = start_heading + amp * math.sin(theta)
        pitch = pitch_amp * math.sin(2 * theta)
        R = camera_rotation(yaw, pitch)
        poses.append(Pose(np.array([xy[0], xy[1], height]), rotation_matrix_to_quat(R)))
    return poses


def check_trajectory(scene: SceneSpec, poses, max_step: float = MAX_STEP_M,
                     max_turn: float = MAX_TURN_DEG, margin: float = FREE_MARGIN) -> list[str]:
    """Returns the violated constraints; empty when the trajectory is valid."""
    problems = []
    for i, p in enumerate(poses):
        if not scene.is_free(p.translation[0], p.translation[1], margin):
            problems.append(f"frame {i} at {p.translation[:2].round(2).tolist()} is not in free space")
    for i, (a, b) in enumerate(zip(poses, poses[1:])):
        step = float(np.linalg.norm(b.translation - a.translation))
        turn = angular_error_deg(a.rotation, b.rotation)
        if step > max_step:
            problems.append(f"frames {i}->{i + 1} move {step:.3f} m > {max_step} m")
        if turn > max_turn:
            problems.append(f"frames {i}->{i + 1} turn {turn:.2f} deg > {max_turn} deg")
    return problems


def generate_trajectory(scene: SceneSpec, loops: int, frames_per_loop: int, seed: int,
                        camera_height: float = CAMERA_HEIGHT) -> TrajectorySpec:
    """
    Deterministic closed loops in free space. Raises ``TrajectoryError``
    when no layout within ``MAX_ATTEMPTS`` satisfies the motion bounds.
    """
    if loops < 1:
        raise TrajectoryError(f"need at least one loop, got {loops}")
    if frames_per_loop < 2:
        raise TrajectoryError(f"need at least two frames per loop, got {frames_per_loop}")

    rng = np.random.default_rng(seed)
    max_radius = min(_MAX_RADIUS * scene.extent / 20.0, _STEP_FILL * frames_per_loop / (2 * math.pi))
    per_step_turn = 360.0 / frames_per_loop

    problems: list[str] = []
    for attempt in range(1, MAX_ATTEMPTS + 1):
        base_dir = rng.uniform(0, 2 * math.pi)
        start = scene.center
        poses: list[Pose] = []
        for _ in range(loops):
            radius = max_radius * rng.uniform(0.85, 1.0)
            freq = int(rng.integers(2, 4))
            if frames_per_loop >= _TANGENT_MIN_FRAMES:
                headroom = max(0.0, MAX_TURN_DEG / per_step_turn - 1.0)
                amp = min(math.radians(15.0), 0.5 * headroom / freq) * rng.uniform(0.5, 1.0)
            else:
                amp = min(math.radians(60.0), math.radians(0.8 * MAX_TURN_DEG * frames_per_loop / (2 * math.pi)))
                amp *= rng.uniform(0.5, 1.0)
            pitch_amp = math.radians(rng.uniform(1.0, 3.0))
            poses.extend(_loop_poses(start, base_dir, radius, frames_per_loop, (amp, freq, pitch_amp), camera_height))

        problems = check_trajectory(scene, poses)
        if not problems:
            logger.debug(f"trajectory accepted on attempt {attempt}: {loops} loops x {frames_per_loop} frames")
            return TrajectorySpec(loops, frames_per_loop, float(camera_height), tuple(poses))
        logger.debug(f"trajectory attempt {attempt} rejected: {problems[0]}")

    raise TrajectoryError(
        f"no free path after {MAX_ATTEMPTS} attempts in scene seed {scene.seed}: {problems[0]}"
    )
