"""Shared fixtures: seeded generators, small intrinsics and a tiny rendered dataset."""

from __future__ import annotations

import numpy as np
import pytest

from src.dataio.config import RunConfig
from src.dataio.dataset import load_dataset
from src.geometry.camera import CameraIntrinsics
from src.geometry.pose import Pose
from src.geometry.quaternion import Quaternion
from src.synthworld.exporter import export_dataset
from src.synthworld.scene import generate_scene
from src.synthworld.trajectory import generate_trajectory

TINY_SIZE = 32
TINY_LOOPS = 3
TINY_FRAMES_PER_LOOP = 8


def random_unit_quaternion(rng: np.random.Generator) -> Quaternion:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return Quaternion.from_array(q)


def random_pose(rng: np.random.Generator, cls=Pose) -> Pose:
    return cls(rng.normal(size=3), random_unit_quaternion(rng))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_K():
    return CameraIntrinsics.default_for(8)


@pytest.fixture(scope="session")
def tiny_scene():
    return generate_scene(7)


@pytest.fixture(scope="session")
def tiny_dataset_dir(tmp_path_factory, tiny_scene):
    """3 loops x 8 frames at 32x32: seq-00, seq-01 train, seq-02 test."""
    out = tmp_path_factory.mktemp("tiny-ds")
    traj = generate_trajectory(tiny_scene, TINY_LOOPS, TINY_FRAMES_PER_LOOP, seed=7)
    export_dataset(tiny_scene, traj, CameraIntrinsics.default_for(TINY_SIZE), out, workers=2)
    return out


@pytest.fixture
def tiny_dataset(tiny_dataset_dir):
    return load_dataset(tiny_dataset_dir)


@pytest.fixture
def tiny_config():
    return RunConfig(
        input_size=TINY_SIZE,
        stage_channels="4,4,6,6,8",
        head_hidden=8,
        batch=2,
        segment_length=4,
        log_every=1000,
        dropout=0.0,
    )
