import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings, strategies as st

from src.geometry.camera import CameraIntrinsics, pixel_grid, project, ray_directions, unproject
from src.geometry.pose import (
    Pose,
    RelativePose,
    camera_motion,
    check_transform,
    compose_camera_motion,
    invert_transform,
    pose_to_transform,
    relative_pose_target,
    transform_to_pose,
)
from src.geometry.quaternion import (
    Quaternion,
    angular_error_deg,
    quat_canonicalize,
    quat_inverse,
    quat_multiply,
    quat_normalize,
    quat_to_rotation_matrix,
    rotate_vector,
    rotation_matrix_to_quat,
)
from src.utils.errors import GeometryError

from conftest import random_pose

components = st.floats(min_value=-1.0, max_value=1.0, allow_nan=False)


@st.composite
def unit_quaternions(draw):
    q = np.array([draw(components) for _ in range(4)])
    n = np.linalg.norm(q)
    if n < 0.1:
        q = np.array([1.0, 0.0, 0.0, 0.0])
        n = 1.0
    return Quaternion.from_array(q / n)


def _close(a: Quaternion, b: Quaternion, tol=1e-12):
    npt.assert_allclose(a.as_array(), b.as_array(), atol=tol)


class TestQuaternion:

    def test_identity_product(self):
        q = quat_normalize(Quaternion(0.3, -0.2, 0.5, 0.1))
        _close(quat_multiply(Quaternion.identity(), q), q)
        _close(quat_multiply(q, Quaternion.identity()), q)

    def test_ninety_degrees_about_z(self):
        q = Quaternion.from_axis_angle([0, 0, 1], math.pi / 2)
        npt.assert_allclose(rotate_vector(q, [1, 0, 0]), [0, 1, 0], atol=1e-12)

    def test_normalize_zero_raises(self):
        with pytest.raises(GeometryError):
            quat_normalize(Quaternion(0.0, 0.0, 0.0, 0.0))

    def test_canonicalize_flips_negative_w(self):
        q = quat_canonicalize(Quaternion(-0.5, 0.5, 0.5, 0.5))
        assert q.w == 0.5 and q.x == -0.5

    @settings(max_examples=50, deadline=None)
    @given(unit_quaternions(), unit_quaternions(), unit_quaternions())
    def test_product_associative(self, a, b, c):
        _close(quat_multiply(quat_multiply(a, b), c), quat_multiply(a, quat_multiply(b, c)), tol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(unit_quaternions())
    def test_inverse_is_identity(self, q):
        _close(quat_multiply(q, quat_inverse(q)), Quaternion.identity(), tol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(unit_quaternions())
    def test_matrix_round_trip(self, q):
        R = quat_to_rotation_matrix(q)
        npt.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
        assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)
        back = rotation_matrix_to_quat(R)
        assert back.w >= 0.0
        assert abs(np.dot(back.as_array(), q.as_array())) == pytest.approx(1.0, abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(unit_quaternions())
    def test_sign_ambiguity_has_zero_angle(self, q):
        assert angular_error_deg(q, -q) == pytest.approx(0.0, abs=1e-5)

    def test_angular_error_known_angle(self):
        q = Quaternion.from_axis_angle([1, 0, 0], math.radians(30.0))
        assert angular_error_deg(Quaternion.identity(), q) == pytest.approx(30.0, abs=1e-9)


class TestTransforms:

    def test_pose_transform_round_trip(self, rng):
        p = random_pose(rng)
        back = transform_to_pose(pose_to_transform(p))
        npt.assert_allclose(back.translation, p.translation, atol=1e-12)
        assert angular_error_deg(back.rotation, p.rotation) < 1e-6

    def test_invert_transform(self, rng):
        T = pose_to_transform(random_pose(rng))
        npt.assert_allclose(T @ invert_transform(T), np.eye(4), atol=1e-12)

    def test_check_transform_rejects_bad_last_row(self):
        T = np.eye(4)
        T[3, 0] = 0.1
        with pytest.raises(GeometryError, match="last row"):
            check_transform(T)

    def test_check_transform_rejects_scaled_rotation(self):
        T = np.eye(4)
        T[0, 0] = 1.1
        with pytest.raises(GeometryError, match="orthonormal"):
            check_transform(T)

    def test_pose_rejects_non_unit_rotation(self):
        with pytest.raises(GeometryError):
            Pose(np.zeros(3), Quaternion(2.0, 0.0, 0.0, 0.0))


class TestRelativeMotion:

    def test_identical_poses_give_identity(self, rng):
        p = random_pose(rng)
        rel = relative_pose_target(p, p)
        npt.assert_allclose(rel.translation, 0.0)
        assert angular_error_deg(rel.rotation, Quaternion.identity()) < 1e-6
        assert isinstance(rel, RelativePose)

    def test_translation_is_world_difference(self):
        prev = Pose(np.array([1.0, 2.0, 3.0]), Quaternion.from_axis_angle([0, 0, 1], 0.7))
        curr = Pose(np.array([1.5, 1.0, 3.0]), Quaternion.from_axis_angle([0, 0, 1], 0.9))
        rel = relative_pose_target(prev, curr)
        npt.assert_allclose(rel.translation, [0.5, -1.0, 0.0])
        assert angular_error_deg(rel.rotation, Quaternion.from_axis_angle([0, 0, 1], 0.2)) < 1e-6

    def test_camera_motion_composes_back(self, rng):
        prev, curr = random_pose(rng), random_pose(rng)
        motion = camera_motion(relative_pose_target(prev, curr), prev.rotation)
        rebuilt = compose_camera_motion(prev, motion)
        npt.assert_allclose(rebuilt.translation, curr.translation, atol=1e-9)
        assert angular_error_deg(rebuilt.rotation, curr.rotation) < 1e-6

    def test_camera_motion_matches_transform_product(self, rng):
        prev, curr = random_pose(rng), random_pose(rng)
        motion = camera_motion(relative_pose_target(prev, curr), prev.rotation)
        expected = invert_transform(pose_to_transform(prev)) @ pose_to_transform(curr)
        npt.assert_allclose(pose_to_transform(motion), expected, atol=1e-9)


class TestCamera:

    def test_principal_point_projection(self, small_K):
        npt.assert_allclose(project([0.0, 0.0, 2.0], small_K), [small_K.cx, small_K.cy])

    def test_behind_camera_raises(self, small_K):
        with pytest.raises(GeometryError, match="behind"):
            project([0.0, 0.0, -1.0], small_K)

    def test_unproject_needs_positive_depth(self, small_K):
        with pytest.raises(GeometryError):
            unproject([1.0, 1.0], 0.0, small_K)

    @settings(max_examples=50, deadline=None)
    @given(
        st.floats(min_value=0.0, max_value=7.0),
        st.floats(min_value=0.0, max_value=7.0),
        st.floats(min_value=0.1, max_value=50.0),
    )
    def test_unproject_project_round_trip(self, u, v, d):
        K = CameraIntrinsics.default_for(8)
        pt = unproject([u, v], d, K)
        npt.assert_allclose(project(pt, K), [u, v], atol=1e-9)
        assert pt[2] == pytest.approx(d)

    def test_rays_have_unit_z(self, small_K):
        rays = ray_directions(small_K)
        assert rays.shape == (8, 8, 3)
        npt.assert_array_equal(rays[..., 2], 1.0)
        npt.assert_array_equal(pixel_grid(small_K)[2, 5], [5.0, 2.0])

    def test_invalid_intrinsics(self):
        with pytest.raises(GeometryError):
            CameraIntrinsics(fx=0.0, fy=1.0, cx=1.0, cy=1.0, width=4, height=4)
        with pytest.raises(GeometryError):
            CameraIntrinsics(fx=1.0, fy=1.0, cx=5.0, cy=1.0, width=4, height=4)
