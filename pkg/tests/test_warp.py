import numpy as np
import numpy.testing as npt
import pytest

from src.autodiff import Tensor, grad_check, ops
from src.geometry.camera import CameraIntrinsics, pixel_grid
from src.geometry.pose import RelativePose, camera_motion, relative_pose_target
from src.geometry.quaternion import Quaternion
from src.synthworld.renderer import render_frame
from src.synthworld.trajectory import generate_trajectory
from src.utils.errors import WarpError
from src.warp import SKY_DEPTH, FeatureWarper, WarpGrid, bilinear_sample, compute_warp_grid, downscale_grid, warp_features


def _grid(coords, valid=None):
    coords = np.asarray(coords, dtype=np.float64)
    if valid is None:
        valid = np.ones(coords.shape[:-1], dtype=bool)
    return WarpGrid(coords, np.asarray(valid))


def _photometric_errors(scene, prev_pose, curr_pose, K):
    """Valid fraction, warped-vs-current MSE and unwarped MSE under ground-truth motion."""
    prev = render_frame(scene, prev_pose, K)
    curr = render_frame(scene, curr_pose, K)
    motion = camera_motion(relative_pose_target(prev_pose, curr_pose), prev_pose.rotation)
    grid = compute_warp_grid(motion, curr.depth, K)
    warped = bilinear_sample(Tensor(prev.rgb[None]), grid).values[0]

    ok = grid.valid[0]
    warped_mse = np.mean((warped[ok] - curr.rgb[ok]) ** 2)
    plain_mse = np.mean((prev.rgb[ok] - curr.rgb[ok]) ** 2)
    return ok.mean(), warped_mse, plain_mse


class TestComputeWarpGrid:

    def test_identity_motion_gives_pixel_grid(self, small_K):
        grid = compute_warp_grid(RelativePose.identity(), np.full((8, 8), 2.0), small_K)
        npt.assert_array_equal(grid.coords[0], pixel_grid(small_K))
        assert grid.valid.all()

    def test_sideways_translation_shifts_uniformly(self):
        K = CameraIntrinsics(fx=64.0, fy=64.0, cx=16.0, cy=16.0, width=32, height=32)
        rel = RelativePose(np.array([0.1, 0.0, 0.0]), Quaternion.identity())
        grid = compute_warp_grid(rel, np.ones((32, 32)), K)
        shift = grid.coords[0, ..., 0] - pixel_grid(K)[..., 0]
        npt.assert_allclose(shift[grid.valid[0]], 6.4, atol=1e-12)
        npt.assert_allclose(grid.coords[0, ..., 1][grid.valid[0]], pixel_grid(K)[..., 1][grid.valid[0]])
        # columns pushed past the right edge
        assert not grid.valid[0, :, 26:].any()
        assert grid.valid[0, :, :25].all()

    def test_out_of_bounds_is_invalid(self, small_K):
        rel = RelativePose(np.array([-0.5 / small_K.fx * 2.0, 0.0, 0.0]), Quaternion.identity())
        grid = compute_warp_grid(rel, np.full((8, 8), 2.0), small_K)
        # x = 0 lands at -0.5
        assert not grid.valid[0, :, 0].any()
        npt.assert_array_equal(grid.coords[0, :, 0], -1.0)

    def test_sky_is_invalid(self, small_K):
        depth = np.full((8, 8), 2.0)
        depth[:3] = SKY_DEPTH
        grid = compute_warp_grid(RelativePose.identity(), depth, small_K)
        assert not grid.valid[0, :3].any()
        assert grid.valid[0, 3:].all()

    def test_all_invalid_depth_raises(self, small_K):
        with pytest.raises(WarpError, match="no valid pixel"):
            compute_warp_grid(RelativePose.identity(), np.full((8, 8), SKY_DEPTH), small_K)

    def test_depth_size_must_match(self, small_K):
        with pytest.raises(WarpError, match="does not match"):
            compute_warp_grid(RelativePose.identity(), np.ones((4, 4)), small_K)

    def test_batch_of_motions(self, small_K):
        rels = [RelativePose.identity(), RelativePose(np.array([0.01, 0.0, 0.0]), Quaternion.identity())]
        grid = compute_warp_grid(rels, np.full((2, 8, 8), 2.0), small_K)
        assert grid.batch == 2
        with pytest.raises(WarpError):
            compute_warp_grid(rels, np.full((3, 8, 8), 2.0), small_K)


class TestDownscale:

    def test_identity_grid_halves(self):
        K = CameraIntrinsics.default_for(4)
        grid = compute_warp_grid(RelativePose.identity(), np.ones((4, 4)), K)
        half = downscale_grid(grid, 2)
        npt.assert_allclose(half.coords[0], pixel_grid(CameraIntrinsics.default_for(2)))
        assert half.valid.all()

    def test_factor_one_unchanged(self, small_K):
        grid = compute_warp_grid(RelativePose.identity(), np.ones((8, 8)), small_K)
        same = downscale_grid(grid, 1)
        npt.assert_array_equal(same.coords, grid.coords)

    def test_invalid_pixel_poisons_block(self, small_K):
        depth = np.ones((8, 8))
        depth[0, 0] = SKY_DEPTH
        grid = downscale_grid(compute_warp_grid(RelativePose.identity(), depth, small_K), 2)
        assert not grid.valid[0, 0, 0]
        assert grid.valid[0].sum() == 15

    def test_bad_factor(self, small_K):
        grid = compute_warp_grid(RelativePose.identity(), np.ones((8, 8)), small_K)
        with pytest.raises(WarpError):
            downscale_grid(grid, 3)
        with pytest.raises(WarpError):
            downscale_grid(grid, 16)


class TestBilinearSample:

    src = Tensor(np.array([[0.0, 1.0], [2.0, 3.0]])[None, :, :, None])

    def test_midpoint(self):
        out = bilinear_sample(self.src, _grid([[[[0.5, 0.5]]]]))
        assert out.values.reshape(()) == pytest.approx(1.5)

    def test_quarter_along_x(self):
        out = bilinear_sample(self.src, _grid([[[[0.25, 0.0]]]]))
        assert out.values.reshape(()) == pytest.approx(0.25)

    def test_integer_coordinates_are_exact(self, rng):
        src = Tensor(rng.normal(size=(1, 4, 4, 3)))
        K = CameraIntrinsics.default_for(4)
        grid = _grid(pixel_grid(K)[None])
        npt.assert_array_equal(bilinear_sample(src, grid).values, src.values)

    def test_invalid_pixels_are_zero(self):
        out = bilinear_sample(self.src, _grid([[[[1.0, 1.0], [0.0, 0.0]]]], [[[True, False]]]))
        npt.assert_array_equal(out.values.reshape(-1), [3.0, 0.0])

    def test_gradient_matches_finite_differences(self, rng):
        coords = rng.uniform(0.1, 4.9, size=(2, 5, 5, 2))
        coords = np.where(np.abs(coords - np.round(coords)) < 0.05, coords + 0.1, coords)
        valid = rng.uniform(size=(2, 5, 5)) > 0.2
        grid = _grid(coords, valid)
        c = Tensor(rng.normal(size=(2, 5, 5, 3)))

        def loss(src):
            return ops.sum(ops.mul(bilinear_sample(src, grid), c))

        report = grad_check(loss, Tensor(rng.normal(size=(2, 6, 6, 3))))
        assert report.passed, report.max_rel_err


class TestWarpFeatures:

    def test_identity_is_exact(self, rng, small_K):
        feats = Tensor(rng.normal(size=(1, 4, 4, 3)))
        out = warp_features(feats, RelativePose.identity(), np.full((8, 8), 3.0), small_K, 2)
        npt.assert_allclose(out.values, feats.values, atol=1e-12)

    def test_scale_mismatch_raises(self, rng, small_K):
        warper = FeatureWarper.from_depth(RelativePose.identity(), np.ones((8, 8)), small_K)
        with pytest.raises(WarpError, match="does not match"):
            warper.warp(Tensor(rng.normal(size=(1, 4, 4, 2))), 4)
        assert warper.valid_fraction() == 1.0

    def test_rendered_pair_photometric(self, tiny_scene):
        K = CameraIntrinsics.default_for(64)
        traj = generate_trajectory(tiny_scene, 1, 60, seed=3)
        ok, warped_mse, plain_mse = _photometric_errors(tiny_scene, traj.poses[10], traj.poses[11], K)
        assert ok > 0.3
        assert warped_mse < 0.1 * plain_mse

    def test_photometric_along_multi_loop_run(self, tiny_scene):
        """Pairs spread over three 100-frame loops, turns included."""
        K = CameraIntrinsics.default_for(64)
        poses = generate_trajectory(tiny_scene, 3, 100, seed=7).poses
        ends = sorted(set(range(4, 300, 13)) | {76, 172, 272})
        assert len(ends) >= 20

        ratios = {}
        for end in ends:
            ok, warped_mse, plain_mse = _photometric_errors(tiny_scene, poses[end - 1], poses[end], K)
            assert ok > 0.3, end
            ratios[end] = warped_mse / plain_mse
        failing = {end: round(r, 4) for end, r in ratios.items() if not r < 0.1}
        assert not failing, failing
