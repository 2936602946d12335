import numpy as np
import numpy.testing as npt
import pytest

from src.autodiff import Tape, Tensor, backward, no_grad, ops
from src.fusion import passthrough_params
from src.geometry.camera import CameraIntrinsics
from src.geometry.pose import RelativePose
from src.losses import UncertaintyWeights
from src.networks import (
    EncoderConfig,
    JointModel,
    ModelConfig,
    TemporalFeatureCache,
    forward_global_pose,
    forward_joint,
    forward_odometry,
    forward_segmentation,
    load_checkpoint,
    load_into,
    save_checkpoint,
)
from src.networks.checkpoint import shape_diff
from src.utils.errors import CheckpointError, ShapeError
from src.warp import FeatureWarper

SIZE = 32


def _config(**overrides):
    values = dict(encoder=EncoderConfig(SIZE, (2, 2, 3, 3, 4)), head_hidden=4, dropout=0.0, seed=3)
    values.update(overrides)
    return ModelConfig(**values)


@pytest.fixture
def model():
    return JointModel(_config()).eval()


@pytest.fixture
def images(rng):
    return Tensor(rng.uniform(size=(2, SIZE, SIZE, 3))), Tensor(rng.uniform(size=(2, SIZE, SIZE, 3)))


@pytest.fixture
def K():
    return CameraIntrinsics.default_for(SIZE)


class TestConfig:

    def test_input_size_must_divide(self):
        with pytest.raises(ShapeError, match="divisible"):
            EncoderConfig(48, (2, 2, 3, 3, 4))

    def test_five_stages(self):
        with pytest.raises(ShapeError):
            EncoderConfig(32, (2, 2, 3, 3))

    def test_warp_stages(self):
        with pytest.raises(ShapeError):
            _config(warp_fusion_stages=(2, 3))
        assert _config(warp_fusion_stages=(4, 5)).seg_depth == 5
        assert _config().seg_depth == 4


class TestJointModel:

    def test_deterministic_construction(self):
        a, b = JointModel(_config()).state_dict(), JointModel(_config()).state_dict()
        assert a.keys() == b.keys()
        for name in a:
            npt.assert_array_equal(a[name], b[name])

    def test_parameter_groups(self, model):
        names = model.parameters().keys()
        for prefix in ("trunk.", "pose.", "odom.", "seg.", "fusion.temporal.", "fusion.semantic.", "fusion.warp3."):
            assert any(n.startswith(prefix) for n in names), prefix
        assert not any(n.startswith("uncertainty.") for n in names)

        model.uncertainty = UncertaintyWeights.initial()
        assert "uncertainty.s_q" in model.parameters()

    def test_separate_seg_encoder(self):
        names = JointModel(_config(share_seg_encoder=False)).parameters()
        assert any(n.startswith("seg.trunk.") for n in names)

    def test_joint_shapes(self, model, images, K):
        img_prev, img_t = images
        out = forward_joint(model, img_prev, img_t, np.full((2, SIZE, SIZE), 3.0), K, TemporalFeatureCache.empty())
        assert out.pose.translation.shape == (2, 3)
        assert out.pose.rotation_raw.shape == (2, 4)
        assert out.odometry.translation.shape == (2, 3)
        assert out.logits.shape == (2, SIZE, SIZE, 4)
        assert set(out.cache.seg_features) == {3, 4}
        assert out.cache.pose_features.shape == (2, 1, 1, 4)
        assert not out.cache.is_empty

    def test_cache_is_detached(self, model, images, K):
        img_prev, img_t = images
        out = forward_joint(model, img_prev, img_t, np.full((2, SIZE, SIZE), 3.0), K, TemporalFeatureCache.empty())
        assert not out.cache.pose_features.requires_grad
        assert not out.cache.prev_pose.translation.requires_grad
        assert all(not f.requires_grad for f in out.cache.seg_features.values())

    def test_wrong_image_size(self, model, rng):
        with pytest.raises(ShapeError, match="image batch"):
            forward_odometry(model, Tensor(rng.uniform(size=(1, 64, 64, 3))), Tensor(rng.uniform(size=(1, 64, 64, 3))))

    def test_eval_mode_is_deterministic(self, rng):
        model = JointModel(_config(dropout=0.5)).eval()
        img = Tensor(rng.uniform(size=(1, SIZE, SIZE, 3)))
        a, _ = forward_global_pose(model, img, TemporalFeatureCache.empty())
        b, _ = forward_global_pose(model, img, TemporalFeatureCache.empty())
        npt.assert_array_equal(a.translation.values, b.translation.values)

    def test_temporal_cache_changes_pose(self, model, images):
        _, img_t = images
        with no_grad():
            first, s5 = forward_global_pose(model, img_t, TemporalFeatureCache.empty())
            cached, _ = forward_global_pose(model, img_t, TemporalFeatureCache(pose_features=s5))
        assert not np.allclose(first.translation.values, cached.translation.values)

    def test_cache_ignored_without_fusion(self, images):
        model = JointModel(_config(fusion_mode="none")).eval()
        _, img_t = images
        first, s5 = forward_global_pose(model, img_t, TemporalFeatureCache.empty())
        cached, _ = forward_global_pose(model, img_t, TemporalFeatureCache(pose_features=s5))
        npt.assert_array_equal(first.translation.values, cached.translation.values)

    def test_cache_shape_mismatch(self, model, images):
        _, img_t = images
        with pytest.raises(ShapeError, match="temporal cache"):
            forward_global_pose(model, img_t, TemporalFeatureCache(pose_features=Tensor(np.zeros((2, 1, 1, 7)))))

    def test_passthrough_temporal_fusion_ignores_the_cache(self, model, images, rng):
        c5 = model.cfg.encoder.channels(5)
        model.fuse_temporal.params = passthrough_params(c5, c5)
        _, img_t = images
        with no_grad():
            _, s5 = forward_global_pose(model, img_t, TemporalFeatureCache.empty())
            a, _ = forward_global_pose(model, img_t, TemporalFeatureCache(pose_features=s5))
            b, _ = forward_global_pose(model, img_t, TemporalFeatureCache(pose_features=Tensor(rng.normal(size=s5.shape))))
        npt.assert_array_equal(a.translation.values, b.translation.values)
        npt.assert_array_equal(a.rotation_raw.values, b.rotation_raw.values)

    def test_pose_and_odometry_share_the_trunk(self, model, images, rng):
        assert [k for k, _ in model.odom_curr.order] == [4]
        assert not any(n.startswith(("odom.curr.stage1", "odom.curr.stage2", "odom.curr.stage3")) for n in model.parameters())
        trunk = {n: t for n, t in model.parameters().items() if n.startswith("trunk.")}
        img_prev, img_t = images
        proj = Tensor(rng.normal(size=(2, 4)))

        with Tape():
            odometry = forward_odometry(model, img_prev, img_t)
            from_odometry = backward(ops.sum(ops.mul(odometry.rotation_raw, proj)), wrt=list(trunk.values()))
        with Tape():
            pose, _ = forward_global_pose(model, img_t, TemporalFeatureCache.empty())
            from_pose = backward(ops.sum(ops.mul(pose.rotation_raw, proj)), wrt=list(trunk.values()))

        for name, t in trunk.items():
            assert np.any(from_odometry[t].values), name
            assert np.any(from_pose[t].values), name

    def test_odometry_gradient_reaches_both_images(self, model, images, rng):
        img_prev, img_t = (Tensor(x.values, requires_grad=True) for x in images)
        proj = Tensor(rng.normal(size=(2, 4)))
        with Tape():
            out = forward_odometry(model, img_prev, img_t)
            grads = backward(ops.sum(ops.mul(out.rotation_raw, proj)), wrt=[img_prev, img_t])
        assert np.any(grads[img_prev].values)
        assert np.any(grads[img_t].values)

    def test_fresh_odometry_predicts_no_translation(self, model, images):
        with no_grad():
            out = forward_odometry(model, *images)
        npt.assert_array_equal(out.translation.values, 0.0)

    def test_fixed_warp_motion_decouples_segmentation_from_odometry(self, model, images, K):
        img_prev, img_t = images
        depth = np.full((2, SIZE, SIZE), 3.0)
        motion = [RelativePose.identity()] * 2
        with no_grad():
            cache = forward_joint(model, img_prev, img_t, depth, K, TemporalFeatureCache.empty()).cache
            before = forward_joint(model, img_prev, img_t, depth, K, cache, warp_motion=motion)
            model.parameters()["odom.head.fc_q.b"].values += 0.5
            after = forward_joint(model, img_prev, img_t, depth, K, cache, warp_motion=motion)
        npt.assert_array_equal(after.logits.values, before.logits.values)
        assert not np.allclose(after.odometry.rotation_raw.values, before.odometry.rotation_raw.values)

    def test_identity_warp_returns_cached_features(self, model, rng, K):
        img = Tensor(rng.uniform(size=(1, SIZE, SIZE, 3)))
        first = forward_segmentation(model, img, TemporalFeatureCache.empty())
        cache = TemporalFeatureCache(seg_features={k: first.stage_features[k].detach() for k in (3, 4)})
        depth = np.full((1, SIZE, SIZE), 4.0)

        warper = FeatureWarper.from_depth([RelativePose.identity()], depth, K)
        for k in (3, 4):
            npt.assert_allclose(warper.warp(cache.seg_features[k], 2 ** k).values, cache.seg_features[k].values,
                                atol=1e-12)

        second = forward_segmentation(model, img, cache, [RelativePose.identity()], depth, K)
        assert second.logits.shape == first.logits.shape
        # warp fusion is active, so the output moves away from the uncached pass
        assert not np.allclose(second.logits.values, first.logits.values)


class TestCheckpoint:

    def test_round_trip(self, tmp_path, model):
        model.uncertainty = UncertaintyWeights.initial()
        path = save_checkpoint(tmp_path / "m.npz", model.state_dict(), {"task": "loc", "steps": 3})
        arrays, meta = load_checkpoint(path)
        assert meta == {"task": "loc", "steps": 3}

        other = JointModel(_config(seed=99))
        other.uncertainty = UncertaintyWeights.initial(rotation=0.0)
        loaded = load_into(other.parameters(), arrays)
        assert len(loaded) == len(arrays)
        for name, values in model.state_dict().items():
            npt.assert_array_equal(other.parameters()[name].values, values)

    def test_shape_diff_lines(self):
        expected = {"a": np.zeros(2), "b": np.zeros((2, 2)), "c": np.zeros(1)}
        found = {"b": np.zeros((3, 2)), "c": np.zeros(1), "d": np.zeros(4)}
        assert shape_diff(expected, found) == [
            "missing a (2,)",
            "b: expected (2, 2), found (3, 2)",
            "unexpected d (4,)",
        ]

    def test_strict_load_reports_diff(self, tmp_path, model):
        arrays = model.state_dict()
        arrays.pop(next(iter(arrays)))
        with pytest.raises(CheckpointError, match="missing"):
            load_into(model.parameters(), arrays)

    def test_non_strict_load(self, model):
        target = JointModel(_config(encoder=EncoderConfig(SIZE, (2, 2, 3, 3, 6))))
        loaded = load_into(target.parameters(), model.state_dict(), strict=False)
        assert loaded
        assert not any(n.startswith("fusion.temporal.") for n in loaded)
        assert any(n.startswith("trunk.") for n in loaded)

    def test_unreadable_checkpoint(self, tmp_path):
        bad = tmp_path / "bad.npz"
        bad.write_bytes(b"not a checkpoint")
        with pytest.raises(CheckpointError):
            load_checkpoint(bad)

    def test_atomic_write_leaves_no_temp_files(self, tmp_path, model):
        save_checkpoint(tmp_path / "m.npz", model.state_dict())
        assert [p.name for p in tmp_path.iterdir()] == ["m.npz"]

    def test_failed_write_keeps_previous_checkpoint(self, tmp_path, model, monkeypatch):
        path = save_checkpoint(tmp_path / "m.npz", model.state_dict(), {"task": "seg"})

        def broken_savez(fh, **arrays):
            fh.write(b"partial")
            raise OSError("disk full")

        monkeypatch.setattr("src.networks.checkpoint.np.savez", broken_savez)
        with pytest.raises(OSError, match="disk full"):
            save_checkpoint(path, model.state_dict(), {"task": "vo"})
        assert [p.name for p in tmp_path.iterdir()] == ["m.npz"]
        assert load_checkpoint(path)[1] == {"task": "seg"}
