import numpy as np
import numpy.testing as npt
import pytest

from src.autodiff import Tape, Tensor, backward, grad_check, ops
from src.fusion import AdaptiveFusionParams, FusionLayer, adaptive_fuse, init_fusion_params, passthrough_params
from src.utils.errors import ShapeError


def _params(w_a, w_b, W, b):
    return AdaptiveFusionParams(Tensor(w_a), Tensor(w_b), Tensor(W), Tensor(b))


class TestAdaptiveFuse:

    def test_passthrough_is_relu_of_first_input(self, rng):
        z_a = Tensor(rng.normal(size=(2, 3, 3, 4)))
        z_b = Tensor(rng.normal(size=(2, 3, 3, 5)))
        out = adaptive_fuse(z_a, z_b, passthrough_params(4, 5))
        npt.assert_allclose(out.values, np.maximum(z_a.values, 0.0))

    def test_passthrough_single_pixel(self):
        out = adaptive_fuse(Tensor([[[-1.0, 2.0]]]), Tensor([[[7.0]]]), passthrough_params(2, 1))
        npt.assert_allclose(out.values.reshape(-1), [0.0, 2.0])

    def test_passthrough_ignores_second_input(self, rng):
        z_a = Tensor(rng.normal(size=(1, 2, 2, 3)))
        params = passthrough_params(3, 2)
        first = adaptive_fuse(z_a, Tensor(rng.normal(size=(1, 2, 2, 2))), params)
        second = adaptive_fuse(z_a, Tensor(rng.normal(size=(1, 2, 2, 2))), params)
        npt.assert_array_equal(first.values, second.values)

    def test_hand_evaluation(self):
        params = _params([0.5], [2.0], np.ones((1, 1, 2, 1)), [-1.0])
        out = adaptive_fuse(Tensor([[[3.0]]]), Tensor([[[5.0]]]), params)
        assert out.values.reshape(()) == pytest.approx(10.5)

    def test_channel_scaling_law(self, rng):
        params = init_fusion_params(3, 2, 4, rng_seed=5)
        z_a = rng.normal(size=(1, 4, 4, 3))
        z_b = Tensor(rng.normal(size=(1, 4, 4, 2)))
        base = adaptive_fuse(Tensor(z_a), z_b, params).values

        params.w_a.values[1] *= 2.0
        z_a[..., 1] /= 2.0
        npt.assert_allclose(adaptive_fuse(Tensor(z_a), z_b, params).values, base, atol=1e-12)

    def test_spatial_mismatch(self, rng):
        with pytest.raises(ShapeError, match="spatial mismatch"):
            adaptive_fuse(Tensor(rng.normal(size=(1, 2, 2, 3))), Tensor(rng.normal(size=(1, 3, 2, 2))),
                          init_fusion_params(3, 2, 2, 0))

    def test_channel_mismatch(self, rng):
        with pytest.raises(ShapeError, match="do not match"):
            adaptive_fuse(Tensor(rng.normal(size=(1, 2, 2, 4))), Tensor(rng.normal(size=(1, 2, 2, 2))),
                          init_fusion_params(3, 2, 2, 0))

    def test_gradients(self, rng):
        params = init_fusion_params(2, 3, 2, rng_seed=1)
        z_a = Tensor(rng.normal(size=(1, 3, 3, 2)))
        z_b = Tensor(rng.normal(size=(1, 3, 3, 3)))
        # keep pre-activation values away from the ReLU kink
        params.b.values[:] = 0.05
        c = Tensor(rng.normal(size=(1, 3, 3, 2)))

        def loss(za, zb, w_a, w_b, W, b):
            return ops.sum(ops.mul(adaptive_fuse(za, zb, AdaptiveFusionParams(w_a, w_b, W, b)), c))

        report = grad_check(loss, z_a, z_b, params.w_a, params.w_b, params.W, params.b)
        assert report.passed, report.max_rel_err


class TestInit:

    def test_weights_start_at_one(self):
        params = init_fusion_params(3, 5, 4, rng_seed=0)
        npt.assert_array_equal(params.w_a.values, np.ones(3))
        npt.assert_array_equal(params.w_b.values, np.ones(5))
        npt.assert_array_equal(params.b.values, np.zeros(4))
        assert params.channels == (3, 5, 4)

    def test_seeded_and_xavier_bounded(self):
        a = init_fusion_params(3, 5, 4, rng_seed=9)
        b = init_fusion_params(3, 5, 4, rng_seed=9)
        npt.assert_array_equal(a.W.values, b.W.values)
        assert np.abs(a.W.values).max() <= np.sqrt(6.0 / (8 + 4))

    def test_non_positive_channels(self):
        with pytest.raises(ShapeError):
            init_fusion_params(0, 2, 2, 0)


class TestFusionLayer:

    def test_named_parameters(self):
        layer = FusionLayer("fusion.semantic", 2, 3, 4, seed=0)
        assert sorted(layer.named_parameters()) == [
            "fusion.semantic.W", "fusion.semantic.b", "fusion.semantic.w_a", "fusion.semantic.w_b",
        ]

    def test_concat_mode_freezes_channel_weights(self, rng):
        layer = FusionLayer("f", 2, 2, 2, seed=0, mode="concat")
        z_a = Tensor(rng.normal(size=(1, 2, 2, 2)), requires_grad=True)
        z_b = Tensor(rng.normal(size=(1, 2, 2, 2)))
        with Tape():
            grads = backward(ops.sum(layer(z_a, z_b)))
        assert layer.params.w_a not in grads
        assert layer.params.W in grads

    def test_disabled_and_unknown_modes(self):
        assert not FusionLayer("f", 1, 1, 1, seed=0, mode="none").enabled
        with pytest.raises(ValueError):
            FusionLayer("f", 1, 1, 1, seed=0, mode="gated")
