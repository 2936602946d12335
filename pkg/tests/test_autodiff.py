import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings, strategies as st

from src.autodiff import Tape, Tensor, backward, finite_difference_grad, grad_check, no_grad, ops, parameter
from src.utils.errors import NonFiniteError, ShapeError, TapeError


def _rand(rng, *shape):
    return Tensor(rng.normal(size=shape))


def _projected(fn, shape, rng):
    """Scalar <fn(x), c> so vector-valued primitives can be checked."""
    c = Tensor(rng.normal(size=shape))
    return lambda *xs: ops.sum(ops.mul(fn(*xs), c))


class TestTape:

    def test_linear_gradient(self):
        x = parameter([1.0, 2.0, 3.0], "x")
        with Tape():
            loss = ops.sum(ops.scalar_mul(x, 2.0))
            grads = backward(loss)
        npt.assert_array_equal(grads[x].values, [2.0, 2.0, 2.0])

    def test_shared_input_accumulates(self):
        x = parameter([3.0], "x")
        with Tape():
            grads = backward(ops.sum(ops.mul(x, x)))
        npt.assert_allclose(grads[x].values, [6.0])

    def test_unreached_wrt_gets_zeros(self):
        x = parameter([1.0], "x")
        unused = parameter([[1.0, 2.0]], "unused")
        with Tape():
            grads = backward(ops.sum(x), wrt=[x, unused])
        npt.assert_array_equal(grads[unused].values, np.zeros((1, 2)))

    def test_non_scalar_loss(self):
        x = parameter([1.0, 2.0], "x")
        with Tape():
            y = ops.scalar_mul(x, 3.0)
            with pytest.raises(TapeError, match="scalar"):
                backward(y)

    def test_tape_consumed_once(self):
        x = parameter([1.0], "x")
        with Tape():
            loss = ops.sum(x)
            backward(loss)
            with pytest.raises(TapeError, match="consumed"):
                backward(loss)

    def test_no_grad_detaches(self):
        x = parameter([1.0], "x")
        with Tape():
            with no_grad():
                loss = ops.sum(x)
            assert not loss.requires_grad
            with pytest.raises(TapeError, match="detached"):
                backward(loss)

    def test_detach_stops_gradient(self):
        x = parameter([2.0], "x")
        with Tape():
            loss = ops.sum(ops.mul(x, x.detach()))
            grads = backward(loss)
        npt.assert_allclose(grads[x].values, [2.0])

    def test_non_finite_output_raises(self):
        with pytest.raises(NonFiniteError, match="log"):
            ops.log(Tensor([0.0]))
        with pytest.raises(NonFiniteError):
            ops.exp(Tensor([1e4]))

    def test_operator_overloads(self):
        x = parameter([1.0, -2.0], "x")
        with Tape():
            loss = ops.sum((x * 3.0 - 1.0) + (-x))
            grads = backward(loss)
        npt.assert_allclose(grads[x].values, [2.0, 2.0])


class TestShapes:

    def test_no_broadcasting(self, rng):
        with pytest.raises(ShapeError, match=r"\(2, 3\) vs \(3,\)"):
            ops.add(_rand(rng, 2, 3), _rand(rng, 3))

    def test_conv_channel_mismatch(self, rng):
        with pytest.raises(ShapeError):
            ops.conv2d(_rand(rng, 1, 4, 4, 2), _rand(rng, 3, 3, 3, 1))

    def test_conv_shapes(self, rng):
        x = _rand(rng, 2, 8, 8, 3)
        assert ops.conv2d(x, _rand(rng, 3, 3, 3, 5)).shape == (2, 8, 8, 5)
        assert ops.conv2d(x, _rand(rng, 3, 3, 3, 5), stride=2).shape == (2, 4, 4, 5)
        assert ops.conv2d(x, _rand(rng, 3, 3, 3, 5), padding="valid").shape == (2, 6, 6, 5)
        assert ops.conv2d_transpose(x, _rand(rng, 2, 2, 3, 4), 2).shape == (2, 16, 16, 4)

    def test_pool_needs_divisible_dims(self, rng):
        with pytest.raises(ShapeError):
            ops.avg_pool2d(_rand(rng, 1, 5, 4, 1), 2)

    def test_slice_bounds(self, rng):
        with pytest.raises(ShapeError):
            ops.slice_channels(_rand(rng, 1, 2, 2, 3), 2, 4)

    def test_item_needs_scalar(self, rng):
        with pytest.raises(ShapeError):
            _rand(rng, 2).item()


class TestForwardValues:

    def test_conv_identity_kernel(self, rng):
        x = _rand(rng, 1, 5, 5, 2)
        w = np.zeros((3, 3, 2, 2))
        w[1, 1] = np.eye(2)
        npt.assert_allclose(ops.conv2d(x, Tensor(w)).values, x.values)

    def test_softmax_rows_sum_to_one(self, rng):
        s = ops.softmax_channels(_rand(rng, 2, 3, 3, 4)).values
        npt.assert_allclose(s.sum(axis=-1), 1.0)
        x = _rand(rng, 1, 1, 1, 3)
        npt.assert_allclose(np.exp(ops.log_softmax_channels(x).values), ops.softmax_channels(x).values)

    def test_elu_values(self):
        npt.assert_allclose(ops.elu(Tensor([-1.0, 0.0, 2.0])).values, [np.exp(-1.0) - 1.0, 0.0, 2.0])

    def test_spatial_mean(self, rng):
        x = _rand(rng, 2, 3, 4, 5)
        npt.assert_allclose(ops.spatial_mean(x).values, x.values.mean(axis=(1, 2)))


class TestGradCheck:

    @pytest.mark.parametrize(
        "name, fn, shapes",
        [
            ("mul", ops.mul, [(3, 2), (3, 2)]),
            ("elu", ops.elu, [(4, 3)]),
            ("matmul", ops.matmul, [(3, 4), (4, 2)]),
            ("conv", lambda x, w: ops.conv2d(x, w), [(1, 5, 5, 2), (3, 3, 2, 3)]),
            ("conv_s2", lambda x, w: ops.conv2d(x, w, stride=2), [(1, 6, 6, 2), (3, 3, 2, 2)]),
            ("deconv", lambda x, w: ops.conv2d_transpose(x, w, 2), [(1, 2, 3, 2), (2, 2, 2, 3)]),
            ("pool", lambda x: ops.avg_pool2d(x, 2), [(1, 4, 4, 2)]),
            ("softmax", ops.softmax_channels, [(1, 2, 2, 4)]),
            ("log_softmax", ops.log_softmax_channels, [(1, 2, 2, 4)]),
            ("scale", ops.scale_channels, [(2, 2, 2, 3), (3,)]),
            ("bias", ops.add_channel_bias, [(2, 2, 2, 3), (3,)]),
            ("normalize", ops.normalize_last, [(3, 4)]),
            ("norm_last", lambda x: ops.l2_norm(x, axis=-1), [(3, 4)]),
            ("spatial_mean", ops.spatial_mean, [(2, 3, 3, 2)]),
            ("concat", lambda a, b: ops.concat_channels([a, b]), [(1, 2, 2, 2), (1, 2, 2, 3)]),
            ("slice", lambda x: ops.slice_channels(x, 1, 3), [(1, 2, 2, 4)]),
            ("reshape", lambda x: ops.reshape(x, (6, 2)), [(3, 4)]),
        ],
    )
    def test_primitive(self, rng, name, fn, shapes):
        xs = [Tensor(rng.normal(size=s)) for s in shapes]
        with no_grad():
            out_shape = fn(*xs).shape
        report = grad_check(_projected(fn, out_shape, rng), *xs)
        assert report.passed, f"{name}: {report.max_rel_err:.3e}"

    def test_scalar_reductions(self, rng):
        x = _rand(rng, 3, 4)
        assert grad_check(ops.l2_norm, x).passed
        assert grad_check(ops.mean, x).passed

    def test_log_exp(self, rng):
        x = Tensor(rng.uniform(0.5, 2.0, size=(3, 3)))
        assert grad_check(lambda t: ops.sum(ops.log(t)), x).passed
        assert grad_check(lambda t: ops.sum(ops.exp(t)), x).passed

    def test_detects_wrong_rule(self, rng):
        def wrong_square(x):
            v = x.values
            return Tensor.from_op("wrong_square", v * v, (x,), lambda g: (4.0 * g * v,))

        report = grad_check(lambda t: ops.sum(wrong_square(t)), _rand(rng, 3))
        assert not report.passed
        assert report.max_rel_err == pytest.approx(0.5, rel=1e-3)

    def test_step_must_be_positive(self, rng):
        with pytest.raises(ValueError):
            finite_difference_grad(ops.sum, _rand(rng, 2), h=0.0)

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(min_value=-3.0, max_value=3.0), min_size=2, max_size=6))
    def test_quadratic_matches_closed_form(self, values):
        x = parameter(values, "x")
        with Tape():
            grads = backward(ops.sum(ops.mul(x, x)))
        npt.assert_allclose(grads[x].values, 2.0 * np.asarray(values))
