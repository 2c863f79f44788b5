import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from disenkg import autodiff as ad


def brute_force_circcorr(a, b):
    d = len(a)
    out = np.zeros(d)
    for k in range(d):
        for i in range(d):
            out[k] += a[i] * b[(k + i) % d]
    return out


class TestPrimitiveForward:
    def test_softmax_equal_logits(self):
        y = ad.softmax(ad.Tensor([0.0, 0.0]), axis=0)
        np.testing.assert_allclose(y.data, [0.5, 0.5])

    def test_diag_identity(self):
        out = ad.diag_scale(ad.Tensor([1.0, 1.0, 1.0]), ad.Tensor([2.0, 3.0, 4.0]))
        np.testing.assert_array_equal(out.data, [2.0, 3.0, 4.0])

    def test_matvec(self):
        m = ad.Tensor([[1.0, 2.0], [3.0, 4.0]])
        v = ad.Tensor([1.0, 1.0])
        np.testing.assert_array_equal(ad.matmul(m, v).data, [3.0, 7.0])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ad.ShapeError, match=r"\(2,\).*\(3,\)"):
            ad.add(ad.Tensor([1.0, 2.0]), ad.Tensor([1.0, 2.0, 3.0]))
        with pytest.raises(ad.ShapeError):
            ad.matmul(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((2, 3))))

    def test_log_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            ad.log(ad.Tensor([1.0, 0.0]))

    def test_log_sigmoid_matches_naive(self):
        x = np.array([-3.0, -0.5, 0.0, 2.0, 30.0])
        out = ad.log_sigmoid(ad.Tensor(x))
        np.testing.assert_allclose(out.data, np.log(1.0 / (1.0 + np.exp(-x))), atol=1e-12)


class TestBackward:
    def test_square(self):
        x = ad.parameter(3.0)
        loss = ad.mul(x, x)
        loss.backward()
        assert x.grad == pytest.approx(6.0)

    def test_linear(self):
        x = ad.parameter(2.0)
        y = ad.parameter(5.0)
        ad.backward(ad.add(x, y))
        assert x.grad == pytest.approx(1.0)
        assert y.grad == pytest.approx(1.0)

    def test_softmax_component(self):
        x = ad.parameter([0.0, 0.0])
        y = ad.softmax(x, axis=0)
        ad.backward(ad.index_select(y, 0, [0]))
        np.testing.assert_allclose(x.grad, [0.25, -0.25], atol=1e-12)

    def test_fanout_accumulates(self):
        # f(x) = x*x + x  used twice; compare against finite differences
        x = ad.parameter([1.3, -0.4])

        def f():
            s = ad.mul(x, x)
            return ad.reduce_sum(ad.add(s, x))

        assert ad.grad_check(f, {"x": x}) < 1e-6

    def test_nonscalar_loss_rejected(self):
        x = ad.parameter([1.0, 2.0])
        with pytest.raises(ad.ShapeError):
            ad.backward(ad.mul(x, x))

    def test_nonparticipating_leaf_gets_zero(self):
        x = ad.parameter([1.0, 2.0])
        y = ad.parameter([3.0])
        g = ad.grads(ad.reduce_sum(ad.mul(x, x)), {"x": x, "y": y})
        np.testing.assert_array_equal(g["y"], [0.0])

    def test_no_grad_blocks_recording(self):
        x = ad.parameter([1.0])
        with ad.no_grad():
            y = ad.mul(x, x)
        assert y._backward is None and not y.requires_grad


class TestGradCheck:
    def test_square_small_error(self):
        x = ad.parameter(3.0)
        err = ad.grad_check(lambda: ad.mul(x, x), {"x": x})
        assert err < 1e-6

    def test_constant_function_zero_error(self):
        x = ad.parameter([1.0, 2.0])
        c = ad.Tensor(5.0)
        err = ad.grad_check(lambda: ad.add_scalar(ad.mul_scalar(c, 1.0), 0.0), {"x": x})
        assert err == 0.0

    @pytest.mark.parametrize("op_name", [
        "add", "sub", "mul", "matmul", "scale_rows", "outer_sum", "tanh", "relu",
        "sigmoid", "log", "exp", "log_sigmoid", "softmax", "segment_softmax",
        "index_select", "segment_sum", "reduce_sum", "reduce_mean", "reshape",
        "concat", "conv2d", "circular_correlation", "l1_distance_all", "clamp",
        "transpose",
    ])
    def test_each_primitive(self, op_name):
        rng = np.random.default_rng(42)
        a = ad.parameter(rng.normal(size=(3, 4)))
        b = ad.parameter(rng.normal(size=(3, 4)))
        seg = np.array([0, 0, 1])

        def col(t):
            return ad.reshape(ad.index_select(t, 1, [0]), (3,))

        def kern(t):
            return ad.reshape(ad.index_select(ad.reshape(t, (12,)), 0, [0, 1, 2, 3]), (1, 1, 2, 2))

        builders = {
            "add": lambda: ad.add(a, b),
            "sub": lambda: ad.sub(a, b),
            "mul": lambda: ad.mul(a, b),
            "matmul": lambda: ad.matmul(a, ad.transpose(b)),
            "scale_rows": lambda: ad.scale_rows(a, col(b)),
            "outer_sum": lambda: ad.outer_sum(col(a), col(b)),
            "tanh": lambda: ad.tanh(a),
            "relu": lambda: ad.relu(a),
            "sigmoid": lambda: ad.sigmoid(a),
            "log": lambda: ad.log(ad.exp(a)),
            "exp": lambda: ad.exp(a),
            "log_sigmoid": lambda: ad.log_sigmoid(a),
            "softmax": lambda: ad.softmax(a, axis=1),
            "segment_softmax": lambda: ad.segment_softmax(col(a), seg, 2),
            "index_select": lambda: ad.index_select(a, 0, [2, 0, 0]),
            "segment_sum": lambda: ad.segment_sum(a, seg, 2),
            "reduce_sum": lambda: ad.reduce_sum(a, axis=0),
            "reduce_mean": lambda: ad.reduce_mean(a, axis=1),
            "reshape": lambda: ad.reshape(a, (2, 6)),
            "concat": lambda: ad.concat([a, b], axis=1),
            "conv2d": lambda: ad.conv2d(ad.reshape(a, (1, 1, 3, 4)), kern(b)),
            "circular_correlation": lambda: ad.circular_correlation(a, b),
            "l1_distance_all": lambda: ad.l1_distance_all(a, b),
            "clamp": lambda: ad.clamp(a, -0.5, 0.5),
            "transpose": lambda: ad.transpose(a),
        }

        def loss():
            out = builders[op_name]()
            return ad.reduce_sum(ad.mul(out, out)) if out.data.ndim else ad.mul(out, out)

        assert ad.grad_check(loss, {"a": a, "b": b}) < 1e-4


class TestSoftmaxProperties:
    @given(st.lists(st.floats(min_value=-30, max_value=30), min_size=1, max_size=8),
           st.floats(min_value=-50, max_value=50))
    @settings(max_examples=60, deadline=None)
    def test_normalized_and_shift_invariant(self, logits, shift):
        x = np.array(logits)
        y = ad.softmax(ad.Tensor(x), axis=0).data
        assert np.all(y >= 0)
        assert abs(y.sum() - 1.0) < 1e-9
        y_shifted = ad.softmax(ad.Tensor(x + shift), axis=0).data
        np.testing.assert_allclose(y, y_shifted, atol=1e-9)


class TestCircularCorrelation:
    def test_delta_identity(self):
        out = ad.circular_correlation(ad.Tensor([1.0, 0.0, 0.0]), ad.Tensor([5.0, 6.0, 7.0]))
        np.testing.assert_array_equal(out.data, [5.0, 6.0, 7.0])

    def test_two_element(self):
        out = ad.circular_correlation(ad.Tensor([0.0, 1.0]), ad.Tensor([3.0, 4.0]))
        np.testing.assert_array_equal(out.data, [4.0, 3.0])

    def test_zero_vector(self):
        out = ad.circular_correlation(ad.Tensor(np.zeros(5)), ad.Tensor(np.arange(5.0)))
        np.testing.assert_array_equal(out.data, np.zeros(5))

    @given(st.integers(min_value=1, max_value=16), st.integers(min_value=0, max_value=2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_matches_brute_force(self, d, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=d), rng.normal(size=d)
        got = ad.circular_correlation(ad.Tensor(a), ad.Tensor(b)).data
        np.testing.assert_array_equal(got, brute_force_circcorr(a, b))

    def test_length_mismatch_rejected(self):
        with pytest.raises(ad.ShapeError):
            ad.circular_correlation(ad.Tensor([1.0, 2.0]), ad.Tensor([1.0, 2.0, 3.0]))


class TestConv2d:
    def test_known_value(self):
        x = ad.Tensor(np.arange(16.0).reshape(1, 1, 4, 4))
        w = ad.Tensor(np.ones((1, 1, 2, 2)))
        out = ad.conv2d(x, w)
        assert out.data.shape == (1, 1, 3, 3)
        assert out.data[0, 0, 0, 0] == pytest.approx(0 + 1 + 4 + 5)

    def test_kernel_too_large(self):
        with pytest.raises(ad.ShapeError):
            ad.conv2d(ad.Tensor(np.zeros((1, 1, 2, 2))), ad.Tensor(np.zeros((1, 1, 3, 3))))
