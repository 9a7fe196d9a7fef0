"""Layer-kernel contracts checked against independent naive references.

Every reference here is deliberately dumb: nested Python loops over the
mathematical definition, or central finite differences of the scalar
loss.  The production kernels must agree with them element-wise.
"""

import numpy as np
import numpy.testing as npt
import pytest

from wdpipe.errors import ShapeError, TrainingError
from wdpipe.nn import ops


def naive_conv2d(x, kernels, bias, stride, padding):
    """Quadruple-loop cross-correlation over a single (C, H, W) sample."""
    c_in, h, w = x.shape
    c_out, _, k, _ = kernels.shape
    xp = np.zeros((c_in, h + 2 * padding, w + 2 * padding))
    xp[:, padding : padding + h, padding : padding + w] = x
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (w + 2 * padding - k) // stride + 1
    out = np.zeros((c_out, h_out, w_out))
    for co in range(c_out):
        for i in range(h_out):
            for j in range(w_out):
                acc = 0.0
                for ci in range(c_in):
                    for a in range(k):
                        for b in range(k):
                            acc += xp[ci, i * stride + a, j * stride + b] * kernels[co, ci, a, b]
                out[co, i, j] = acc + bias[co]
    return out


def naive_maxpool(x, window, stride):
    """Nested-loop max pooling with first-maximum (row-major) tie-break."""
    c, h, w = x.shape
    h_out = (h - window) // stride + 1
    w_out = (w - window) // stride + 1
    out = np.zeros((c, h_out, w_out))
    argmax = np.zeros((c, h_out, w_out), dtype=np.int64)
    for ci in range(c):
        for i in range(h_out):
            for j in range(w_out):
                best, best_pos = -np.inf, None
                for a in range(window):
                    for b in range(window):
                        value = x[ci, i * stride + a, j * stride + b]
                        if value > best:
                            best = value
                            best_pos = (i * stride + a, j * stride + b)
                out[ci, i, j] = best
                argmax[ci, i, j] = (ci * h + best_pos[0]) * w + best_pos[1]
    return out, argmax


class TestConvForward:
    def test_scalar_kernel_scales(self):
        x = np.ones((1, 3, 3))
        kernels = np.full((1, 1, 1, 1), 2.0)
        out = ops.conv2d_forward(x, kernels, np.zeros(1), stride=1, padding=0)
        npt.assert_array_equal(out, np.full((1, 3, 3), 2.0))

    def test_trace_picking_kernel(self):
        x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
        kernels = np.array([[[[1.0, 0.0], [0.0, 1.0]]]])
        out = ops.conv2d_forward(x, kernels, np.zeros(1), stride=1, padding=0)
        npt.assert_array_equal(out, np.array([[[5.0]]]))

    def test_matches_naive_reference(self):
        rng = np.random.default_rng(42)
        x = rng.uniform(-1, 1, (2, 5, 5))
        kernels = rng.uniform(-1, 1, (3, 2, 3, 3))
        bias = rng.uniform(-1, 1, 3)
        out = ops.conv2d_forward(x, kernels, bias, stride=2, padding=1)
        assert out.shape == (3, 3, 3)
        npt.assert_allclose(out, naive_conv2d(x, kernels, bias, 2, 1), atol=1e-12)

    def test_matches_naive_reference_many_geometries(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            c_in = int(rng.integers(1, 4))
            c_out = int(rng.integers(1, 4))
            h = int(rng.integers(3, 9))
            w = int(rng.integers(3, 9))
            k = int(rng.integers(1, 4))
            stride = int(rng.integers(1, 3))
            padding = int(rng.integers(0, 3))
            if k > h + 2 * padding or k > w + 2 * padding:
                continue
            x = rng.normal(size=(c_in, h, w))
            kernels = rng.normal(size=(c_out, c_in, k, k))
            bias = rng.normal(size=c_out)
            out = ops.conv2d_forward(x, kernels, bias, stride, padding)
            npt.assert_allclose(out, naive_conv2d(x, kernels, bias, stride, padding), atol=1e-12)

    def test_shape_law(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            n = int(rng.integers(2, 12))
            k = int(rng.integers(1, 5))
            s = int(rng.integers(1, 4))
            p = int(rng.integers(0, 3))
            if k > n + 2 * p:
                continue
            x = rng.normal(size=(1, n, n))
            out = ops.conv2d_forward(x, rng.normal(size=(1, 1, k, k)), np.zeros(1), s, p)
            expected = (n + 2 * p - k) // s + 1
            assert out.shape == (1, expected, expected)

    def test_channel_mismatch_raises(self):
        with pytest.raises(ShapeError):
            ops.conv2d_forward(np.zeros((2, 4, 4)), np.zeros((1, 3, 3, 3)), np.zeros(1))

    def test_oversized_kernel_raises(self):
        with pytest.raises(ShapeError):
            ops.conv2d_forward(np.zeros((1, 3, 3)), np.zeros((1, 1, 5, 5)), np.zeros(1))


class TestConvBackward:
    def test_zero_grad_out(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(2, 4, 4))
        kernels = rng.normal(size=(3, 2, 3, 3))
        out = ops.conv2d_forward(x, kernels, np.zeros(3), 1, 0)
        gi, gk, gb = ops.conv2d_backward(np.zeros_like(out), x, kernels, 1, 0)
        assert not gi.any() and not gk.any() and not gb.any()

    def test_scalar_kernel_gradient(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(1, 4, 4))
        kernels = rng.normal(size=(1, 1, 1, 1))
        grad_out = rng.normal(size=(1, 4, 4))
        _, gk, _ = ops.conv2d_backward(grad_out, x, kernels, 1, 0)
        npt.assert_allclose(gk[0, 0, 0, 0], np.sum(grad_out * x), rtol=1e-12)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(2, 5, 5))
        kernels = rng.normal(size=(2, 2, 3, 3))
        bias = rng.normal(size=2)
        stride, padding = 2, 1
        # Scalar objective: sum(forward * weights) has gradient weights
        # on the output side, so backward can be checked per component.
        weights = rng.normal(size=ops.conv2d_forward(x, kernels, bias, stride, padding).shape)

        def objective(xx, kk, bb):
            return np.sum(ops.conv2d_forward(xx, kk, bb, stride, padding) * weights)

        gi, gk, gb = ops.conv2d_backward(weights, x, kernels, stride, padding)
        eps = 1e-5
        for arr, grad in ((x, gi), (kernels, gk), (bias, gb)):
            flat = arr.ravel()
            for idx in range(flat.size):
                original = flat[idx]
                flat[idx] = original + eps
                plus = objective(x, kernels, bias)
                flat[idx] = original - eps
                minus = objective(x, kernels, bias)
                flat[idx] = original
                numeric = (plus - minus) / (2 * eps)
                analytic = grad.ravel()[idx]
                denom = max(abs(numeric), abs(analytic), 1e-6)
                assert abs(numeric - analytic) / denom <= 1e-6

    def test_grad_shape_mismatch_raises(self):
        x = np.zeros((1, 4, 4))
        kernels = np.zeros((1, 1, 3, 3))
        with pytest.raises(ShapeError):
            ops.conv2d_backward(np.zeros((1, 3, 3)), x, kernels, 1, 1)


class TestMaxPool:
    def test_constant_input_ties_to_first(self):
        x = np.ones((1, 4, 4))
        out, argmax = ops.maxpool_forward(x, 2, 2)
        npt.assert_array_equal(out, np.ones((1, 2, 2)))
        # Tie-break: the first (row-major) cell of each window wins.
        npt.assert_array_equal(argmax, np.array([[[0, 2], [8, 10]]]))
        grad = ops.maxpool_backward(np.ones((1, 2, 2)), argmax, (1, 4, 4))
        expected = np.zeros((1, 4, 4))
        expected[0, 0, 0] = expected[0, 0, 2] = expected[0, 2, 0] = expected[0, 2, 2] = 1.0
        npt.assert_array_equal(grad, expected)

    def test_unique_max(self):
        x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
        out, argmax = ops.maxpool_forward(x, 2, 2)
        npt.assert_array_equal(out, np.array([[[4.0]]]))
        grad = ops.maxpool_backward(np.array([[[1.0]]]), argmax, (1, 2, 2))
        npt.assert_array_equal(grad, np.array([[[0.0, 0.0], [0.0, 1.0]]]))

    def test_matches_naive_reference(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(2, 6, 6))
        out, argmax = ops.maxpool_forward(x, 2, 2)
        ref_out, ref_argmax = naive_maxpool(x, 2, 2)
        npt.assert_array_equal(out, ref_out)
        npt.assert_array_equal(argmax, ref_argmax)

    def test_overlapping_windows_sum_gradients(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(1, 5, 5))
        out, argmax = ops.maxpool_forward(x, 3, 1)
        ref_out, ref_argmax = naive_maxpool(x, 3, 1)
        npt.assert_array_equal(out, ref_out)
        grad_out = rng.normal(size=out.shape)
        grad = ops.maxpool_backward(grad_out, argmax, (1, 5, 5))
        expected = np.zeros((1, 5, 5))
        for ci in range(ref_argmax.shape[0]):
            for i in range(ref_argmax.shape[1]):
                for j in range(ref_argmax.shape[2]):
                    expected.ravel()[ref_argmax[ci, i, j]] += grad_out[ci, i, j]
        npt.assert_allclose(grad, expected, atol=1e-15)

    def test_window_too_large_raises(self):
        with pytest.raises(ShapeError):
            ops.maxpool_forward(np.zeros((1, 3, 3)), 4, 1)


class TestDense:
    def test_identity_map(self):
        x = np.array([1.0, -2.0, 3.0])
        out = ops.dense_forward(x, np.eye(3), np.zeros(3))
        npt.assert_array_equal(out, x)

    def test_two_row_hand_sum(self):
        out = ops.dense_forward(
            np.array([1.0, 1.0]), np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([0.0, 1.0])
        )
        npt.assert_array_equal(out, np.array([3.0, 8.0]))

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=4)
        weights = rng.normal(size=(3, 4))
        bias = rng.normal(size=3)
        probe = rng.normal(size=3)

        def objective(xx, ww, bb):
            return np.sum(ops.dense_forward(xx, ww, bb) * probe)

        gi, gw, gb = ops.dense_backward(probe, x, weights)
        eps = 1e-5
        for arr, grad in ((x, gi), (weights, gw), (bias, gb)):
            flat = arr.ravel()
            for idx in range(flat.size):
                original = flat[idx]
                flat[idx] = original + eps
                plus = objective(x, weights, bias)
                flat[idx] = original - eps
                minus = objective(x, weights, bias)
                flat[idx] = original
                numeric = (plus - minus) / (2 * eps)
                analytic = grad.ravel()[idx]
                assert abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-6) <= 1e-6

    def test_dimension_mismatch_raises(self):
        with pytest.raises(ShapeError):
            ops.dense_forward(np.zeros(3), np.zeros((2, 4)), np.zeros(2))


class TestReLU:
    def test_elementwise(self):
        npt.assert_array_equal(ops.relu(np.array([-1.0, 0.0, 2.0])), np.array([0.0, 0.0, 2.0]))

    def test_backward_zero_input_gets_zero_grad(self):
        grad = ops.relu_backward(np.array([1.0, 1.0, 1.0]), np.array([-1.0, 0.0, 2.0]))
        npt.assert_array_equal(grad, np.array([0.0, 0.0, 1.0]))

    def test_all_negative(self):
        x = -np.abs(np.random.default_rng(1).normal(size=8)) - 0.1
        assert not ops.relu(x).any()
        assert not ops.relu_backward(np.ones(8), x).any()


class TestSoftmax:
    def test_symmetry(self):
        npt.assert_allclose(ops.softmax(np.zeros(3)), np.full(3, 1 / 3), atol=1e-15)

    def test_closed_form(self):
        npt.assert_allclose(
            ops.softmax(np.array([0.0, np.log(2.0)])), np.array([1 / 3, 2 / 3]), atol=1e-15
        )

    def test_overflow_safety(self):
        out = ops.softmax(np.array([1000.0, 1000.0]))
        npt.assert_allclose(out, np.array([0.5, 0.5]), atol=1e-15)
        assert np.all(np.isfinite(out))

    def test_sums_to_one_and_shift_invariant(self):
        rng = np.random.default_rng(12)
        for _ in range(50):
            z = rng.normal(scale=10, size=int(rng.integers(2, 8)))
            p = ops.softmax(z)
            assert abs(p.sum() - 1.0) <= 1e-12
            assert np.all(p > 0)
            shifted = ops.softmax(z + rng.normal(scale=100))
            npt.assert_allclose(p, shifted, atol=1e-12)
            assert np.argmax(p) == np.argmax(shifted)


class TestCrossEntropy:
    def test_one_hot_probs_give_near_zero_loss(self):
        probs = np.array([0.0, 1.0, 0.0])
        assert abs(ops.cross_entropy_loss(probs, 1)) <= 1e-11

    def test_uniform_probs(self):
        # The 1e-12 probability clip perturbs the exact value by ~3e-12.
        npt.assert_allclose(ops.cross_entropy_loss(np.full(3, 1 / 3), 0), np.log(3), atol=1e-11)

    def test_logit_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(13)
        logits = rng.normal(size=5)
        label = 2

        def loss_of(z):
            return ops.cross_entropy_loss(ops.softmax(z), label)

        analytic = ops.softmax_cross_entropy_logit_grad(ops.softmax(logits), label)
        eps = 1e-6
        for idx in range(5):
            z = logits.copy()
            z[idx] += eps
            plus = loss_of(z)
            z[idx] -= 2 * eps
            minus = loss_of(z)
            numeric = (plus - minus) / (2 * eps)
            assert abs(numeric - analytic[idx]) / max(abs(numeric), abs(analytic[idx]), 1e-6) <= 1e-6


class TestSgdStep:
    def test_hand_value(self):
        out = ops.sgd_step(np.array([1.0]), np.array([0.5]), 0.1)
        npt.assert_allclose(out, np.array([0.95]), rtol=1e-15)

    def test_zero_gradient_is_identity(self):
        w = np.array([1.0, -2.0])
        npt.assert_array_equal(ops.sgd_step(w, np.zeros(2), 0.3), w)

    def test_zero_learning_rate_is_identity(self):
        rng = np.random.default_rng(14)
        w = rng.normal(size=(3, 3))
        npt.assert_array_equal(ops.sgd_step(w, rng.normal(size=(3, 3)), 0.0), w)

    def test_mean_gradient_rule(self):
        per_example = np.array([0.2, 0.6])
        out = ops.sgd_step(np.array([1.0]), np.array([per_example.mean()]), 1.0)
        npt.assert_allclose(out, np.array([0.6]), rtol=1e-15)

    def test_non_finite_gradient_raises(self):
        with pytest.raises(TrainingError):
            ops.sgd_step(np.array([1.0]), np.array([np.nan]), 0.1)
