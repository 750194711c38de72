"""Tensor-engine ops against independent oracles and finite differences."""

import numpy as np
import pytest

from cineavd.errors import NnError
from cineavd.nn import Tensor, functional as F, no_grad
from cineavd.nn.functional import BnState
from cineavd.nn.gradcheck import finite_difference_check, make_param

from conftest import naive_conv3d, naive_avg_pool3d


class TestConv3d:
    def test_identity_1x1(self):
        x = Tensor(np.random.default_rng(0).standard_normal((1, 1, 4, 4, 4)).astype(np.float32))
        w = Tensor(np.ones((1, 1, 1, 1, 1), dtype=np.float32))
        b = Tensor(np.zeros(1, dtype=np.float32))
        y = F.conv3d(x, w, bias=b)
        np.testing.assert_array_equal(y.data, x.data)

    def test_all_ones_kernel_counts_interior(self):
        x = Tensor(np.ones((1, 1, 5, 5, 5), dtype=np.float32))
        w = Tensor(np.ones((1, 1, 3, 3, 3), dtype=np.float32))
        y = F.conv3d(x, w, padding=1)
        assert y.data[0, 0, 2, 2, 2] == 27.0

    def test_matches_naive_oracle(self, rng):
        x = rng.standard_normal((1, 2, 5, 5, 5)).astype(np.float32)
        w = rng.standard_normal((3, 2, 3, 3, 3)).astype(np.float32)
        y = F.conv3d(Tensor(x), Tensor(w), padding=1)
        ref = naive_conv3d(x, w, padding=1)
        np.testing.assert_allclose(y.data, ref, atol=1e-5)

    @pytest.mark.parametrize("case", range(20))
    def test_random_instances_vs_naive(self, case):
        rng = np.random.default_rng(5000 + case)
        k = int(rng.choice([1, 3]))
        stride = int(rng.choice([1, 2]))
        pad = int(rng.integers(0, 2))
        n, ci, co = (int(v) for v in rng.integers(1, 3, 3))
        h, w, d = (int(v) for v in rng.integers(k + 1, 7, 3))
        x = rng.standard_normal((n, ci, h, w, d)).astype(np.float32)
        wt = rng.standard_normal((co, ci, k, k, k)).astype(np.float32)
        b = rng.standard_normal(co).astype(np.float32)
        y = F.conv3d(Tensor(x), Tensor(wt), Tensor(b), stride=stride, padding=pad)
        ref = naive_conv3d(x, wt, b, stride=stride, padding=pad)
        np.testing.assert_allclose(y.data, ref, atol=1e-5)

    def test_channel_mismatch_raises(self):
        with pytest.raises(NnError):
            F.conv3d(Tensor(np.zeros((1, 2, 4, 4, 4))), Tensor(np.zeros((1, 3, 3, 3, 3))))

    @pytest.mark.parametrize("stride,pad,k", [(1, 1, 3), (1, 0, 3), (2, 1, 3), (1, 0, 1)])
    def test_gradients(self, stride, pad, k):
        rng = np.random.default_rng(99)
        x = make_param(rng, (2, 2, 5, 5, 5))
        w = make_param(rng, (3, 2, k, k, k), scale=0.5)
        b = make_param(rng, (3,))

        def loss():
            return F.mean_all(F.pow_const(F.conv3d(x, w, b, stride=stride, padding=pad), 2))

        worst, n = finite_difference_check(loss, [x, w, b], rng, samples_per_tensor=4)
        assert n >= 10 and worst <= 1e-4


class TestBatchNorm:
    def test_train_mode_standardizes(self, rng):
        x = Tensor(rng.standard_normal((4, 3, 4, 4, 4)).astype(np.float32) * 5 + 2)
        g = Tensor(np.ones(3, dtype=np.float32))
        b = Tensor(np.zeros(3, dtype=np.float32))
        y = F.batch_norm3d(x, g, b, BnState(3), training=True)
        mean = y.data.mean(axis=(0, 2, 3, 4))
        std = y.data.std(axis=(0, 2, 3, 4))
        np.testing.assert_allclose(mean, 0, atol=1e-4)
        np.testing.assert_allclose(std, 1, atol=1e-4)

    def test_affine_params_shift_scale(self, rng):
        x = Tensor(rng.standard_normal((4, 2, 4, 4, 4)).astype(np.float32))
        g = Tensor(np.full(2, 2.0, dtype=np.float32))
        b = Tensor(np.full(2, 3.0, dtype=np.float32))
        y = F.batch_norm3d(x, g, b, BnState(2), training=True)
        np.testing.assert_allclose(y.data.mean(axis=(0, 2, 3, 4)), 3, atol=1e-4)
        np.testing.assert_allclose(y.data.std(axis=(0, 2, 3, 4)), 2, atol=1e-4)

    def test_eval_before_stats_raises(self, rng):
        x = Tensor(rng.standard_normal((1, 2, 3, 3, 3)))
        g = Tensor(np.ones(2))
        b = Tensor(np.zeros(2))
        with pytest.raises(NnError):
            F.batch_norm3d(x, g, b, BnState(2), training=False)

    def test_running_stats_feed_eval_mode(self, rng):
        state = BnState(2)
        g = Tensor(np.ones(2, dtype=np.float32))
        b = Tensor(np.zeros(2, dtype=np.float32))
        for _ in range(200):
            x = Tensor(rng.standard_normal((8, 2, 3, 3, 3)).astype(np.float32) * 2 + 1)
            F.batch_norm3d(x, g, b, state, training=True)
        np.testing.assert_allclose(state.running_mean, 1, atol=0.15)
        np.testing.assert_allclose(state.running_var, 4, atol=0.5)
        y = F.batch_norm3d(Tensor(np.ones((1, 2, 3, 3, 3), dtype=np.float32)), g, b,
                           state, training=False)
        expected = (1 - state.running_mean) / np.sqrt(state.running_var + 1e-5)
        for c in range(2):
            np.testing.assert_allclose(y.data[0, c], expected[c], atol=1e-5)

    def test_gradients_train_mode(self):
        rng = np.random.default_rng(7)
        x = make_param(rng, (3, 2, 3, 3, 3))
        g = Tensor(np.abs(rng.standard_normal(2)) + 0.5, requires_grad=True)
        b = make_param(rng, (2,))

        def loss():
            y = F.batch_norm3d(x, g, b, BnState(2, dtype=np.float64), training=True)
            return F.mean_all(F.pow_const(y, 2))

        worst, _ = finite_difference_check(loss, [x, g, b], rng,
                                           samples_per_tensor=5, tol=1e-3)
        assert worst <= 1e-3

    def test_gradients_eval_mode(self):
        rng = np.random.default_rng(8)
        state = BnState(2, dtype=np.float64)
        g = Tensor(np.abs(rng.standard_normal(2)) + 0.5, requires_grad=True)
        b = make_param(rng, (2,))
        F.batch_norm3d(make_param(rng, (4, 2, 3, 3, 3)), g, b, state, training=True)
        x = make_param(rng, (2, 2, 3, 3, 3))

        def loss():
            y = F.batch_norm3d(x, g, b, state, training=False)
            return F.mean_all(F.pow_const(y, 2))

        worst, _ = finite_difference_check(loss, [x, g, b], rng, samples_per_tensor=5)
        assert worst <= 1e-4


class TestPooling:
    def test_constant_preserved(self):
        y = F.avg_pool3d(Tensor(np.full((1, 1, 4, 4, 4), 3.5, dtype=np.float32)))
        np.testing.assert_array_equal(y.data, np.full((1, 1, 2, 2, 2), 3.5, dtype=np.float32))

    def test_2x2x2_mean(self):
        x = np.arange(1, 9, dtype=np.float32).reshape(1, 1, 2, 2, 2)
        y = F.avg_pool3d(Tensor(x))
        assert y.data.reshape(()) == pytest.approx(4.5)

    @pytest.mark.parametrize("case", range(10))
    def test_random_vs_naive(self, case):
        rng = np.random.default_rng(6000 + case)
        shape = (int(rng.integers(1, 3)), int(rng.integers(1, 3)),
                 int(rng.integers(2, 8)), int(rng.integers(2, 8)), int(rng.integers(2, 8)))
        x = rng.standard_normal(shape).astype(np.float32)
        y = F.avg_pool3d(Tensor(x))
        np.testing.assert_allclose(y.data, naive_avg_pool3d(x), atol=1e-5)

    def test_gradients_with_truncation(self):
        rng = np.random.default_rng(11)
        x = make_param(rng, (1, 2, 5, 4, 3))

        def loss():
            return F.mean_all(F.pow_const(F.avg_pool3d(x), 2))

        worst, _ = finite_difference_check(loss, [x], rng, samples_per_tensor=8)
        assert worst <= 1e-4

    def test_global_pool_constant(self):
        y = F.global_avg_pool(Tensor(np.full((2, 3, 4, 4, 2), 7.0, dtype=np.float32)))
        np.testing.assert_array_equal(y.data, np.full((2, 3), 7.0, dtype=np.float32))

    def test_global_pool_single_voxel_identity(self, rng):
        x = rng.standard_normal((2, 3, 1, 1, 1)).astype(np.float32)
        y = F.global_avg_pool(Tensor(x))
        np.testing.assert_array_equal(y.data, x.reshape(2, 3))

    def test_global_pool_matches_two_pass_mean(self, rng):
        x = rng.standard_normal((2, 3, 5, 4, 6))
        y = F.global_avg_pool(Tensor(x))
        ref = np.array([[np.mean(x[n, c].astype(np.float64)) for c in range(3)]
                        for n in range(2)])
        np.testing.assert_allclose(y.data, ref, atol=1e-6)


class TestSoftmax:
    def test_uniform_for_equal_logits(self):
        p = F.softmax(Tensor(np.full((2, 4), 3.0, dtype=np.float32)))
        np.testing.assert_allclose(p.data, 0.25, atol=1e-7)

    def test_extreme_logits_stable(self):
        p = F.softmax(Tensor(np.array([[1000.0, 0.0]], dtype=np.float32)))
        np.testing.assert_allclose(p.data, [[1.0, 0.0]], atol=1e-7)

    def test_rows_sum_to_one_at_large_magnitude(self, rng):
        logits = rng.uniform(-1e4, 1e4, size=(50, 5)).astype(np.float32)
        p = F.softmax(Tensor(logits))
        np.testing.assert_allclose(p.data.sum(axis=1), 1.0, atol=1e-6)

    def test_matches_direct_computation(self, rng):
        logits = rng.standard_normal((8, 3))
        p = F.softmax(Tensor(logits))
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        np.testing.assert_allclose(p.data, e / e.sum(axis=1, keepdims=True), atol=1e-6)

    def test_gradients(self):
        rng = np.random.default_rng(13)
        x = make_param(rng, (3, 4))

        def loss():
            return F.mean_all(F.pow_const(F.softmax(x), 3))

        worst, _ = finite_difference_check(loss, [x], rng, samples_per_tensor=6)
        assert worst <= 1e-4


class TestReluAndPlumbing:
    def test_relu_subgradient_zero_at_zero_and_negative(self):
        x = Tensor(np.array([-2.0, 0.0, 3.0]), requires_grad=True)
        y = F.sum_all(F.relu(x))
        y.backward()
        np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])

    def test_sum_gradient_is_ones(self, rng):
        x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        F.sum_all(x).backward()
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_unused_parameter_gets_no_gradient(self, rng):
        x = Tensor(rng.standard_normal(4), requires_grad=True)
        unused = Tensor(rng.standard_normal(4), requires_grad=True)
        F.sum_all(x).backward()
        assert unused.grad is None

    def test_concat_splits_gradient(self, rng):
        a = Tensor(rng.standard_normal((1, 2, 2, 2, 2)), requires_grad=True)
        b = Tensor(rng.standard_normal((1, 3, 2, 2, 2)), requires_grad=True)
        y = F.concat_channels([a, b])
        seed = np.arange(y.size, dtype=np.float64).reshape(y.shape)
        F.mul_array(y, seed)
        F.sum_all(F.mul_array(y, seed)).backward()
        np.testing.assert_array_equal(a.grad, seed[:, :2])
        np.testing.assert_array_equal(b.grad, seed[:, 2:])

    def test_linear_and_gather_gradients(self):
        rng = np.random.default_rng(17)
        x = make_param(rng, (4, 6))
        w = make_param(rng, (3, 6))
        b = make_param(rng, (3,))
        targets = rng.integers(0, 3, 4)

        def loss():
            logits = F.linear(x, w, b)
            p = F.clip(F.softmax(logits), 1e-7, 1 - 1e-7)
            return F.scale(F.mean_all(F.log(F.gather_rows(p, targets))), -1.0)

        worst, _ = finite_difference_check(loss, [x, w, b], rng, samples_per_tensor=5)
        assert worst <= 1e-4

    def test_nan_rejected_at_op_boundary(self):
        x = np.ones(3, dtype=np.float32)
        x[0] = np.nan
        with pytest.raises(NnError):
            Tensor(x, requires_grad=True)

    def test_no_grad_skips_tape(self, rng):
        x = Tensor(rng.standard_normal((1, 1, 3, 3, 3)), requires_grad=True)
        w = Tensor(rng.standard_normal((1, 1, 1, 1, 1)), requires_grad=True)
        with no_grad():
            y = F.conv3d(x, w)
        assert not y.requires_grad and y.backward_fn is None

    def test_backward_accumulates_into_shared_parent(self, rng):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = F.mul(x, x)  # d/dx x^2 = 2x
        F.sum_all(y).backward()
        np.testing.assert_allclose(x.grad, [4.0])
