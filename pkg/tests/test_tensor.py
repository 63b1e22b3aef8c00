import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from modfusion import tensor as T
from modfusion.tensor import Tensor

finite = st.floats(-5.0, 5.0, allow_nan=False, allow_infinity=False)


def _loop_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


class TestMatmul:
    def test_identity(self):
        b = np.array([[5.0, 6.0], [7.0, 8.0]])
        np.testing.assert_array_equal(T.matmul(Tensor(np.eye(2)), Tensor(b)).data, b)

    def test_hand_case(self):
        out = T.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0, 6.0], [7.0, 8.0]]))
        np.testing.assert_array_equal(out.data, [[19.0, 22.0], [43.0, 50.0]])

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        np.testing.assert_allclose(T.matmul(Tensor(a), Tensor(b)).data, _loop_matmul(a, b), atol=1e-12)

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(T.ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_associativity(self):
        rng = np.random.default_rng(1)
        a, b, c = (Tensor(rng.normal(size=s)) for s in ((3, 4), (4, 5), (5, 2)))
        left = T.matmul(T.matmul(a, b), c).data
        right = T.matmul(a, T.matmul(b, c)).data
        assert np.linalg.norm(left - right) / np.linalg.norm(left) < 1e-6


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-15)

    def test_analytic(self):
        np.testing.assert_allclose(T.softmax(Tensor([0.0, math.log(3.0)])).data, [0.25, 0.75], atol=1e-15)

    def test_masked(self):
        out = T.softmax(Tensor([5.0, 2.0, 9.0]), mask=np.array([True, False, True])).data
        e = math.exp(-4.0)
        np.testing.assert_allclose(out, [e / (1 + e), 0.0, 1 / (1 + e)], atol=1e-15)
        assert out[1] == 0.0

    def test_fully_masked_row_raises(self):
        with pytest.raises(T.MaskError):
            T.softmax(Tensor([[1.0, 2.0], [3.0, 4.0]]), mask=np.array([[True, False], [False, False]]))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (3, 6), elements=finite), finite)
    def test_rows_sum_to_one_and_shift_invariant(self, x, c):
        y = T.softmax(Tensor(x)).data
        np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-6)
        np.testing.assert_allclose(T.softmax(Tensor(x + c)).data, y, atol=1e-6)


class TestLayerNorm:
    def test_standardizes_row(self):
        out = T.layer_norm(Tensor([[2.0, 4.0, 6.0]]), np.ones(3), np.zeros(3)).data
        assert abs(out.mean()) < 1e-12
        assert abs(out.var() - 1.0) < 1e-4

    def test_zero_gamma_gives_beta(self):
        beta = np.array([0.5, -1.0, 2.0])
        out = T.layer_norm(Tensor(np.random.default_rng(0).normal(size=(4, 3))), np.zeros(3), beta).data
        np.testing.assert_array_equal(out, np.broadcast_to(beta, (4, 3)))

    def test_moments_random(self):
        x = np.random.default_rng(2).normal(size=(4, 8))
        out = T.layer_norm(Tensor(x), np.ones(8), np.zeros(8)).data
        # independent recomputation of the moments
        for row in out:
            mu = sum(row) / len(row)
            var = sum((v - mu) ** 2 for v in row) / len(row)
            assert abs(mu) < 1e-6
            assert abs(var - 1.0) < 1e-3

    def test_channel_mismatch(self):
        with pytest.raises(T.ShapeError):
            T.layer_norm(Tensor(np.ones((2, 4))), np.ones(3), np.zeros(3))

    def test_temporal_axis_uses_time_statistics(self):
        x = np.random.default_rng(3).normal(size=(5, 3))
        out = T.layer_norm(Tensor(x), np.ones(3), np.zeros(3), axis="temporal").data
        np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-12)

    def test_temporal_mask_ignores_padding(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(1, 5, 3))
        padded = x.copy()
        padded[0, 3:] = 100.0
        mask = np.array([[True, True, True, False, False]])
        a = T.layer_norm(Tensor(x[:, :3]), np.ones(3), np.zeros(3), axis="temporal").data
        b = T.layer_norm(Tensor(padded), np.ones(3), np.zeros(3), axis="temporal", mask=mask).data
        np.testing.assert_allclose(b[:, :3], a, atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, (3, 5), elements=finite), st.floats(0.1, 10.0), finite)
    def test_scale_shift_invariance(self, x, a, b):
        x = x + np.linspace(0, 1, 5)  # keep rows from being constant
        g, z = np.ones(5), np.zeros(5)
        base = T.layer_norm(Tensor(x), g, z, eps=1e-12).data
        moved = T.layer_norm(Tensor(a * x + b), g, z, eps=1e-12).data
        np.testing.assert_allclose(moved, base, atol=1e-5)


class TestDropout:
    def test_p_zero_identity(self):
        x = Tensor(np.arange(6.0))
        assert T.dropout(x, 0.0, True, np.random.default_rng(0)) is x

    def test_inference_identity(self):
        x = Tensor(np.arange(6.0))
        assert T.dropout(x, 0.5, False) is x

    def test_mean_preserved(self):
        out = T.dropout(Tensor(np.ones(100_000)), 0.5, True, np.random.default_rng(0)).data
        assert abs(out.mean() - 1.0) < 0.02

    @pytest.mark.parametrize("p", [-0.1, 1.0, 1.5])
    def test_range(self, p):
        with pytest.raises(ValueError):
            T.dropout(Tensor(np.ones(3)), p, True, np.random.default_rng(0))


class TestBackward:
    def test_sum(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        T.backward(T.tsum(x))
        np.testing.assert_array_equal(x.grad, [1.0, 1.0, 1.0])

    def test_square(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        T.backward(T.tsum(T.mul(x, x)))
        np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])

    def test_accumulates_across_uses(self):
        x = Tensor([1.0, -2.0], requires_grad=True)
        T.backward(T.tsum(x * 3.0 + x))
        np.testing.assert_array_equal(x.grad, [4.0, 4.0])

    def test_non_scalar_loss(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(T.ShapeError):
            T.backward(x * 2.0)

    def test_broadcast_gradient_shape(self):
        x = Tensor(np.ones((2, 3)), requires_grad=True)
        b = Tensor(np.ones(3), requires_grad=True)
        T.backward(T.tsum(T.add(x, b)))
        np.testing.assert_array_equal(b.grad, [2.0, 2.0, 2.0])

    def test_no_grad_records_nothing(self):
        x = Tensor([1.0], requires_grad=True)
        with T.no_grad():
            y = x * 2.0
        assert not y.requires_grad and y.is_leaf

    def test_take_rows_padding_gets_no_gradient(self):
        table = Tensor(np.ones((4, 2)), requires_grad=True)
        T.backward(T.tsum(T.take_rows(table, np.array([[0, 2, 2]]), padding_idx=0)))
        np.testing.assert_array_equal(table.grad, [[0, 0], [0, 0], [2, 2], [0, 0]])

    def test_take_rows_out_of_range(self):
        with pytest.raises(IndexError):
            T.take_rows(Tensor(np.ones((4, 2))), np.array([4]))

    def test_non_finite_forward(self):
        with np.errstate(over="ignore"), pytest.raises(T.NonFiniteError):
            T.mul(Tensor([1e308], requires_grad=True), 1e10)


class TestFiniteDifference:
    def test_sum_is_all_ones(self):
        x = Tensor(np.random.default_rng(0).normal(size=(2, 3)))
        g = T.finite_difference_grad(lambda: float(x.data.sum()), x)
        np.testing.assert_allclose(g, 1.0, atol=1e-9)

    def test_square_at_three(self):
        x = Tensor([3.0])
        g = T.finite_difference_grad(lambda: float(x.data[0] ** 2), x, eps=1e-3)
        assert abs(g[0] - 6.0) < 1e-6

    def test_cross_entropy_matches_autodiff(self):
        logits = Tensor(np.random.default_rng(1).normal(size=(1, 5)), requires_grad=True)
        T.backward(T.cross_entropy(logits, [3]))
        numeric = T.finite_difference_grad(lambda: float(T.cross_entropy(logits, [3]).data), logits)
        np.testing.assert_allclose(logits.grad, numeric, atol=1e-5)

    def test_restores_input(self):
        x = Tensor([0.5, 1.5])
        before = x.data.copy()
        T.finite_difference_grad(lambda: float((x.data ** 3).sum()), x)
        np.testing.assert_array_equal(x.data, before)


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-1.0, 1.0)))
def test_random_op_gradients(x0):
    # product of smooth ops on random inputs in [-1, 1]
    x = Tensor(x0, requires_grad=True)
    w = np.linspace(-1.0, 1.0, 12).reshape(3, 4)

    def loss():
        return T.tsum(T.mul(T.softmax(T.tanh(x) * 2.0), w)) + T.tsum(T.sigmoid(x))

    T.backward(loss())
    numeric = T.finite_difference_grad(lambda: float(loss().data), x, eps=1e-4)
    assert T.relative_error(x.grad, numeric) < 1e-4
