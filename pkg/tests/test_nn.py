"""Tests for tensors, differentiable ops, gradient checking and Adam."""

import math

import numpy as np
import pytest

from detext.data.tokenizer import PAD_ID
from detext.errors import BackwardError, ShapeMismatchError, TokenRangeError
from detext.nn import ops
from detext.nn.gradcheck import finite_diff_check, relative_error
from detext.nn.optim import BETA1, BETA2, EPSILON, AdamState, adam_step
from detext.nn.tensor import ParameterTensor, Tensor, backward, no_grad

TOLERANCE = 1e-4


def param(name, shape, rng):
    return ParameterTensor(name, rng.normal(size=shape))


def weighted_sum(x: Tensor, rng_seed: int = 0) -> Tensor:
    """Scalar loss with a fixed random weighting so every output coordinate matters."""
    weights = np.random.default_rng(rng_seed).normal(size=x.shape)
    return ops.sum_all(ops.mul(x, weights))


def assert_gradients_match(loss_fn, params):
    report = finite_diff_check(loss_fn, params, eps=1e-5)
    assert report.max_error < TOLERANCE, report.per_tensor


class TestOpValues:
    """Forward values of the primitives."""

    def test_softmax_sums_to_one(self):
        """Rows of softmax sum to 1 even for large logits."""
        x = Tensor(np.array([[1000.0, 1001.0, 1002.0], [0.0, 0.0, 0.0]]))
        y = ops.softmax(x).data
        np.testing.assert_allclose(y.sum(axis=-1), [1.0, 1.0])
        np.testing.assert_allclose(y[1], [1 / 3] * 3)

    def test_log_softmax_uniform(self):
        """Equal logits give -ln n."""
        y = ops.log_softmax(Tensor(np.zeros(4))).data
        np.testing.assert_allclose(y, [-math.log(4)] * 4)

    def test_gelu_known_points(self):
        """GELU(0) = 0 and GELU(x) -> x for large x."""
        y = ops.gelu(Tensor(np.array([0.0, 10.0, -10.0]))).data
        np.testing.assert_allclose(y, [0.0, 10.0, 0.0], atol=1e-12)

    def test_softplus_stable(self):
        """softplus does not overflow and matches ln 2 at 0."""
        y = ops.softplus(Tensor(np.array([0.0, 1000.0, -1000.0]))).data
        np.testing.assert_allclose(y, [math.log(2), 1000.0, 0.0], atol=1e-12)

    def test_layer_norm_zero_mean_unit_variance(self):
        """Unit gain and zero bias standardize the last axis."""
        x = Tensor(np.array([[1.0, 2.0, 3.0, 4.0]]))
        y = ops.layer_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4))).data
        assert y.mean() == pytest.approx(0.0, abs=1e-12)
        assert y.var() == pytest.approx(1.0, abs=1e-4)

    def test_cosine_zero_vector(self):
        """Cosine with a zero vector is defined as 0."""
        u = Tensor(np.array([[0.0, 0.0], [1.0, 0.0]]))
        v = Tensor(np.array([[1.0, 1.0], [2.0, 0.0]]))
        np.testing.assert_allclose(ops.cosine_similarity(u, v).data, [0.0, 1.0])

    def test_unfold_windows(self):
        """Windows concatenate consecutive rows."""
        x = Tensor(np.arange(6.0).reshape(3, 2))
        y = ops.unfold_windows(x, 2).data
        np.testing.assert_array_equal(y, [[0, 1, 2, 3], [2, 3, 4, 5]])

    def test_unfold_too_short(self):
        """A sequence shorter than the window is a shape error."""
        with pytest.raises(ShapeMismatchError):
            ops.unfold_windows(Tensor(np.zeros((1, 2))), 3)

    def test_dense_shape_mismatch(self):
        """Weight and input widths must agree."""
        W = Tensor(np.zeros((2, 3)))
        with pytest.raises(ShapeMismatchError):
            ops.dense(W, None, Tensor(np.zeros(4)))


class TestLookup:
    """Embedding gather."""

    def test_pad_is_zero(self, rng):
        """PAD positions produce zero vectors."""
        E = param("E", (3, 5), rng)
        y = ops.lookup(E, np.array([PAD_ID, 2])).data
        np.testing.assert_array_equal(y[0], np.zeros(3))
        np.testing.assert_allclose(y[1], E.data[:, 2])

    def test_pad_gets_no_gradient(self, rng):
        """The PAD column never receives gradient."""
        E = param("E", (3, 5), rng)
        backward(ops.sum_all(ops.lookup(E, np.array([PAD_ID, 2, 2]))))
        np.testing.assert_array_equal(E.grad[:, PAD_ID], np.zeros(3))
        np.testing.assert_allclose(E.grad[:, 2], np.full(3, 2.0))

    def test_out_of_range(self, rng):
        """Ids outside the table raise TokenRangeError."""
        E = param("E", (3, 5), rng)
        with pytest.raises(TokenRangeError):
            ops.lookup(E, np.array([5]))
        with pytest.raises(TokenRangeError):
            ops.lookup(E, np.array([-1]))


class TestGradients:
    """Analytic gradients agree with central differences in float64."""

    def test_dense_tanh(self, rng):
        """dense followed by tanh."""
        W, b = param("W", (3, 4), rng), param("b", (3,), rng)
        x = param("x", (2, 4), rng)
        assert_gradients_match(lambda: weighted_sum(ops.tanh(ops.dense(W, b, x))), [W, b, x])

    def test_softmax_and_log_softmax(self, rng):
        """Both normalizers along the last axis."""
        x = param("x", (2, 5), rng)
        assert_gradients_match(lambda: weighted_sum(ops.softmax(x)), [x])
        assert_gradients_match(lambda: weighted_sum(ops.log_softmax(x)), [x])

    def test_layer_norm(self, rng):
        """Input, gain and bias gradients."""
        x, gain, bias = param("x", (3, 4), rng), param("g", (4,), rng), param("b", (4,), rng)
        assert_gradients_match(lambda: weighted_sum(ops.layer_norm(x, gain, bias)), [x, gain, bias])

    def test_gelu_sigmoid_softplus(self, rng):
        """Smooth activations."""
        x = param("x", (6,), rng)
        for act in (ops.gelu, ops.sigmoid, ops.softplus):
            assert_gradients_match(lambda: weighted_sum(act(x)), [x])

    def test_matmul_transpose(self, rng):
        """Batched matmul against a transposed operand."""
        a, b = param("a", (2, 3, 4), rng), param("b", (2, 3, 4), rng)
        assert_gradients_match(lambda: weighted_sum(ops.matmul(a, ops.transpose(b, (0, 2, 1)))), [a, b])

    def test_cosine(self, rng):
        """Row-wise cosine similarity."""
        u, v = param("u", (3, 4), rng), param("v", (3, 4), rng)
        assert_gradients_match(lambda: weighted_sum(ops.cosine_similarity(u, v)), [u, v])

    def test_unfold_and_max(self, rng):
        """Sliding windows then max over positions."""
        x = param("x", (5, 2), rng)
        assert_gradients_match(lambda: weighted_sum(ops.max_axis(ops.unfold_windows(x, 3), 0)), [x])

    def test_take_select_concat(self, rng):
        """Gather with repeats, select and concatenate."""
        x = param("x", (4, 3), rng)

        def loss():
            picked = ops.take(x, np.array([0, 2, 2]), axis=0)
            row = ops.select(x, 1, axis=0)
            return weighted_sum(ops.concat([ops.reshape(picked, (9,)), row], axis=0))

        assert_gradients_match(loss, [x])

    def test_broadcast_add_mul(self, rng):
        """Right operands broadcast over leading axes."""
        x, b = param("x", (2, 3, 4), rng), param("b", (3, 4), rng)
        assert_gradients_match(lambda: weighted_sum(ops.mul(ops.add(x, b), b)), [x, b])

    def test_refinement_counts_kinks(self):
        """A coordinate that straddles a relu kink is re-measured."""
        x = ParameterTensor("x", np.array([1e-6, 0.5]))
        report = finite_diff_check(lambda: ops.sum_all(ops.relu(x)), [x], eps=1e-5)
        assert report.coordinates_refined == 1
        assert report.max_error < TOLERANCE
        assert report.coordinates_checked == 2

    def test_relative_error_floor(self):
        """Near-zero gradients are judged on absolute error."""
        assert relative_error(1e-9, 0.0, floor=1e-2) == pytest.approx(1e-7)


class TestGraph:
    """Recording and backward."""

    def test_no_grad_skips_recording(self, rng):
        """Results computed under no_grad have no graph."""
        x = param("x", (3,), rng)
        with no_grad():
            y = ops.sum_all(ops.tanh(x))
        assert not y.requires_grad
        with pytest.raises(BackwardError):
            backward(y)

    def test_non_scalar_loss(self, rng):
        """backward needs a scalar."""
        x = param("x", (3,), rng)
        with pytest.raises(BackwardError):
            backward(ops.tanh(x))

    def test_gradients_accumulate(self, rng):
        """Two backward passes add up."""
        x = param("x", (3,), rng)
        backward(ops.sum_all(x))
        backward(ops.sum_all(x))
        np.testing.assert_array_equal(x.grad, np.full(3, 2.0))

    def test_frozen_parameter(self):
        """Non-trainable parameters are never updated."""
        x = ParameterTensor("x", np.ones(2), trainable=False)
        assert not x.requires_grad
        adam_step([x], AdamState(), 0.1)
        np.testing.assert_array_equal(x.data, np.ones(2))

    def test_empty_shape_rejected(self):
        """Every dimension must be positive."""
        with pytest.raises(ValueError):
            ParameterTensor("x", np.zeros((0, 2)))


class TestAdam:
    """Bias-corrected Adam."""

    def test_first_step_moves_by_learning_rate(self):
        """After bias correction the first step is lr * sign(g)."""
        p = ParameterTensor("p", np.array([1.0, 1.0, 1.0]))
        p.grad[...] = [0.5, -2.0, 0.0]
        state = adam_step([p], AdamState(), learning_rate=0.1)
        np.testing.assert_allclose(p.data, [0.9, 1.1, 1.0], atol=1e-6)
        assert state.t == 1
        np.testing.assert_array_equal(p.grad, np.zeros(3))

    def test_keeps_grad_when_asked(self):
        """zero_grad=False leaves the gradient for another optimizer."""
        p = ParameterTensor("p", np.zeros(2))
        p.grad[...] = 1.0
        adam_step([p], AdamState(), 0.01, zero_grad=False)
        np.testing.assert_array_equal(p.grad, np.ones(2))

    def test_minimizes_quadratic(self):
        """Repeated steps on (p - 3)^2 converge near 3."""
        p = ParameterTensor("p", np.zeros(1))
        state = AdamState()
        for _ in range(500):
            backward(ops.sum_all(ops.mul(ops.sub(p, 3.0), ops.sub(p, 3.0))))
            adam_step([p], state, learning_rate=0.05)
        assert p.data[0] == pytest.approx(3.0, abs=0.05)

    def test_three_step_trajectory(self):
        """On w^2 from w = 1 the first three iterates follow the bias-corrected recurrences exactly."""
        p = ParameterTensor("w", np.array([1.0]))
        state = AdamState()
        expected, w, m, v = [], 1.0, 0.0, 0.0
        for t in range(1, 4):
            g = 2.0 * w
            m = BETA1 * m + (1.0 - BETA1) * g
            v = BETA2 * v + (1.0 - BETA2) * g * g
            w -= 0.1 * (m / (1.0 - BETA1 ** t)) / (math.sqrt(v / (1.0 - BETA2 ** t)) + EPSILON)
            expected.append(w)

        trajectory = []
        for _ in range(3):
            backward(ops.sum_all(ops.mul(p, p)))
            adam_step([p], state, learning_rate=0.1)
            trajectory.append(float(p.data[0]))
        np.testing.assert_allclose(trajectory, expected, rtol=1e-12)
        assert trajectory[0] == pytest.approx(0.9, abs=1e-7)
        assert state.t == 3 and p.version == 3
