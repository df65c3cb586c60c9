"""Tensor op semantics and gradient correctness against finite differences."""

import math

import numpy as np
import pytest

from gcnet import tensor as T
from gcnet.errors import DimensionError
from gcnet.tensor import Tensor

from oracles import central_difference_grad, relative_error

RNG = np.random.default_rng(1234)


def rand(*shape, low=0.5, high=2.0, signed=True):
    """Values bounded away from zero so gradients stay well-scaled."""
    vals = RNG.uniform(low, high, size=shape).astype(np.float32)
    if signed:
        signs = RNG.choice([-1.0, 1.0], size=shape).astype(np.float32)
        vals = vals * signs
    return vals


def check_grad(build, params, tol=1e-3):
    """Backward grads of build() vs central differences on each param."""
    for p in params:
        p.zero_grad()
    out = build()
    out.backward()
    analytic = np.concatenate([p.grad.ravel().astype(np.float64) for p in params])
    numeric = np.concatenate(
        [central_difference_grad(lambda: build().item(), p.data).ravel() for p in params]
    )
    err = relative_error(analytic, numeric)
    assert err <= tol, f"gradient mismatch: rel err {err}"


class TestMatmul:
    def test_identity(self):
        a = rand(3, 3)
        out = T.matmul(Tensor(np.eye(3, dtype=np.float32)), Tensor(a))
        np.testing.assert_array_equal(out.data, a)

    def test_hand_checked(self):
        out = T.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
        np.testing.assert_array_equal(out.data, [[3.0], [7.0]])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            T.matmul(Tensor(rand(2, 3)), Tensor(rand(4, 2)))

    def test_gradient_vs_finite_differences(self):
        for _ in range(100):
            a = Tensor(rand(4, 5), requires_grad=True)
            b = Tensor(rand(5, 3), requires_grad=True)
            check_grad(lambda: T.l2_norm_sq(T.matmul(a, b)), [a, b])


class TestRelu1:
    def test_clamps(self):
        out = T.relu1(Tensor([1.7, -0.3, 0.42]))
        expected = np.array([1.0, 0.0, 0.42], dtype=np.float32)
        np.testing.assert_array_equal(out.data, expected)

    def test_gradient_interior_and_exterior(self):
        x = Tensor([0.42, 1.7, -0.3, 0.0, 1.0], requires_grad=True)
        out = T.relu1(x)
        out.backward(np.ones(5, dtype=np.float32))
        np.testing.assert_array_equal(x.grad, [1.0, 0.0, 0.0, 0.0, 0.0])


class TestBinarizeSTE:
    def test_threshold(self):
        out = T.binarize_ste(Tensor([0.6, 0.2, 0.5]))
        np.testing.assert_array_equal(out.data, [1.0, 0.0, 0.0])

    def test_output_exactly_binary(self):
        phi = Tensor(RNG.uniform(-1, 2, size=200).astype(np.float32))
        out = T.binarize_ste(T.relu1(phi))
        assert set(np.unique(out.data)) <= {0.0, 1.0}

    def test_straight_through_gradient(self):
        phi = Tensor(rand(7), requires_grad=True)
        upstream = rand(7)
        T.binarize_ste(phi).backward(upstream)
        np.testing.assert_array_equal(phi.grad, upstream)

    def test_composed_gradient_gates_on_open_interval(self):
        phi = Tensor([-0.2, 0.0, 0.3, 0.5, 0.9, 1.0, 1.4], requires_grad=True)
        upstream = rand(7)
        T.binarize_ste(T.relu1(phi)).backward(upstream)
        inside = np.array([0, 0, 1, 1, 1, 0, 0], dtype=np.float32)
        np.testing.assert_array_equal(phi.grad, upstream * inside)


class TestSoftmaxCrossEntropy:
    def test_uniform(self):
        loss = T.softmax_cross_entropy(Tensor([[0.0, 0.0]]), [0])
        assert loss.item() == pytest.approx(math.log(2), rel=1e-6)

    def test_huge_logits_stable(self):
        loss = T.softmax_cross_entropy(Tensor([[1000.0, 0.0]]), [0])
        assert loss.item() == pytest.approx(0.0, abs=1e-6)

    def test_label_out_of_range(self):
        with pytest.raises(IndexError):
            T.softmax_cross_entropy(Tensor([[0.0, 0.0]]), [2])

    def test_gradient_vs_finite_differences(self):
        for _ in range(100):
            logits = Tensor(rand(4, 3), requires_grad=True)
            labels = RNG.integers(0, 3, size=4)
            check_grad(lambda: T.softmax_cross_entropy(logits, labels), [logits])


class TestElementwise:
    def test_mul_masking(self):
        out = T.mul(Tensor([1.0, 2.0, 3.0]), Tensor([1.0, 0.0, 1.0]))
        np.testing.assert_array_equal(out.data, [1.0, 0.0, 3.0])

    def test_l2_norm_sq(self):
        assert T.l2_norm_sq(Tensor([3.0, 4.0])).item() == 25.0

    def test_mean_pool_block(self):
        out = T.mean_pool(Tensor([[1.0, 2.0], [3.0, 4.0]]), (2, 2))
        assert out.data.shape == (1, 1)
        assert out.item() == 2.5

    def test_mean_pool_rejects_indivisible(self):
        with pytest.raises(DimensionError):
            T.mean_pool(Tensor(rand(2, 5)), 2)

    def test_add_shape_mismatch(self):
        with pytest.raises(DimensionError):
            T.add(Tensor(rand(2, 3)), Tensor(rand(2, 4)))

    @pytest.mark.parametrize(
        "name,build",
        [
            ("add", lambda a, b: T.l2_norm_sq(T.add(a, b))),
            ("mul", lambda a, b: T.l2_norm_sq(T.mul(a, b))),
        ],
    )
    def test_binary_op_gradients(self, name, build):
        for _ in range(100):
            a = Tensor(rand(3, 4), requires_grad=True)
            b = Tensor(rand(3, 4), requires_grad=True)
            check_grad(lambda: build(a, b), [a, b])

    def test_broadcast_add_gradient(self):
        for _ in range(50):
            a = Tensor(rand(4, 6), requires_grad=True)
            bias = Tensor(rand(6), requires_grad=True)
            check_grad(lambda: T.l2_norm_sq(T.add(a, bias)), [a, bias])

    def test_broadcast_mul_gradient(self):
        for _ in range(50):
            a = Tensor(rand(4, 6), requires_grad=True)
            mask = Tensor(rand(6), requires_grad=True)
            check_grad(lambda: T.l2_norm_sq(T.mul(a, mask)), [a, mask])

    def test_relu_gradient(self):
        for _ in range(100):
            x = Tensor(rand(5, 5), requires_grad=True)  # bounded away from the kink
            check_grad(lambda: T.l2_norm_sq(T.relu(x)), [x])

    def test_mean_pool_flatten_scale_gradients(self):
        for _ in range(50):
            x = Tensor(rand(4, 8), requires_grad=True)
            check_grad(lambda: T.l2_norm_sq(T.mean_pool(x, 2)), [x])
            check_grad(lambda: T.l2_norm_sq(T.scale(T.flatten(x), 1.7)), [x])


class TestGraph:
    def test_shared_subexpression_accumulates(self):
        x = Tensor([2.0], requires_grad=True)
        y = T.add(T.mul(x, x), T.mul(x, x))  # 2x^2, dy/dx = 4x = 8
        y.backward(np.ones(1, dtype=np.float32))
        np.testing.assert_allclose(x.grad, [8.0])

    def test_backward_twice_after_zeroing_is_deterministic(self):
        x = Tensor(rand(3, 3), requires_grad=True)
        w = Tensor(rand(3, 3), requires_grad=True)
        loss = T.l2_norm_sq(T.relu(T.matmul(x, w)))
        loss.backward()
        first = (x.grad.copy(), w.grad.copy())
        x.zero_grad()
        w.zero_grad()
        loss.backward()
        np.testing.assert_array_equal(first[0], x.grad)
        np.testing.assert_array_equal(first[1], w.grad)

    def test_backward_without_grad_on_nonscalar(self):
        with pytest.raises(DimensionError):
            T.relu(Tensor(rand(2, 2), requires_grad=True)).backward()

    def test_comp_graph_orders_inputs_first(self):
        x = Tensor(rand(2, 2), requires_grad=True)
        y = T.relu(x)
        z = T.l2_norm_sq(y)
        graph = T.CompGraph(z)
        order = [id(t) for t in graph.nodes]
        assert order.index(id(x)) < order.index(id(y)) < order.index(id(z))

    def test_nan_is_an_error(self):
        with pytest.raises(T.NumericError):
            T.scale(Tensor([1e30]), 1e30)  # overflows float32 to inf
