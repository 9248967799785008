"""Primitive semantics, tape gradients against finite differences, and the
non-finite / shape guard rails."""

import math

import numpy as np
import pytest

import holderrec.autodiff as ad
from holderrec.optim import ParamStore


def tensor(data):
    return ad.Tensor(np.array(data, dtype=np.float64), requires_grad=True)


class TestPrimitiveValues:
    def test_relu(self):
        np.testing.assert_array_equal(ad.value(ad.relu(np.array([[-1.0, 2.0]]))),
                                      [[0.0, 2.0]])

    def test_sigmoid_at_zero(self):
        assert ad.value(ad.sigmoid(np.zeros((1, 1))))[0, 0] == 0.5

    def test_matmul_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(ad.value(ad.matmul(a, np.eye(2))), a)

    def test_tanh_and_log(self):
        np.testing.assert_allclose(ad.value(ad.tanh(np.array([[0.5]]))),
                                   np.tanh(0.5))
        np.testing.assert_allclose(ad.value(ad.log(np.array([[math.e]]))), 1.0)

    def test_concat_and_reductions(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[5.0], [6.0]])
        np.testing.assert_array_equal(ad.value(ad.concat_cols(a, b)),
                                      [[1, 2, 5], [3, 4, 6]])
        np.testing.assert_array_equal(ad.value(ad.row_mean(a)), [[2.0, 3.0]])
        np.testing.assert_array_equal(ad.value(ad.row_max(a)), [[3.0, 4.0]])
        np.testing.assert_array_equal(ad.value(ad.row_sum(a)), [[3.0], [7.0]])
        assert float(ad.value(ad.sum_all(a))[0, 0]) == 10.0

    def test_take_rows_and_segments(self):
        a = np.array([[1.0], [2.0], [3.0]])
        np.testing.assert_array_equal(ad.value(ad.take_rows(a, [2, 0])), [[3.0], [1.0]])
        seg = ad.value(ad.segment_mean(a, [2, 0, 1]))
        np.testing.assert_array_equal(seg, [[1.5], [0.0], [3.0]])
        np.testing.assert_array_equal(ad.value(ad.segment_sum(a, [2, 0, 1])),
                                      [[3.0], [0.0], [3.0]])
        np.testing.assert_array_equal(ad.value(ad.segment_max(a, [3, 0])),
                                      [[3.0], [0.0]])

    def test_deterministic_bitwise(self):
        rng = np.random.default_rng(0)
        a, b = rng.random((4, 3)), rng.random((3, 5))
        first = ad.value(ad.matmul(a, b))
        second = ad.value(ad.matmul(a, b))
        assert first.tobytes() == second.tobytes()


class TestShapeAndFiniteGuards:
    def test_matmul_shape_error_names_both(self):
        with pytest.raises(ad.ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            ad.matmul(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_log_of_negative_raises(self):
        with pytest.raises(ad.NonFiniteError, match="log"):
            ad.log(np.array([[-1.0]]))

    def test_overflow_raises(self):
        with np.errstate(over="ignore"), pytest.raises(ad.NonFiniteError):
            ad.mul(np.array([[1e308]]), np.array([[1e308]]))

    def test_backward_without_forward(self):
        with pytest.raises(ad.TapeError):
            tensor([[1.0]]).backward()

    def test_backward_needs_scalar(self):
        w = tensor([[1.0, 2.0]])
        with pytest.raises(ad.ShapeError):
            ad.relu(w).backward()


class TestBackward:
    def test_sum_gradient_is_ones(self):
        w = tensor(np.arange(4.0).reshape(2, 2))
        ad.sum_all(w).backward()
        np.testing.assert_array_equal(w.grad, np.ones((2, 2)))

    def test_relu_subgradient_at_work(self):
        w = tensor([[-1.0, 2.0]])
        ad.sum_all(ad.relu(w)).backward()
        np.testing.assert_array_equal(w.grad, [[0.0, 1.0]])

    def test_gradients_accumulate_until_zeroed(self):
        w = tensor([[1.0]])
        ad.sum_all(w).backward()
        ad.sum_all(w).backward()
        np.testing.assert_array_equal(w.grad, [[2.0]])
        w.zero_grad()
        assert w.grad is None

    def test_no_grad_returns_plain_arrays(self):
        w = tensor([[1.0, -2.0]])
        with ad.no_grad():
            out = ad.relu(w)
        assert isinstance(out, np.ndarray)


def composed_loss(params):
    """Three-layer composition touching most primitives."""
    x = np.array([[0.3, -0.7, 0.2], [0.5, 0.1, -0.4]])
    h1 = ad.relu(ad.matmul(x, ad.transpose(params["w1"])))
    h2 = ad.tanh(ad.add(ad.matmul(h1, ad.transpose(params["w2"])), params["b2"]))
    mixed = ad.concat_rows([h2, ad.row_max(h2), ad.row_mean(h2)])
    h3 = ad.sigmoid(ad.take_rows(mixed, [0, 2, 1, 3]))
    return ad.mul(ad.sum_all(ad.log(ad.clamp(h3, 1e-12, 1 - 1e-12))), -0.5)


class TestGradientsAgainstFiniteDifferences:
    @pytest.mark.parametrize("seed", range(20))
    def test_three_layer_composition(self, seed):
        rng = np.random.default_rng(seed)
        params = ParamStore()
        params.add("w1", rng.normal(scale=0.5, size=(4, 3)))
        params.add("w2", rng.normal(scale=0.5, size=(2, 4)))
        params.add("b2", rng.normal(scale=0.5, size=(1, 2)))
        params.zero_grads()
        composed_loss(params).backward()
        fd = ad.finite_difference_grad(lambda p: ad.scalar(composed_loss(p)), params)
        for name, p in params.items():
            err = np.abs(fd[name] - p.grad) / np.maximum(1.0, np.abs(p.grad))
            assert err.max() < 1e-4, f"{name}: {err.max()}"

    @pytest.mark.parametrize("seed", range(5))
    def test_segment_ops(self, seed):
        rng = np.random.default_rng(seed)
        lengths = np.array([3, 0, 2, 1])
        params = ParamStore()
        params.add("x", rng.normal(size=(6, 4)))

        def loss(p):
            parts = [ad.segment_mean(p["x"], lengths),
                     ad.segment_sum(p["x"], lengths),
                     ad.segment_max(p["x"], lengths),
                     ad.scale_rows(ad.segment_sum(p["x"], lengths), [0.5, 2.0, 1.0, 3.0])]
            return ad.sum_all(ad.tanh(ad.concat_rows(parts)))

        params.zero_grads()
        out = loss(params)
        out.backward()
        fd = ad.finite_difference_grad(lambda p: ad.scalar(loss(p)), params)
        np.testing.assert_allclose(fd["x"], params["x"].grad, atol=1e-7)

    @pytest.mark.parametrize("seed", range(5))
    def test_lstm_chain_batch(self, seed):
        rng = np.random.default_rng(seed)
        d = 3
        lengths = np.array([2, 0, 3, 1])
        params = ParamStore()
        params.add("x", rng.normal(scale=0.8, size=(6, d)))
        names = []
        for gate in "ifoc":
            for part, shape in (("W", (d, d)), ("U", (d, d)), ("b", (1, d))):
                name = f"{part}{gate}"
                params.add(name, rng.normal(scale=0.6, size=shape))
                names.append(name)

        def loss(p):
            out = ad.lstm_chain_batch(p["x"], lengths,
                                      *[p[n] for n in names])
            return ad.sum_all(ad.mul(out, out))

        params.zero_grads()
        loss(params).backward()
        fd = ad.finite_difference_grad(lambda p: ad.scalar(loss(p)), params)
        for name, p in params.items():
            err = np.abs(fd[name] - p.grad) / np.maximum(1.0, np.abs(p.grad))
            assert err.max() < 1e-4, f"{name}: {err.max()}"

    def test_single_chain_matches_batch(self):
        rng = np.random.default_rng(7)
        d, k = 4, 5
        x = rng.normal(size=(k, d))
        gates = [rng.normal(scale=0.5, size=(d, d)) if i % 3 != 2
                 else rng.normal(scale=0.5, size=(1, d)) for i in range(12)]
        single = ad.value(ad.lstm_chain(x, *gates))
        batch = ad.value(ad.lstm_chain_batch(x, np.array([k]), *gates))
        np.testing.assert_array_equal(single, batch)


class TestFiniteDifferenceOracle:
    def test_quadratic(self):
        params = ParamStore()
        params.add("theta", [[3.0]])
        fd = ad.finite_difference_grad(lambda p: float(p["theta"].data[0, 0] ** 2),
                                       params, epsilon=1e-5)
        assert abs(fd["theta"][0, 0] - 6.0) < 1e-6

    def test_constant_function(self):
        params = ParamStore()
        params.add("theta", [[1.0, 2.0]])
        fd = ad.finite_difference_grad(lambda p: 4.2, params)
        np.testing.assert_array_equal(fd["theta"], np.zeros((1, 2)))

    def test_sigmoid_slope_at_zero(self):
        params = ParamStore()
        params.add("theta", [[0.0]])
        fd = ad.finite_difference_grad(
            lambda p: ad.scalar(ad.sigmoid(p["theta"].data)), params)
        assert abs(fd["theta"][0, 0] - 0.25) < 1e-9
