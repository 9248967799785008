"""Adam update rule and parameter initialization."""

import numpy as np
import pytest

from holderrec.optim import AdamState, ParamStore, adam_step, init_params


def test_first_adam_step_moves_by_learning_rate():
    """First bias-corrected step with unit gradient is ~ lr * g / (|g| + eps)."""
    params = ParamStore()
    theta = params.add("theta", [[1.0]])
    theta.grad = np.array([[1.0]])
    adam_step(params, AdamState.for_params(params, learning_rate=0.01))
    assert abs(theta.data[0, 0] - 0.99) < 1e-7


def test_zero_gradients_are_a_fixed_point():
    params = ParamStore()
    theta = params.add("theta", [[2.0, -3.0]])
    state = AdamState.for_params(params)
    for _ in range(3):
        theta.grad = np.zeros((1, 2))
        adam_step(params, state)
    np.testing.assert_array_equal(theta.data, [[2.0, -3.0]])
    assert state.step_count == 3


def test_parameters_update_independently():
    rng = np.random.default_rng(0)
    g_a, g_b = rng.normal(size=(2, 2)), rng.normal(size=(3, 1))

    both = ParamStore()
    a2, b2 = both.add("a", np.ones((2, 2))), both.add("b", np.ones((3, 1)))
    state = AdamState.for_params(both, learning_rate=0.05)
    a2.grad, b2.grad = g_a.copy(), g_b.copy()
    adam_step(both, state)

    for name, grad, updated in (("a", g_a, a2), ("b", g_b, b2)):
        alone = ParamStore()
        p = alone.add(name, np.ones(grad.shape))
        p.grad = grad.copy()
        adam_step(alone, AdamState.for_params(alone, learning_rate=0.05))
        np.testing.assert_array_equal(p.data, updated.data)


def test_missing_gradient_raises():
    params = ParamStore()
    params.add("theta", [[1.0]])
    with pytest.raises(ValueError, match="theta"):
        adam_step(params, AdamState.for_params(params))


def test_duplicate_name_rejected():
    params = ParamStore()
    params.add("w", [[1.0]])
    with pytest.raises(ValueError, match="duplicate"):
        params.add("w", [[2.0]])


class TestInitParams:
    def test_same_seed_identical(self):
        a, b = init_params(5, 7, seed=3), init_params(5, 7, seed=3)
        assert a.tobytes() == b.tobytes()

    def test_bounded(self):
        w = init_params(6, 10, seed=1)
        bound = np.sqrt(6.0 / 16)
        assert np.abs(w).max() <= bound

    def test_mean_near_zero(self):
        # 1000 samples of U(-b, b): |mean| within 3 standard errors of 0
        w = init_params(25, 40, seed=2)
        bound = np.sqrt(6.0 / 65)
        stderr = bound / np.sqrt(3 * w.size)
        assert abs(w.mean()) < 3 * stderr

    def test_bad_dims(self):
        with pytest.raises(ValueError):
            init_params(0, 3, seed=0)
