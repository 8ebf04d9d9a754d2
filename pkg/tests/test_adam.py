"""Adam optimizer: fixed points, first-step size, convergence."""

import numpy as np
import pytest

from conseq import nn


class TestAdamStep:
    def test_zero_gradient_is_fixed_point(self):
        p = nn.Parameter("w", np.array([1.0, -2.0, 3.0]))
        state = nn.AdamState(learning_rate=0.1)
        for _ in range(5):
            nn.adam_step([p], state)
        np.testing.assert_array_equal(p.value, [1.0, -2.0, 3.0])
        assert state.step_count == 5

    def test_first_step_magnitude_is_learning_rate(self):
        # with bias correction the first update is lr * g / (|g| + eps)
        g = np.array([0.5, -3.0, 1e-3])
        p = nn.Parameter("w", np.zeros(3))
        p.grad[...] = g
        lr = 0.01
        nn.adam_step([p], nn.AdamState(learning_rate=lr))
        np.testing.assert_allclose(p.value, -lr * np.sign(g), rtol=1e-4)

    def test_gradients_left_intact(self):
        p = nn.Parameter("w", np.ones(2))
        p.grad[...] = [1.0, 2.0]
        nn.adam_step([p], nn.AdamState(learning_rate=0.1))
        np.testing.assert_array_equal(p.grad, [1.0, 2.0])

    def test_step_count_increments_once_per_call(self):
        p = nn.Parameter("w", np.ones(2))
        state = nn.AdamState(learning_rate=0.1)
        nn.adam_step([p], state)
        nn.adam_step([p], state)
        assert state.step_count == 2

    def test_quadratic_bowl_convergence(self):
        w = nn.Parameter("w", np.array([1.0]))
        state = nn.AdamState(learning_rate=0.01)
        for _ in range(500):
            w.grad[...] = 2.0 * w.value
            nn.adam_step([w], state)
        assert abs(float(w.value[0])) < 1e-3

    def test_invalid_learning_rate(self):
        with pytest.raises(ValueError):
            nn.AdamState(learning_rate=0.0)
