import math

import numpy as np
import pytest

from moce.optim import (
    NonFiniteGradientError,
    OptimizerState,
    finite_diff_grad,
    max_relative_error,
    step,
)


@pytest.mark.parametrize("kind", ["adam", "rmsprop"])
def test_zero_gradient_leaves_params(kind):
    p = [np.array([[1.0, -2.0]]), np.array([[0.5]])]
    state = OptimizerState.create(kind, p, 0.1)
    new, state2 = step(state, p, [np.zeros((1, 2)), np.zeros((1, 1))])
    for a, b in zip(p, new):
        np.testing.assert_array_equal(a, b)
    assert state2.step_count == 1 and state.step_count == 0


def test_adam_scalar_recurrence():
    lr, g = 0.01, 0.37
    x = [np.array([0.0])]
    state = OptimizerState.create("adam", x, lr)
    m = v = 0.0
    ref = 0.0
    for t in range(1, 201):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        prev = ref
        ref += lr * (m / (1 - 0.9**t)) / (math.sqrt(v / (1 - 0.999**t)) + 1e-8)
        before = x[0][0]
        x, state = step(state, x, [np.array([g])])
        assert x[0][0] == pytest.approx(ref, rel=1e-13)
    # bias-corrected step under a constant gradient is the learning rate
    assert x[0][0] - before == pytest.approx(lr, rel=1e-6)
    assert ref - prev == pytest.approx(lr, rel=1e-6)


def test_rmsprop_scalar_recurrence():
    lr, g = 0.01, -2.5
    x = [np.array([1.0])]
    state = OptimizerState.create("rmsprop", x, lr)
    v, ref = 0.0, 1.0
    steps = []
    for _ in range(300):
        v = 0.9 * v + 0.1 * g * g
        ref += lr * g / (math.sqrt(v) + 1e-8)
        before = x[0][0]
        x, state = step(state, x, [np.array([g])])
        steps.append(x[0][0] - before)
        assert x[0][0] == pytest.approx(ref, rel=1e-13)
    # first update is lr / sqrt(1 - decay); it settles to lr
    assert abs(steps[0]) == pytest.approx(lr / math.sqrt(0.1), rel=1e-6)
    assert abs(steps[-1]) == pytest.approx(lr, rel=1e-6)


def test_ascent_direction():
    p = [np.array([0.0])]
    for kind in ("adam", "rmsprop"):
        new, _ = step(OptimizerState.create(kind, p, 0.1), p, [np.array([1.0])])
        assert new[0][0] > 0


def test_nonfinite_gradient_names_block():
    p = [np.zeros(2), np.zeros(3)]
    state = OptimizerState.create("adam", p, 0.1)
    with pytest.raises(NonFiniteGradientError, match="gating.0"):
        step(state, p, [np.zeros(2), np.array([0.0, np.nan, 1.0])], names=["experts", "gating.0"])


def test_shape_mismatch():
    p = [np.zeros(2)]
    with pytest.raises(ValueError):
        step(OptimizerState.create("adam", p, 0.1), p, [np.zeros(3)])


def test_bad_learning_rate():
    with pytest.raises(ValueError):
        OptimizerState.create("adam", [np.zeros(1)], 0.0)


def test_deterministic_pure():
    p = [np.array([1.0, 2.0])]
    g = [np.array([0.3, -0.1])]
    state = OptimizerState.create("adam", p, 0.05)
    a, sa = step(state, p, g)
    b, sb = step(state, p, g)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(sa.first_moment[0], sb.first_moment[0])
    np.testing.assert_array_equal(p[0], [1.0, 2.0])


@pytest.mark.parametrize("kind", ["adam", "rmsprop"])
def test_quadratic_bowl_monotone(kind):
    target = np.array([1.5, -0.5, 2.0])

    def f(x):
        return -np.sum((x - target) ** 2)

    x = [np.zeros(3)]
    state = OptimizerState.create(kind, x, 0.005)
    prev = f(x[0])
    for _ in range(150):
        x, state = step(state, x, [-2 * (x[0] - target)])
        cur = f(x[0])
        assert cur > prev
        prev = cur


def test_finite_diff_sum_of_squares():
    g = finite_diff_grad(lambda ps: float(np.sum(ps[0] ** 2)), [np.array([1.0, 2.0])])
    np.testing.assert_allclose(g[0], [2.0, 4.0], atol=1e-8)


def test_finite_diff_linear_exact():
    w = np.array([[0.5, -3.0], [2.0, 0.25]])
    for h in (1e-2, 1e-5):
        g = finite_diff_grad(lambda ps: float(np.sum(w * ps[0])), [np.ones((2, 2))], h)
        np.testing.assert_allclose(g[0], w, rtol=1e-9)


def test_finite_diff_nonfinite_probe():
    with np.errstate(invalid="ignore"), pytest.raises(FloatingPointError, match=r"\(1,\)"):
        finite_diff_grad(lambda ps: float(np.log(ps[0][1])), [np.array([1.0, 1e-4])], 1e-3)


def test_max_relative_error():
    assert max_relative_error([np.array([1.0, 2.0])], [np.array([1.0, 2.0])]) == 0
    assert max_relative_error([np.array([1.0, 4.0])], [np.array([1.0, 3.0])]) == pytest.approx(0.25)
