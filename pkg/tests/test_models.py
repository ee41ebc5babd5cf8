import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from moce import models
from moce.models import (
    ExpertBank,
    GatingLinear,
    GatingMLP,
    MoCEModel,
    gating_probs,
    hazard_hard,
    hazard_soft,
    init_model,
)


def linear_model(theta, betas):
    return MoCEModel(GatingLinear(theta), ExpertBank(betas))


def test_gating_zero_theta_uniform():
    p = gating_probs(GatingLinear(np.zeros((4, 3))), [0.3, -2.0, 5.0])
    np.testing.assert_allclose(p, 0.25, atol=1e-15)


def test_gating_single_expert():
    assert gating_probs(GatingLinear(np.ones((1, 2))), [3.0, 4.0]).tolist() == [1.0]


def test_gating_closed_form():
    p = gating_probs(GatingLinear([[10.0, 0.0], [0.0, 0.0]]), [1.0, 0.0])
    e = math.exp(10)
    np.testing.assert_allclose(p, [e / (e + 1), 1 / (e + 1)], rtol=1e-15)


def test_gating_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension"):
        gating_probs(GatingLinear(np.zeros((2, 3))), [1.0, 2.0])


@settings(max_examples=100, deadline=None)
@given(arrays(float, st.integers(1, 6), elements=st.floats(-300, 300)), st.floats(-500, 500))
def test_softmax_sums_to_one_and_shift_invariant(logits, c):
    p = models.softmax(logits)
    assert abs(p.sum() - 1) <= 1e-12
    assert np.all(p >= 0)
    np.testing.assert_allclose(models.softmax(logits + c), p, atol=1e-12)


def test_softmax_extreme_logits_stable():
    p = models.softmax(np.array([1000.0, -1000.0, 999.0]))
    assert np.all(np.isfinite(p)) and abs(p.sum() - 1) < 1e-12


@pytest.mark.parametrize("activation", ["relu", "selu", "sigmoid"])
def test_mlp_gating_matches_manual_forward(activation, rng):
    W1, W2 = rng.standard_normal((4, 3)), rng.standard_normal((2, 4))
    g = GatingMLP([W1, W2], activation)
    x = rng.standard_normal(3)
    z = W1 @ x
    h = {
        "relu": np.maximum(z, 0),
        "selu": 1.0507009873554805 * np.where(z > 0, z, 1.6732632423543772 * (np.exp(z) - 1)),
        "sigmoid": 1 / (1 + np.exp(-z)),
    }[activation]
    logits = W2 @ h
    expected = np.exp(logits - logits.max())
    np.testing.assert_allclose(gating_probs(g, x), expected / expected.sum(), rtol=1e-12)
    assert g.layer_dims == [3, 4, 2]


def test_mlp_shape_validation():
    with pytest.raises(ValueError):
        GatingMLP([np.zeros((4, 3)), np.zeros((2, 5))])
    with pytest.raises(ValueError):
        GatingMLP([np.zeros((2, 3))], "tanh")
    with pytest.raises(ValueError):
        linear_model(np.zeros((3, 2)), np.zeros((2, 2)))


class TestHazards:
    def test_single_expert(self):
        m = linear_model([[0.4, 0.1]], [[0.5, -1.0]])
        x = np.array([1.0, 2.0])
        assert hazard_soft(m, x) == pytest.approx(math.exp(-1.5), rel=1e-14)
        assert hazard_hard(m, x) == pytest.approx(math.exp(-1.5), rel=1e-14)

    def test_identical_experts(self, rng):
        b = rng.standard_normal(3)
        m = linear_model(rng.standard_normal((3, 3)), [b, b, b])
        x = rng.standard_normal(3)
        assert hazard_soft(m, x) == pytest.approx(math.exp(b @ x), rel=1e-12)
        assert hazard_hard(m, x) == pytest.approx(math.exp(b @ x), rel=1e-12)

    def test_soft_closed_form(self):
        # uniform gating, expert scores 0 and log 3
        m = linear_model(np.zeros((2, 1)), [[0.0], [math.log(3)]])
        assert hazard_soft(m, [1.0]) == pytest.approx(2.0, rel=1e-14)

    def test_hard_picks_most_probable(self):
        m = linear_model([[math.log(9)], [0.0]], [[1.0], [-1.0]])
        # gating probs (0.9, 0.1) at x = 1
        np.testing.assert_allclose(gating_probs(m.gating, [1.0]), [0.9, 0.1])
        assert hazard_hard(m, [1.0]) == pytest.approx(math.e)

    def test_hard_tie_lowest_index(self):
        m = linear_model(np.zeros((2, 1)), [[1.0], [-1.0]])
        assert hazard_hard(m, [2.0]) == pytest.approx(math.exp(2.0))

    def test_dimension_mismatch(self):
        m = linear_model(np.zeros((2, 2)), np.zeros((2, 2)))
        with pytest.raises(ValueError):
            hazard_soft(m, [1.0, 2.0, 3.0])

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0.01, 50))
    def test_hard_invariant_to_logit_scaling(self, seed, c):
        rng = np.random.default_rng(seed)
        theta, betas = rng.uniform(-1, 1, (3, 2)), rng.uniform(-1, 1, (3, 2))
        x = rng.standard_normal(2)
        assert hazard_hard(linear_model(theta, betas), x) == hazard_hard(linear_model(c * theta, betas), x)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31))
    def test_soft_is_convex_combination(self, seed):
        rng = np.random.default_rng(seed)
        K = int(rng.integers(1, 5))
        m = linear_model(rng.uniform(-2, 2, (K, 3)), rng.uniform(-2, 2, (K, 3)))
        x = rng.standard_normal(3)
        r = np.exp(m.experts.betas @ x)
        h = hazard_soft(m, x)
        assert r.min() * (1 - 1e-12) <= h <= r.max() * (1 + 1e-12)

    def test_batch_matches_rows(self, rng):
        m = init_model(3, 3, (4,), "selu", 1.0, seed=1)
        X = rng.standard_normal((5, 3))
        np.testing.assert_allclose(hazard_soft(m, X), [hazard_soft(m, x) for x in X])
        np.testing.assert_allclose(hazard_hard(m, X), [hazard_hard(m, x) for x in X])


@pytest.mark.parametrize("hidden,activation", [((), "relu"), ((5,), "sigmoid"), ((4, 3), "selu")])
def test_serialization_round_trip(tmp_path, hidden, activation):
    m = init_model(3, 2, hidden, activation, 0.7, seed=[4, 2])
    models.save(m, tmp_path / "m.txt")
    back = models.load(tmp_path / "m.txt")
    assert type(back.gating) is type(m.gating)
    assert back.gating.activation == m.gating.activation or m.is_linear
    for a, b in zip(m.parameters(), back.parameters()):
        assert np.array_equal(a, b)
    assert models.dumps(back) == models.dumps(m)


def test_serialization_rejects_garbage():
    with pytest.raises(ValueError):
        models.loads("hello\n")


def test_init_model_seeded():
    a, b = init_model(4, 3, (5,), seed=9), init_model(4, 3, (5,), seed=9)
    for x, y in zip(a.parameters(), b.parameters()):
        assert np.array_equal(x, y)
    assert np.std(init_model(50, 40, seed=0).experts.betas) == pytest.approx(0.1, rel=0.05)
