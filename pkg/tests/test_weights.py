import numpy as np
import pytest
from hypothesis import given, strategies as st

from permot.weights import Expression, ExpressionError, WeightedMeasure, exponential_family_sampler


def test_expression_value_and_gradient():
    f = Expression("x**2 + |x|", 1)
    X = np.array([[-2.0], [0.5]])
    np.testing.assert_allclose(f(X), [6.0, 0.75])
    np.testing.assert_allclose(f.gradient(X)[:, 0], [-5.0, 2.0])
    g = Expression("x1*x2 + exp(x1)", 2)
    np.testing.assert_allclose(g.gradient(np.array([[0.0, 3.0]])), [[4.0, 0.0]])


@pytest.mark.parametrize("text", ["x +", "y**2", "__import__('os')"])
def test_expression_rejects(text):
    with pytest.raises(ExpressionError):
        Expression(text, 1)


def test_uniform_measure():
    m = WeightedMeasure.uniform([-1], [3])
    assert m.total_mass() == pytest.approx(4.0)
    assert m.integrate(lambda X: X[:, 0]) == pytest.approx(1.0)  # rho0 is normalized
    s = m.sample(np.random.default_rng(0), 5000)
    assert s.min() >= -1 and s.max() <= 3
    assert s.mean() == pytest.approx(1.0, abs=0.05)


def test_density_sampling_moments():
    m = WeightedMeasure([0], [1], density=lambda X: 2 * X[:, 0])
    s = m.sample(np.random.default_rng(1), 20000)
    assert s.mean() == pytest.approx(2 / 3, abs=0.01)
    assert not m.contains(np.array([[1.5]]))[0]


def test_tilted_log_mass():
    m = WeightedMeasure.uniform([0], [1], weight="x")
    t = m.tilted(2.0)  # exp(-2 x) on [0, 1]
    assert t.log_mass == pytest.approx(np.log((1 - np.exp(-2)) / 2), rel=1e-10)
    assert m.integrate(t.density) == pytest.approx(1.0)


@given(st.floats(-5, 5), st.integers(0, 3))
def test_exponential_family_draws_stay_in_window(slope, j):
    base = WeightedMeasure.uniform([-1], [1], weight="x**2")
    draw = exponential_family_sampler(base, 1.0, np.array([[-1], [0], [0.5], [slope]]), 3.0)
    x = draw(np.random.default_rng(7), j, 200)
    assert np.all((x >= -1) & (x <= 1))
