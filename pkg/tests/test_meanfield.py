import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import solve_bvp

from permot import gibbs as gb
from permot import meanfield as mf
from permot.convexcalc import DiscreteMeasure
from permot.geometry import ConvexBody
from permot.weights import WeightedMeasure

UNIT = ConvexBody.interval(0, 1)


def _instance(m=4, k=1, beta="k"):
    pts = np.linspace(-1, 1, m)
    space = gb.DiscreteSpace(pts, np.full(m, 1 / m), pts ** 2)
    spec = gb.GibbsSpec(UNIT, k, WeightedMeasure.uniform([-1], [1]), beta=beta)
    return space, spec


@given(st.lists(st.floats(0.01, 1), min_size=2, max_size=6))
def test_relative_entropy_nonnegative(w):
    mu = np.array(w) / sum(w)
    mu0 = np.full(len(w), 1 / len(w))
    assert mf.relative_entropy(mu, mu0) >= -1e-12
    assert mf.relative_entropy(mu0, mu0) == 0.0


def test_relative_entropy_off_support():
    assert mf.relative_entropy([0.5, 0.5], [1.0, 0.0]) == math.inf


@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4), st.floats(-5, 5))
def test_pi_N_shift_equivariant(u, c):
    space, spec = _instance()
    T = mf.GibbsTensor.build(space, spec)
    u = np.array(u)
    np.testing.assert_allclose(mf.pi_N(space, spec, u + c, tensor=T),
                               mf.pi_N(space, spec, u, tensor=T) + c, atol=1e-10)


def test_balanced_fixed_point_one_point_correlation():
    space, spec = _instance()
    st_ = mf.balanced_fixed_point(space, spec)
    corr = mf.one_point_correlation(space, spec, st_.u)
    np.testing.assert_allclose(corr, space.weights, atol=1e-9)
    assert st_.u[st_.anchor] == 0.0


def test_balanced_with_target():
    space, spec = _instance()
    mu = np.array([0.1, 0.2, 0.3, 0.4])
    st_ = mf.balanced_fixed_point(space, spec, mu)
    np.testing.assert_allclose(mf.one_point_correlation(space, spec, st_.u), mu, atol=1e-8)


def test_mean_field_fixed_point_equation():
    space, spec = _instance(k=2)
    beta = 0.5 * spec.beta_N
    st_ = mf.mean_field_fixed_point(space, spec, beta)
    res, mass = mf.mean_field_equation_residual(space, spec, beta, st_.u)
    assert res <= 1e-9
    assert mass == pytest.approx(1 - beta / spec.beta_N, abs=1e-9)
    with pytest.raises(ValueError):
        mf.pi_N_beta(space, spec, spec.beta_N, np.zeros(4))


def test_variational_identity():
    space, spec = _instance(m=3)
    rep = mf.gibbs_variational_check(space, spec, [np.full(9, 1 / 9)])
    assert rep.identity_residual <= 1e-10 and rep.competitors_ok


def _bvp_reference(beta):
    # phi'' = exp(beta phi) on [0, 1], phi'(0) = 0, phi'(1) = 1, by continuation in beta
    bc = lambda ya, yb: np.array([ya[1], yb[1] - 1])
    x = np.linspace(0, 1, 101)
    y = np.vstack([0.5 * x ** 2 - 1 / 6, x])
    for b in np.linspace(0.25, beta, 8):
        fun = lambda x, y, b=b: np.vstack([y[1], np.exp(b * y[0])])
        res = solve_bvp(fun, bc, x, y, tol=1e-10, max_nodes=100000)
        x, y = res.x, res.y
    return res


@pytest.mark.parametrize("beta", [0.5, 2.0, 8.0])
def test_solve_ma_against_bvp(beta):
    meas = WeightedMeasure.uniform([0], [1])
    sol = mf.solve_ma_1d(beta, meas, UNIT, nodes=1001)
    ref = _bvp_reference(beta)
    assert ref.success
    np.testing.assert_allclose(sol.values, ref.sol(sol.x)[0], atol=2e-5)
    assert sol.residual <= 1e-8


def test_solve_ma_beta_zero_is_rearrangement():
    meas = WeightedMeasure([0], [1], density=lambda X: 2 * X[:, 0])
    sol = mf.solve_ma_1d(0.0, meas, ConvexBody.interval(-1, 1), nodes=401)
    # F(x) = x^2, so the gradient is -1 + 2 x^2
    x = sol.x[1:-1]  # central differences only
    np.testing.assert_allclose(sol.gradient()[1:-1], -1 + 2 * x ** 2, atol=1e-4)


def test_solution_measure_is_probability():
    sol = mf.solve_ma_1d(2.0, WeightedMeasure.uniform([0], [1], weight="x**2"), UNIT, nodes=401)
    assert mf.solution_measure(sol, UNIT).total == pytest.approx(1.0)


def test_beta_ladder_monotone():
    rows = mf.beta_limit_check(WeightedMeasure.uniform([-1], [1], weight="x**2"),
                               ConvexBody.interval(-1, 1), betas=[1, 4, 16], nodes=801)
    gaps = [r.gap for r in rows]
    assert gaps[0] > gaps[1] > gaps[2]


def test_free_energy_point_mass_has_no_entropy_term():
    mu = DiscreteMeasure(np.array([[0.5]]), np.array([1.0]))
    spec = gb.GibbsSpec(UNIT, 4, WeightedMeasure.uniform([0], [1]))
    rep = mf.free_energy(mu, spec, 1.0)
    assert np.isfinite(rep.energy)


def test_convergence_error_keeps_history():
    space, spec = _instance()
    with pytest.raises(mf.ConvergenceError) as info:
        mf.balanced_fixed_point(space, spec, tol=1e-30, max_iter=3)
    assert len(info.value.history) == 4
