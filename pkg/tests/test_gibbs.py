import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import dblquad

from permot import gibbs as gb
from permot.geometry import ConvexBody
from permot.weights import WeightedMeasure

UNIT = ConvexBody.interval(0, 1)


def _spec(k=1, **kw):
    return gb.GibbsSpec(UNIT, k, WeightedMeasure.uniform([0], [1], weight=kw.pop("weight", None)), **kw)


def test_spec_defaults():
    s = _spec(3)
    assert s.N == 4 and s.beta_N == 3.0 and s.exponent == 1.0 and s.pure_lattice
    assert s.schedule_validated
    assert not _spec(3, beta=lambda N: math.log(N + 1)).schedule_validated
    with pytest.raises(ValueError):
        _spec(1, beta=-1.0)
    with pytest.raises(ValueError):
        _spec(1, targets=np.zeros(5))


def test_rng_streams_reproducible_and_distinct():
    a = gb.rng_for(5, 1).random(3)
    np.testing.assert_array_equal(a, gb.rng_for(5, 1).random(3))
    assert not np.allclose(a, gb.rng_for(5, 2).random(3))


def test_log_partition_against_quadrature():
    # N = 2 on [0, 1] with beta_N = k = 1 and weight x^2
    spec = _spec(1, weight="x**2")
    f = lambda y, x: math.exp(gb.log_density_unnormalized(spec, [x, y]))
    ref, _ = dblquad(f, 0, 1, 0, 1, epsabs=1e-12)
    assert gb.log_partition_factorized(spec) == pytest.approx(math.log(ref), abs=1e-9)


def test_log_density_outside_window():
    assert gb.log_density_unnormalized(_spec(1), [0.5, 1.5]) == -math.inf
    with pytest.raises(ValueError):
        gb.log_density_unnormalized(_spec(1), [0.5])


def test_exact_distribution_zero_hamiltonian():
    space = gb.DiscreteSpace([0.0, 0.5, 1.0], [0.2, 0.3, 0.5])
    spec = _spec(1, coupling=0.0)
    ex = gb.exact_distribution(spec, space)
    assert ex.log_Z == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(ex.table, np.outer(space.weights, space.weights))


def test_exact_distribution_two_points():
    # N = 2, points {0, 1}: Per of exp(x_i p_j) with p = (0, 1)
    space = gb.DiscreteSpace([0.0, 1.0], [0.5, 0.5])
    ex = gb.exact_distribution(_spec(1), space)
    w = np.array([[2.0, 1 + math.e], [1 + math.e, 2 * math.e]])
    np.testing.assert_allclose(ex.table, w / w.sum())
    np.testing.assert_allclose(ex.marginal(0), ex.marginal(1))


def test_exact_sampler_moments():
    spec = _spec(2)
    draws = gb.sample_permanental_exact(spec, 4000, seed=1)
    # x_j ~ exp(2 x t_j) with t = 0, 1/2, 1 on [0, 1]
    means = [0.5] + [1 / (1 - math.exp(-c)) - 1 / c for c in (1.0, 2.0)]
    assert draws.mean() == pytest.approx(np.mean(means), abs=0.01)


def test_discrete_mcmc_matches_exact():
    space = gb.DiscreteSpace(np.linspace(0, 1, 3), np.full(3, 1 / 3), [0.0, 0.2, 0.1])
    spec = _spec(1, beta=2.0)
    ex = gb.exact_distribution(spec, space)
    res = gb.mcmc_sample(spec, 60000, burn_in=500, seed=2, space=space)
    idx = np.ravel_multi_index(res.samples.T, (3, 3))
    h = np.bincount(idx, minlength=9) / idx.size
    assert 0.5 * np.abs(h - ex.table.ravel()).sum() < 0.02


def test_continuous_mcmc_deterministic_and_inside():
    spec = _spec(2)
    a = gb.mcmc_sample(spec, 3000, burn_in=100, seed=4)
    b = gb.mcmc_sample(spec, 3000, burn_in=100, seed=4)
    np.testing.assert_array_equal(a.samples, b.samples)
    assert a.samples.min() >= 0 and a.samples.max() <= 1
    assert 0.05 < a.acceptance < 0.95


def test_continuous_mcmc_mean_matches_exact_sampler():
    spec = _spec(2)
    res = gb.mcmc_sample(spec, 40000, burn_in=1000, seed=5, thin=10)
    ref = gb.sample_permanental_exact(spec, 20000, seed=6)
    assert res.samples.mean() == pytest.approx(ref.mean(), abs=0.02)


def test_phi_beta_single_particle_closed_form():
    # the cloud of [0, 1/2] is {0}: the potential is -log(int exp(-2 x^2) dx) / 2
    body = ConvexBody.interval(0, 0.5)
    spec = gb.GibbsSpec(body, 1, WeightedMeasure.uniform([0], [1], weight="x**2"), beta=2.0)
    assert spec.N == 1
    est = gb.estimate_phi_beta(spec, np.array([[0.1], [0.6]]), seed=0)
    mass = math.sqrt(math.pi / 8) * math.erf(math.sqrt(2))
    np.testing.assert_allclose(est.value, -math.log(mass) / 2, rtol=1e-10)


def test_phi_beta_tilt_is_a_probability_density():
    spec = _spec(1, weight="x**2")
    X, W = spec.measure.quadrature(order=8, panels=4)
    est = gb.estimate_phi_beta(spec, X, M=4000, seed=1)
    dens = np.exp(spec.beta_N * (est.value - spec.measure.phi0(X))) * spec.measure.rho(X)
    assert np.sum(W * dens) == pytest.approx(1.0, abs=4 * spec.beta_N * est.stderr.max())


def test_transport_map_symmetry_and_range():
    spec = _spec(4)
    q = np.array([[0.2], [0.5], [0.8]])
    est = gb.estimate_transport_map(spec, q, M=400, seed=3)
    v = est.value[:, 0]
    assert np.all((v >= 0) & (v <= 1))
    assert v[0] < v[1] < v[2]
    assert v[0] + v[2] == pytest.approx(1.0, abs=0.05)


def test_transport_map_chain_matches_exact_marginals():
    # the permutation chain and exact marginals agree when forced on a small cloud
    spec = _spec(6)
    q = np.array([[0.3]])
    exact = gb.estimate_transport_map(spec, q, M=600, seed=8)
    chain = gb.estimate_transport_map(spec, q, M=600, seed=8, exact_max_n=2)
    assert chain.value[0, 0] == pytest.approx(exact.value[0, 0], abs=0.02)


def test_one_point_histogram():
    stream = np.array([[[0.1], [0.9]], [[0.2], [0.6]]])
    h = gb.one_point_histogram(stream, np.array([0, 0.5, 1]))
    np.testing.assert_allclose(h.masses, [0.5, 0.5])
    with pytest.raises(ValueError):
        gb.one_point_histogram(np.empty((0, 2, 1)), np.array([0, 1]))


@given(st.floats(-3, 3), st.integers(1, 3))
def test_log_kernel_pure_lattice(x, k):
    spec = _spec(k)
    a = spec.log_kernel(np.full(spec.N, x))
    np.testing.assert_allclose(a[0], x * np.arange(k + 1))
