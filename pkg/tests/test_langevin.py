import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import norm

from permot import gibbs as gb
from permot import langevin as lv
from permot.geometry import ConvexBody
from permot.weights import WeightedMeasure


def _ou(beta=1.0):
    meas = WeightedMeasure.uniform([-6], [6], weight="x**2/2")
    return gb.GibbsSpec(ConvexBody.interval(-0.4, 0.4), 1, meas, beta=beta)


def test_noise_conventions():
    spec = _ou(4.0)
    assert lv.SdeParams(spec, 0.01, 1.0).noise == pytest.approx(math.sqrt(0.5))
    assert lv.SdeParams(spec, 0.01, 1.0, inflated_noise=True).noise == pytest.approx(1.0)
    with pytest.raises(ValueError):
        lv.SdeParams(spec, 0.0, 1.0)


def test_drift_matches_energy_gradient(rng):
    spec = gb.GibbsSpec(ConvexBody.interval(-1, 1), 2, WeightedMeasure.uniform([-2], [2], weight="x**2"))
    x = rng.uniform(-1, 1, (1, spec.N, 1))
    h = 1e-6
    fd = np.empty(spec.N)
    for i in range(spec.N):
        e = np.zeros_like(x)
        e[0, i, 0] = h
        fd[i] = -(lv.hamiltonian_many(spec, x + e)[0] - lv.hamiltonian_many(spec, x - e)[0]) / (2 * h)
    np.testing.assert_allclose(lv.drift_many(spec, x)[0, :, 0], fd, atol=1e-6)


def test_noiseless_ou_decay():
    # the cloud of [-0.4, 0.4] is the origin alone, so the drift is -x
    spec = _ou()
    assert spec.N == 1
    tr = lv.integrate(lv.SdeParams(spec, 1e-3, 1.0, sigma=0.0, replicas=2,
                                   init=np.array([[[3.0]], [[-3.0]]])))
    np.testing.assert_allclose(tr.final[:, 0, 0], [3 * 0.999 ** 1000, -3 * 0.999 ** 1000])
    assert tr.times[-1] == pytest.approx(1.0)


def test_step_size_guard():
    spec = _ou()
    with pytest.raises(lv.StepSizeError):
        lv.integrate(lv.SdeParams(spec, 2.0, 4.0, init=np.array([[5.0]])))


def test_replicas_deterministic():
    spec = _ou()
    p = lv.SdeParams(spec, 1e-2, 0.5, seed=3, replicas=5, record_every=10)
    a, b = lv.integrate(p), lv.integrate(p)
    np.testing.assert_array_equal(a.paths, b.paths)
    assert a.paths.shape == (5, 6, spec.N, 1)


@given(st.floats(-50, 50))
def test_fold_lands_in_window(x):
    y = lv._fold(np.array([x]), np.array([-1.0]), np.array([2.0]))
    assert -1 - 1e-12 <= y[0] <= 2 + 1e-12
    if -1 <= x <= 2:
        assert y[0] == pytest.approx(x)


def test_stationarity_small_instance():
    rep = lv.stationarity_check(lv.SdeParams(_ou(), 2e-3, 40, seed=1, replicas=100, record_every=50),
                                5, np.linspace(-4, 4, 17))
    assert rep.tv < 0.05
    # exp(-x^2/2) on [-6, 6] is a standard normal up to 2e-9 of truncated mass
    edges = np.linspace(-4, 4, 17)
    np.testing.assert_allclose(rep.reference, np.diff(norm.cdf(edges)), atol=5e-5)  # 401-node rule
