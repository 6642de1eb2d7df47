import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from permot import assignment as asg
from permot.geometry import ConvexBody, lattice_points


def test_small_example():
    r = asg.min_cost_assignment([[4, 1, 3], [2, 0, 5], [3, 2, 2]])
    assert r.total == 5
    assert r.sigma_one_based == (2, 1, 3)
    assert r.normalized == pytest.approx(5 / 3)


def test_identity_assignment():
    r = asg.min_cost_assignment(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert r.sigma_one_based == (1, 2) and r.normalized == 0.0


def test_lp_value_and_plan(rng):
    c = rng.normal(size=(5, 5))
    val, G = asg.kantorovich_lp(c)
    assert val == pytest.approx(asg.brute_force_assignment(c).normalized, abs=1e-10)
    np.testing.assert_allclose(G.sum(0), 1 / 5, atol=1e-9)


mats = st.integers(1, 6).flatmap(lambda n: arrays(float, (n, n), elements=st.floats(-10, 10)))


@given(mats)
def test_matches_brute_force(c):
    assert asg.min_cost_assignment(c).total == pytest.approx(
        asg.brute_force_assignment(c).total, abs=1e-9)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8).flatmap(
    lambda x: st.tuples(st.just(x), st.lists(st.floats(-5, 5), min_size=len(x), max_size=len(x)))))
def test_w1_is_sorted_matching_in_1d(pair):
    x, y = (np.array(v)[:, None] for v in pair)
    ref = np.mean(np.abs(np.sort(x[:, 0]) - np.sort(y[:, 0])))
    assert asg.wasserstein1(x, y) == pytest.approx(ref, abs=1e-9)


@given(arrays(float, (5, 2), elements=st.floats(-3, 3)),
       arrays(float, (5, 2), elements=st.floats(-3, 3)),
       arrays(float, (5, 2), elements=st.floats(-3, 3)))
def test_w1_metric(a, b, c):
    d = asg.wasserstein1
    assert d(a, a) == pytest.approx(0, abs=1e-12)
    assert d(a, b) == pytest.approx(d(b, a), abs=1e-9)
    assert d(a, c) <= d(a, b) + d(b, c) + 1e-9


def test_atoms_merge_repeats():
    atoms, mass = asg.EmpiricalMeasure(np.array([[0.0], [1.0], [0.0]])).atoms()
    assert atoms[:, 0].tolist() == [0.0, 1.0]
    np.testing.assert_allclose(mass, [2 / 3, 1 / 3])


def test_semidiscrete_cost_is_anti_sorted_pairing(rng):
    # -x.p is minimized by pairing sorted samples with sorted points
    cloud = lattice_points(ConvexBody.interval(0, 1), 4)
    x = rng.uniform(0, 1, cloud.N)
    ref = -np.mean(np.sort(x) * np.sort(cloud.scaled[:, 0]))
    assert asg.semidiscrete_cost(x[:, None], cloud) == pytest.approx(ref)
    with pytest.raises(ValueError):
        asg.semidiscrete_cost(x[:3, None], cloud)
