import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from permot import permanent as pm
from permot.geometry import ConvexBody, lattice_points

# derangement numbers: Per(J - I)
DERANGEMENTS = {2: 1, 3: 2, 4: 9, 5: 44, 6: 265, 7: 1854}


@pytest.mark.parametrize("method", ["glynn", "ryser"])
@pytest.mark.parametrize("n", [1, 3, 6, 9])
def test_all_ones(method, n):
    assert pm.log_permanent(np.zeros((n, n)), method=method) == pytest.approx(math.lgamma(n + 1))


@pytest.mark.parametrize("n", sorted(DERANGEMENTS))
def test_derangements(n):
    a = -700.0 * np.eye(n)  # e^-700 stands in for the zero diagonal
    assert pm.log_permanent(a) == pytest.approx(math.log(DERANGEMENTS[n]), rel=1e-12)


def test_two_by_two():
    A = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert math.exp(pm.log_permanent(np.log(A))) == pytest.approx(1 * 4 + 2 * 3)


def test_large_magnitudes():
    rng = np.random.default_rng(0)
    a = rng.uniform(-60, 60, (8, 8))
    assert pm.log_permanent(a) == pytest.approx(pm.log_permanent_exact(a), rel=1e-12)


def test_cancellation_is_reported():
    # one dominant permutation beyond what balancing can equalize
    a = np.random.default_rng(0).uniform(-800, 800, (7, 7))
    with pytest.raises(pm.PrecisionLossError):
        pm.log_permanent(a)
    assert np.isfinite(pm.log_permanent_exact(a))


def test_marginals_match_enumeration(rng):
    a = rng.normal(size=(5, 5))
    M = pm.marginal_matrix(a)
    np.testing.assert_allclose(M, pm.marginal_matrix_exact(a), atol=1e-12)
    np.testing.assert_allclose(M.sum(0), 1, atol=1e-12)


def test_batch_agrees(rng):
    As = rng.normal(size=(4, 6, 6))
    np.testing.assert_allclose(pm.log_permanent_batch(As),
                               [pm.log_permanent_exact(a) for a in As], rtol=1e-12)
    lp, M = pm.batched_log_permanent_small(As)
    np.testing.assert_allclose(lp, [pm.log_permanent_exact(a) for a in As], rtol=1e-12)


def test_size_limit():
    with pytest.raises(pm.SizeError):
        pm.marginal_matrix(np.zeros((20, 20)), max_n=14)


def test_sandwich_and_lipschitz():
    cloud = lattice_points(ConvexBody.interval(-1, 1), 2)
    lo, val, hi = pm.sandwich_bounds(np.array([0.3, -0.7, 0.1, 0.9, -0.2]), cloud)
    assert lo <= val <= hi
    assert pm.lipschitz_constant(cloud) > 0


small = st.integers(1, 6).flatmap(
    lambda n: st.lists(st.floats(-20, 20), min_size=n * n, max_size=n * n).map(
        lambda v: np.array(v).reshape(n, n)))


@given(small, st.randoms(use_true_random=False))
def test_permutation_invariance(a, r):
    n = a.shape[0]
    p, q = list(range(n)), list(range(n))
    r.shuffle(p)
    r.shuffle(q)
    ref = pm.log_permanent(a)
    assert pm.log_permanent(a[p][:, q]) == pytest.approx(ref, abs=1e-9 * max(1, abs(ref)))
    assert pm.log_permanent(a.T) == pytest.approx(ref, abs=1e-9 * max(1, abs(ref)))


@given(small, st.floats(-10, 10))
def test_row_scaling_adds_log(a, c):
    b = a.copy()
    b[0] += c
    ref = pm.log_permanent(a)
    assert pm.log_permanent(b) == pytest.approx(ref + c, abs=1e-9 * max(1, abs(ref)))


@given(small)
def test_marginals_doubly_stochastic(a):
    M = pm.marginal_matrix(a)
    assert np.all(M >= -1e-12)
    np.testing.assert_allclose(M.sum(0), 1, atol=1e-9)
    np.testing.assert_allclose(M.sum(1), 1, atol=1e-9)


def test_exact_matches_brute_force(rng):
    A = rng.uniform(0.1, 2, (4, 4))
    ref = sum(np.prod([A[i, s[i]] for i in range(4)]) for s in itertools.permutations(range(4)))
    assert math.exp(pm.log_permanent_exact(np.log(A))) == pytest.approx(ref)
