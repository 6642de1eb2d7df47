import numpy as np
import pytest
from hypothesis import given, strategies as st

from permot import convexcalc as cc
from permot.geometry import ConvexBody, volume

UNIT = ConvexBody.interval(-1, 1)


def _env_of_square_ref(x):
    # largest convex minorant of x^2 with slopes in [-1, 1]
    return np.where(np.abs(x) <= 0.5, x ** 2, np.abs(x) - 0.25)


def test_envelope_of_square():
    g = cc.Grid(-3, 3, 1201)
    env = cc.envelope(cc.GridFunction.sample(lambda X: X[:, 0] ** 2, g), UNIT)
    x = g.axes[0]
    np.testing.assert_allclose(env.flat, _env_of_square_ref(x), atol=2 * g.spacing[0])
    assert float(np.interp(1.0, x, env.flat)) == pytest.approx(0.75, abs=1e-2)
    contact = cc.incidence_set(cc.GridFunction.sample(lambda X: X[:, 0] ** 2, g), env)
    assert np.all(np.abs(x[contact]) <= 0.5 + 1e-9)


def test_envelope_of_two_point_weight():
    # phi0 = 0 at +-1 and +inf elsewhere on the nodes: envelope is |x| - 1 clipped by slopes
    g = cc.Grid(-1, 1, 3)
    env = cc.envelope(cc.GridFunction(g, [1.0, 5.0, 1.0]), UNIT)
    np.testing.assert_allclose(env.flat, [1.0, 1.0, 1.0])


def test_legendre_of_half_square():
    g = cc.Grid(-4, 4, 4001)
    pg = cc.Grid(-1, 1, 101)
    f = cc.legendre(cc.GridFunction.sample(lambda X: 0.5 * X[:, 0] ** 2, g), pg)
    np.testing.assert_allclose(f.flat, 0.5 * pg.axes[0] ** 2, atol=1e-5)


def test_certify_rejects_concave():
    g = cc.Grid(-1, 1, 11)
    with pytest.raises(cc.NotConvexError):
        cc.certify_convex(cc.GridFunction.sample(lambda X: -X[:, 0] ** 2, g))
    with pytest.raises(cc.NotConvexError):
        cc.ma_node_masses(cc.GridFunction.sample(lambda X: -X[:, 0] ** 2, g))


def test_ma_masses_1d():
    g = cc.Grid(-1, 1, 5)
    m = cc.ma_node_masses(cc.GridFunction(g, np.abs(g.axes[0]), boundary_slopes=(-1, 1)))
    np.testing.assert_allclose(m.masses, [0, 0, 2, 0, 0])
    assert m.total == pytest.approx(volume(UNIT))


def test_ma_mass_2d_disk_slopes():
    # the subdifferential of |x| at the origin is the unit disk
    g = cc.Grid((-1, -1), (1, 1), (41, 41))
    f = cc.GridFunction.sample(lambda X: np.sqrt((X ** 2).sum(1)), g)
    box = ConvexBody.box([-1, -1], [1, 1])
    m = cc.ma_node_masses(f, box)
    centre = np.argmin((g.points() ** 2).sum(1))
    assert m.masses[centre] == pytest.approx(np.pi, rel=0.01)
    assert m.total == pytest.approx(volume(box), rel=0.01)


def test_worked_comparison_pair():
    g = cc.Grid.cell_centered(-1, 1, 100)
    x = g.axes[0]
    r = cc.check_comparison(cc.GridFunction(g, x ** 2 / 2, boundary_slopes=(-1, 1)),
                            cc.GridFunction(g, 0.3 * np.abs(x), boundary_slopes=(-1, 1)), UNIT)
    assert r.lhs == pytest.approx(0.6, abs=1e-12)
    assert r.rhs == pytest.approx(1.2, abs=1e-12)
    assert r.holds


def test_comparison_needs_full_mass():
    g = cc.Grid(-1, 1, 21)
    u = cc.GridFunction(g, 0.05 * g.axes[0] ** 2, boundary_slopes=(-0.1, 0.1))
    with pytest.raises(cc.MassDeficitError):
        cc.check_comparison(u, u, UNIT)


def test_energy_of_zero_function():
    # f = 0 on [-1, 1] has f*(p) = |p|, whose mean over P is 1/2
    g = cc.Grid(-1, 1, 201)
    e = cc.energy(cc.GridFunction(g, np.zeros(201)), UNIT)
    assert e == pytest.approx(-0.5, abs=1e-2)


@given(st.floats(0.2, 3), st.floats(-1, 1), st.floats(-2, 2))
def test_envelope_is_below_and_convex(a, b, c):
    g = cc.Grid(-2, 2, 401)
    f = cc.GridFunction.sample(lambda X: a * X[:, 0] ** 2 + np.cos(3 * X[:, 0]) * b + c, g)
    env = cc.envelope(f, UNIT)
    assert np.all(env.flat <= f.flat + 1e-9)
    s = np.diff(env.flat) / g.spacing[0]
    assert np.all(np.diff(s) >= -1e-6)
    assert s.min() >= -1 - 1e-6 and s.max() <= 1 + 1e-6


def test_growth_margin():
    g = cc.Grid(-3, 3, 601)
    f = cc.GridFunction.sample(lambda X: X[:, 0] ** 2, g)
    # x^2 - |x| has minimum -1/4 and value 6 at |x| = 3
    r = cc.growth_margin(f, UNIT, required=1.0)
    assert r.margin == pytest.approx(6.25) and r.ok
    narrow = cc.GridFunction.sample(lambda X: X[:, 0] ** 2, cc.Grid(-0.4, 0.4, 81))
    assert not cc.growth_margin(narrow, UNIT, required=0.1).ok
