import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from permot.geometry import (ConvexBody, EmptyCloudError, GeometryError, barycenter, contains,
                             invariant_R, lattice_csv_rows, lattice_points, support_function,
                             support_function_many, volume)

TRIANGLE = ConvexBody(2, [[0, 0], [1, 0], [0, 1]])
SQUARE = ConvexBody.box([0, 0], [1, 1])


@pytest.mark.parametrize("k", [1, 2, 3, 7])
def test_lattice_counts(k):
    assert lattice_points(ConvexBody.interval(0, 1), k).N == k + 1
    assert lattice_points(SQUARE, k).N == (k + 1) ** 2
    # Ehrhart polynomial of the standard triangle
    assert lattice_points(TRIANGLE, k).N == (k + 1) * (k + 2) // 2


def test_lattice_order_and_csv():
    cloud = lattice_points(TRIANGLE, 2)
    assert cloud.points.tolist() == [[0, 0], [0, 1], [0, 2], [1, 0], [1, 1], [2, 0]]
    header, rows = lattice_csv_rows(cloud)
    assert header == ["index", "p_1", "p_2"]
    assert rows[1] == [1, 0, 1]


def test_empty_cloud():
    with pytest.raises(EmptyCloudError):
        lattice_points(ConvexBody.interval(0.2, 0.4), 1)
    with pytest.raises(GeometryError):
        lattice_points(SQUARE, 0)


def test_bad_descriptions():
    with pytest.raises(GeometryError):
        ConvexBody(4, [[0, 0, 0, 0]])
    with pytest.raises(GeometryError):
        ConvexBody(2)
    with pytest.raises(GeometryError):
        ConvexBody(2, [[0, 0], [1, 0], [0, 1]], [[1, 0, 2], [0, 1, 2], [-1, -1, 0]])


def test_halfspace_description_matches_vertices():
    H = [[1, 0, 1], [-1, 0, 0], [0, 1, 1], [0, -1, 0]]
    b = ConvexBody(2, halfspaces=H)
    assert volume(b) == pytest.approx(1.0)
    assert sorted(map(tuple, b.vertices.tolist())) == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_support_volume_barycenter():
    assert support_function(TRIANGLE, [1, 2]) == 2
    assert support_function(SQUARE, [-1, 1]) == 1
    assert volume(TRIANGLE) == pytest.approx(0.5)
    assert volume(ConvexBody.interval(-1, 2)) == 3
    np.testing.assert_allclose(barycenter(TRIANGLE), [1 / 3, 1 / 3])
    assert contains(TRIANGLE, [0.5, 0.5]) and not contains(TRIANGLE, [0.6, 0.5])


def test_invariant_R():
    assert invariant_R(ConvexBody.box([-1, -1], [1, 1])) == 1.0
    # interval [-1, 2]: barycenter 1/2, ray through the origin exits at -1
    assert invariant_R(ConvexBody.interval(-1, 2)) == pytest.approx(1 / 1.5)
    with pytest.raises(GeometryError):
        invariant_R(TRIANGLE)


def test_round_trip_dict():
    b = ConvexBody.from_dict(TRIANGLE.to_dict())
    np.testing.assert_allclose(b.vertices, TRIANGLE.vertices)


vecs = st.lists(st.floats(-5, 5), min_size=2, max_size=2)


@given(vecs, vecs, st.floats(0, 4))
def test_support_function_sublinear(x, y, t):
    x, y = np.array(x), np.array(y)
    h = lambda v: support_function(TRIANGLE, v)
    assert h(x + y) <= h(x) + h(y) + 1e-9
    assert h(t * x) == pytest.approx(t * h(x), abs=1e-9)
    assert support_function_many(TRIANGLE, np.stack([x, y]))[0] == pytest.approx(h(x))


@given(st.integers(1, 6))
def test_lattice_points_lie_in_kP(k):
    cloud = lattice_points(TRIANGLE, k)
    assert all(contains(TRIANGLE, p) for p in cloud.scaled)
    assert math.isclose(cloud.scaled.max(), 1.0)


@given(st.lists(st.floats(0.1, 1), min_size=1, max_size=3), st.integers(1, 12))
def test_box_lattice_density(sides, k):
    # the absolute 3n/k bound is for boxes of side at most one
    n = len(sides)
    box = ConvexBody.box([0] * n, sides)
    assert abs(lattice_points(box, k).N / k ** n - volume(box)) <= 3 * n / k
