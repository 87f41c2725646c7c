import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from infhorizon.convex_geom import (CoordinateCone, FullSpace, PointCloud, Polyhedral, ZeroCone,
                                    cone_from_dict, cone_plus_hull_membership, convex_hull_2d,
                                    hull_distance, hull_of, normal_cone)
from infhorizon.errors import NoConvergenceError, NonFiniteError, PointNotInSetError
from infhorizon.sets import Box, HalfLine, Point, WholeSpace


def circle_cloud(n=256, seed=0):
    th = np.random.default_rng(seed).uniform(0, 2 * math.pi, n)
    return PointCloud(np.column_stack([np.sin(th), 1 - np.cos(th)]))


CIRCLE = circle_cloud()


def test_single_point_hull():
    h = convex_hull_2d(PointCloud([[1.0, 2.0]]))
    assert h.vertices2d.tolist() == [[1.0, 2.0]]


def test_duplicates_collapse():
    h = convex_hull_2d(PointCloud([[1.0, 2.0], [1.0, 2.0 + 1e-14]]))
    assert len(h.vertices2d) == 1


def test_square_with_center():
    pts = [[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5]]
    h = convex_hull_2d(PointCloud(pts))
    assert len(h.vertices2d) == 4
    assert [0.5, 0.5] not in h.vertices2d.tolist()


def test_circle_hull_ccw_convex():
    h = convex_hull_2d(CIRCLE)
    V = h.vertices2d
    r = np.linalg.norm(V - [0, 1], axis=1)
    assert np.max(np.abs(r - 1)) < 1e-3
    e1 = np.roll(V, -1, axis=0) - V
    e2 = np.roll(V, -2, axis=0) - np.roll(V, -1, axis=0)
    assert np.all(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0] > 0)
    assert all(h.contains(g, 1e-9) for g in CIRCLE.points[:40])


def test_distance_to_generator():
    d, w = hull_distance(CIRCLE.points[7], CIRCLE)
    assert d < 1e-12
    assert w[7] == pytest.approx(1.0)


def test_distance_to_disk():
    d, w = hull_distance([0.0, 2.2], CIRCLE, 1e-9)
    assert abs(d - 0.2) < 1e-3
    assert w.sum() == pytest.approx(1.0) and np.all(w >= 0)


def test_centroid_inside():
    d, _ = hull_distance(CIRCLE.points.mean(axis=0), CIRCLE, 1e-9)
    assert d < 1e-9


def test_nonfinite_cloud():
    with pytest.raises(NonFiniteError):
        PointCloud([[0.0, np.nan]])


def test_higher_dimension_distance():
    cube = PointCloud(np.array(np.meshgrid([0, 1], [0, 1], [0, 1], [0, 1])).reshape(4, -1).T)
    d, _ = hull_distance([2.0, 0.5, 0.5, 0.5], cube, 1e-9)
    assert d == pytest.approx(1.0, abs=1e-6)
    assert hull_of(cube).vertices2d is None


def test_normal_cones():
    assert isinstance(normal_cone(WholeSpace(2), [3.0, -1.0]), ZeroCone)
    half = normal_cone(HalfLine([1.0]), [1.0])
    assert half.contains([-2.0]) and not half.contains([0.5])
    assert isinstance(normal_cone(HalfLine([1.0]), [2.0]), ZeroCone)
    box = normal_cone(Box([0.0, 0.0], [1.0, 1.0]), [1.0, 0.5])
    assert box.signs == ("nonneg", "zero")
    assert box.rays().tolist() == [[1.0, 0.0]]
    assert isinstance(normal_cone(Point([1.0, 2.0]), [1.0, 2.0]), FullSpace)
    with pytest.raises(PointNotInSetError):
        normal_cone(Box([0.0], [1.0]), [2.0])


def test_box_cone_against_sampled_normals():
    """Every direction v with <v, z - x> <= 0 for sampled z in the box lies in the cone."""
    rng = np.random.default_rng(1)
    box = Box([0.0, 0.0], [1.0, 1.0])
    x = np.array([1.0, 0.5])
    cone = normal_cone(box, x)
    Z = rng.uniform(0, 1, (2000, 2))
    for v in rng.normal(size=(200, 2)):
        is_normal = np.all((Z - x) @ v <= 1e-12)
        assert is_normal == cone.contains(v, 1e-9) or np.linalg.norm(cone.project(v) - v) < 1e-2


@pytest.mark.parametrize("cone", [ZeroCone(2), FullSpace(2), CoordinateCone(("nonneg", "free")),
                                  Polyhedral(np.array([[1.0, 1.0], [1.0, -1.0]]))])
def test_cone_projection_properties(cone):
    rng = np.random.default_rng(2)
    for _ in range(50):
        a, b = rng.normal(size=2) * 3, rng.normal(size=2) * 3
        pa = cone.project(a)
        assert np.allclose(cone.project(pa), pa, atol=1e-10)
        assert np.linalg.norm(pa - cone.project(b)) <= np.linalg.norm(a - b) + 1e-10
    assert cone_from_dict(cone.to_dict()).to_dict() == cone.to_dict()


def test_membership_zero_cone_matches_distance():
    p = [0.0, 2.2]
    res = cone_plus_hull_membership(p, ZeroCone(2), CIRCLE, 5e-2)
    d, _ = hull_distance(p, CIRCLE, 1e-9)
    assert not res.member and abs(res.gap - d) < 1e-6


@pytest.mark.parametrize("norm,member", [(0.9, True), (1.1, False)])
def test_disk_membership(norm, member):
    C = norm * np.array([0.6, 0.8])
    res = cone_plus_hull_membership(np.array([0.0, 1.0]) - C, ZeroCone(2), CIRCLE, 5e-2)
    assert res.member is member
    if not member:
        assert abs(res.gap - 0.1) < 1e-2
        assert res.certificate is None
    else:
        nu, w = res.certificate
        assert np.allclose(nu, 0)


def test_membership_with_cone():
    cloud = PointCloud([[0.0]])
    half = CoordinateCone(("nonpos",))
    assert cone_plus_hull_membership([-3.0], half, cloud, 1e-6).member
    assert not cone_plus_hull_membership([0.5], half, cloud, 1e-6).member


_pt = st.tuples(st.floats(-3, 3), st.floats(-3, 3))


@settings(max_examples=60, deadline=None)
@given(_pt, _pt)
def test_hull_distance_lipschitz(a, b):
    da, _ = hull_distance(a, CIRCLE, 1e-10)
    db, _ = hull_distance(b, CIRCLE, 1e-10)
    assert abs(da - db) <= np.linalg.norm(np.subtract(a, b)) + 1e-6


@settings(max_examples=60, deadline=None)
@given(_pt, st.floats(1e-3, 0.5), st.floats(1.0, 4.0))
def test_membership_monotone_in_tol(p, tol, factor):
    if cone_plus_hull_membership(p, ZeroCone(2), CIRCLE, tol).member:
        assert cone_plus_hull_membership(p, ZeroCone(2), CIRCLE, tol * factor).member


def _in_polygon(p, V):
    e = np.roll(V, -1, axis=0) - V
    r = p - V
    return bool(np.all(e[:, 0] * r[:, 1] - e[:, 1] * r[:, 0] >= 0))


@settings(max_examples=100, deadline=None)
@given(_pt)
def test_membership_agrees_with_polygon(p):
    tol = 5e-2
    V = convex_hull_2d(CIRCLE).vertices2d
    d, _ = hull_distance(p, CIRCLE, 1e-10)
    inside = _in_polygon(np.array(p), V)
    if d >= 2 * tol or (inside and d == 0 and np.min(np.abs(np.linalg.norm(np.array(p) - [0, 1]) - 1)) > 2 * tol):
        assert cone_plus_hull_membership(p, ZeroCone(2), CIRCLE, tol).member == inside


@settings(max_examples=40, deadline=None)
@given(_pt, st.sampled_from(["nonneg", "nonpos", "zero", "free"]))
def test_alternating_gap_non_increasing(p, sign):
    cone = CoordinateCone((sign, "zero"))
    try:
        history = cone_plus_hull_membership(p, cone, CIRCLE, 1e-3, max_iter=200).history
    except NoConvergenceError as exc:
        # tangential contact converges sublinearly; the gaps must still decrease
        history = exc.history
    h = np.asarray(history, dtype=float)
    assert np.all(np.diff(h) <= 1e-12)
