import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ringpot.geometry import (ConvexRing, ConvexShape, ShapeError, convex_hull_points,
                              diameter, points_in_convex_polygon, polygon_area,
                              ring_from_json, ring_to_json, separation, validate_shapes)

UNIT_SQUARE = [[0, 0], [1, 0], [1, 1], [0, 1]]


def disk_point_ring():
    return ConvexRing(outer=ConvexShape.disk((0, 0), 1.0), inner=ConvexShape.point((0, 0)))


class TestShapes:
    def test_disk_requires_positive_radius(self):
        with pytest.raises(ShapeError):
            ConvexShape.disk((0, 0), 0.0)

    def test_polygon_rejects_reflex_vertex(self):
        with pytest.raises(ShapeError):
            ConvexShape.polygon([[0, 0], [2, 0], [1, 0.5], [2, 2], [0, 2]])

    def test_polygon_rejects_repeats_and_collinear(self):
        with pytest.raises(ShapeError):
            ConvexShape.polygon([[0, 0], [1, 0], [1, 0], [0, 1]])
        with pytest.raises(ShapeError):
            ConvexShape.polygon([[0, 0], [1, 0], [2, 0], [1, 1]])

    def test_clockwise_polygon_normalized_to_ccw(self):
        poly = ConvexShape.polygon([[0, 0], [0, 1], [1, 1], [1, 0]])
        assert polygon_area(poly.vertices) > 0

    def test_outer_point_rejected(self):
        with pytest.raises(ShapeError):
            ConvexRing(outer=ConvexShape.point((0, 0)), inner=ConvexShape.point((0, 0)))


class TestContains:
    def test_ring_classifications(self):
        ring = disk_point_ring()
        assert ring.contains((0.5, 0.0)) == "in_ring"
        assert ring.contains((0.0, 0.0)) == "in_inner"
        assert ring.contains((2.0, 0.0)) == "outside_outer"
        assert ring.contains((1.0, 0.0)) == "on_boundary"

    def test_consistent_with_outer_distance(self):
        ring = disk_point_ring()
        g = np.random.default_rng(3)
        for _ in range(200):
            x = g.uniform(-1.2, 1.2, size=2)
            if ring.contains(x) == "in_ring":
                assert ring.dist_to_outer(x) > 0


class TestDistances:
    def test_disk_distance(self):
        ring = disk_point_ring()
        assert ring.dist_to_outer((0.5, 0.0)) == pytest.approx(0.5)

    def test_square_distance(self):
        ring = ConvexRing(outer=ConvexShape.polygon(UNIT_SQUARE),
                          inner=ConvexShape.point((0.5, 0.5)))
        assert ring.dist_to_outer((0.5, 0.25)) == pytest.approx(0.25)
        assert ring.dist_to_outer((0.5, 0.5)) == pytest.approx(0.5)

    def test_outside_point_rejected(self):
        ring = disk_point_ring()
        with pytest.raises(ShapeError):
            ring.dist_to_outer((2.0, 0.0))

    def test_diameter(self):
        assert diameter(ConvexShape.disk((3, 1), 1.0)) == pytest.approx(2.0)
        assert diameter(ConvexShape.polygon(UNIT_SQUARE)) == pytest.approx(math.sqrt(2))
        with pytest.raises(ShapeError):
            diameter(ConvexShape.point((0, 0)))


class TestRays:
    def test_disk_rays(self):
        ring = disk_point_ring()
        hit = ring.ray_to_outer((0.5, 0.0), (1.0, 0.0))
        assert hit.length == pytest.approx(0.5)
        assert hit.hit_point == pytest.approx([1.0, 0.0])
        hit = ring.ray_to_outer((0.5, 0.0), (-1.0, 0.0))
        assert hit.length == pytest.approx(1.5)
        assert hit.hit_point == pytest.approx([-1.0, 0.0])

    def test_square_ray(self):
        ring = ConvexRing(outer=ConvexShape.polygon(UNIT_SQUARE),
                          inner=ConvexShape.point((0.25, 0.25)))
        hit = ring.ray_to_outer((0.5, 0.5), (0.0, 1.0))
        assert hit.length == pytest.approx(0.5)
        assert hit.hit_point == pytest.approx([0.5, 1.0])

    def test_ray_preconditions(self):
        ring = disk_point_ring()
        with pytest.raises(ShapeError):
            ring.ray_to_outer((2.0, 0.0), (1.0, 0.0))
        with pytest.raises(ShapeError):
            ring.ray_to_outer((0.5, 0.0), (1.0, 1.0))

    def test_ray_bounds_invariant(self):
        # dist <= ray length <= diameter, and the hit lands on the boundary
        for ring in (disk_point_ring(),
                     ConvexRing(outer=ConvexShape.polygon([[0, 0], [2, 0], [2.5, 1], [1, 2], [-0.5, 1]]),
                                inner=ConvexShape.point((1.0, 0.8)))):
            diam = diameter(ring.outer)
            g = np.random.default_rng(11)
            n_done = 0
            while n_done < 300:
                x = g.uniform(-0.5, 2.5, size=2)
                if ring.contains(x) != "in_ring":
                    continue
                th = g.uniform(0, 2 * math.pi)
                nu = np.array([math.cos(th), math.sin(th)])
                hit = ring.ray_to_outer(x, nu)
                d = ring.dist_to_outer(x)
                assert d - 1e-12 <= hit.length <= diam + 1e-12
                assert abs(ring.outer.signed_distance(hit.hit_point)) <= 1e-9 * diam
                n_done += 1


class TestValidation:
    def test_valid_ring(self):
        rep = disk_point_ring().validate()
        assert rep.passed
        assert rep.details["separation"] == pytest.approx(1.0)

    def test_touching_inner_fails(self):
        outer = ConvexShape.polygon(UNIT_SQUARE)
        inner = ConvexShape.polygon([[0.4, 0.4], [1.0, 0.4], [1.0, 0.9], [0.4, 0.9]])
        rep = validate_shapes(outer, inner)
        assert not rep.passed
        assert rep.details["separation"] <= 0

    def test_construction_rejects_touching(self):
        with pytest.raises(ShapeError):
            ConvexRing(outer=ConvexShape.disk((0, 0), 1.0),
                       inner=ConvexShape.disk((0.5, 0), 0.5))

    def test_separation_polygon_pair(self):
        outer = ConvexShape.polygon(UNIT_SQUARE)
        inner = ConvexShape.polygon([[0.4, 0.4], [0.6, 0.4], [0.6, 0.6], [0.4, 0.6]])
        assert separation(outer, inner) == pytest.approx(0.4)


@settings(max_examples=40, deadline=None)
@given(cx=st.floats(-2, 2), cy=st.floats(-2, 2), r=st.floats(0.1, 3))
def test_midpoint_convexity_disk(cx, cy, r):
    shape = ConvexShape.disk((cx, cy), r)
    g = np.random.default_rng(7)
    ang = g.uniform(0, 2 * math.pi, size=(50, 2))
    rad = np.sqrt(g.uniform(0, 1, size=(50, 2))) * r
    a = np.stack([cx + rad[:, 0] * np.cos(ang[:, 0]), cy + rad[:, 0] * np.sin(ang[:, 0])], axis=1)
    b = np.stack([cx + rad[:, 1] * np.cos(ang[:, 1]), cy + rad[:, 1] * np.sin(ang[:, 1])], axis=1)
    mids = 0.5 * (a + b)
    assert np.all(shape.signed_distance(mids) <= 1e-12)


def test_midpoint_convexity_polygon():
    shape = ConvexShape.polygon([[0, 0], [2, 0], [2.5, 1], [1, 2], [-0.5, 1]])
    g = np.random.default_rng(13)
    pts = []
    while len(pts) < 2000:
        x = g.uniform(-0.5, 2.5, size=2)
        if shape.signed_distance(x) < 0:
            pts.append(x)
    pts = np.array(pts)
    mids = 0.5 * (pts[:1000] + pts[1000:])
    assert np.all(shape.signed_distance(mids) <= 1e-12)


class TestHullUtilities:
    def test_hull_of_square_cloud(self):
        g = np.random.default_rng(5)
        pts = g.uniform(0, 1, size=(500, 2))
        corners = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
        hull = convex_hull_points(np.concatenate([pts, corners]))
        assert abs(polygon_area(hull)) == pytest.approx(1.0, abs=1e-12)
        assert np.all(points_in_convex_polygon(pts, hull, tol=1e-12))


class TestRingFiles:
    def test_round_trip(self, tmp_path):
        ring = ConvexRing(outer=ConvexShape.polygon(UNIT_SQUARE),
                          inner=ConvexShape.disk((0.5, 0.5), 0.125))
        text = ring_to_json(ring)
        back = ring_from_json(text)
        assert back.outer.kind == "polygon"
        np.testing.assert_array_equal(back.outer.vertices, ring.outer.vertices)
        assert back.inner.radius == ring.inner.radius

    def test_exact_field_names(self):
        ring = disk_point_ring()
        obj = json.loads(ring_to_json(ring))
        assert set(obj) == {"outer", "inner"}
        assert obj["outer"] == {"disk": {"center": [0.0, 0.0], "radius": 1.0}}
        assert obj["inner"] == {"point": [0.0, 0.0]}

    def test_malformed_rejected(self):
        with pytest.raises((ShapeError, KeyError)):
            ring_from_json('{"outer": {"blob": 3}, "inner": {"point": [0,0]}}')
