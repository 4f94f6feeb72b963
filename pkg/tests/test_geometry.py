import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ufem.geometry import (
    CircularArc, DegenerateGeometryError, GeometryError, LineSegment, PiecewiseCurve,
    QuadraticBezier, chord_deviation, circle_curve, classify_point, edge_intersections,
    five_star_curve, lens_curve, polygon_curve, read_curve_file, rhombus_curve,
    smoothed_rhombus_curve, write_curve_file,
)


def winding_number(poly, p):
    """Independent oracle: winding number of a closed polyline around p."""
    d = poly - np.asarray(p)
    ang = np.arctan2(d[:, 1], d[:, 0])
    dif = np.diff(np.concatenate([ang, ang[:1]]))
    dif = (dif + np.pi) % (2 * np.pi) - np.pi
    return int(round(dif.sum() / (2 * np.pi)))


def dense_star(n=20000):
    th = np.linspace(np.pi / 10, np.pi / 10 + 2 * np.pi, n, endpoint=False)
    j = np.floor((th - np.pi / 10) / (2 * np.pi / 5))
    c = 3 * np.pi / 10 + 2 * np.pi * j / 5
    r = 2 * (th - c) ** 2 + 4 / 9
    return np.stack([r * np.cos(th), r * np.sin(th)], axis=1)


def test_unit_circle_classify():
    c = circle_curve(radius=1.0)
    assert classify_point(c, (0, 0)) == "inside"
    assert classify_point(c, (2, 0)) == "outside"
    assert classify_point(c, (1.0, 0.0)) == "on-curve"


def test_star_classify_matches_winding_oracle():
    star = five_star_curve()
    poly = dense_star()
    assert classify_point(star, (0, 0)) == "inside"
    rng = np.random.default_rng(3)
    pts = rng.uniform(-2, 2, size=(400, 2))
    for p in pts:
        w = winding_number(poly, p)
        # skip points too close to the curve for the polyline oracle
        if np.min(np.hypot(*(poly - p).T)) < 1e-3:
            continue
        got = classify_point(star, p)
        assert got == ("inside" if w != 0 else "outside"), p


def test_open_curve_classify_is_usage_error():
    with pytest.raises(GeometryError):
        classify_point(polygon_curve([(0, 0), (1, 1)], closed=False), (0.5, 0))


def test_circle_edge_intersection():
    arc = CircularArc((0, 0), 0.5, 0.0, math.pi)
    hits = edge_intersections(arc, ((0.3, 0.0), (0.3, 1.0)))
    assert len(hits) == 1
    np.testing.assert_allclose(hits[0][1], [0.3, 0.4], atol=1e-14)


def test_line_edge_intersection():
    hits = edge_intersections(LineSegment((0, 0), (1, 1)), ((0, 0.5), (1, 0.5)))
    assert len(hits) == 1
    np.testing.assert_allclose(hits[0][1], [0.5, 0.5], atol=1e-15)


def test_vertex_hit_assigned_to_one_edge():
    seg = LineSegment((0.5, -1), (0.5, 1))
    left = edge_intersections(seg, ((0.25, 0.0), (0.5, 0.0)))
    right = edge_intersections(seg, ((0.5, 0.0), (0.75, 0.0)))
    assert left == []
    assert len(right) == 1 and right[0][1][0] == 0.5


def test_tangency_is_not_a_crossing():
    arc = CircularArc((0, 0), 0.5, 0.0, math.pi)
    assert edge_intersections(arc, ((-1.0, 0.5), (1.0, 0.5))) == []


def test_degenerate_edge():
    with pytest.raises(DegenerateGeometryError):
        edge_intersections(LineSegment((0, 0), (1, 1)), ((0.5, 0.5), (0.5, 0.5)))


def test_curve_along_grid_line_raises():
    sq = polygon_curve([(0, 0), (1, 0), (1, 1), (0, 1)])
    with pytest.raises(GeometryError):
        sq.line_crossings(1, 0.0)


def test_polygon_vertex_on_line_counts_once():
    tri = polygon_curve([(0, -1), (1, 0), (0, 1)])
    lc = tri.line_crossings(1, 0.0)
    assert lc.along.size == 2
    np.testing.assert_array_equal(lc.along, [0.0, 1.0])
    # apex touching a line is not a crossing
    assert tri.line_crossings(0, 1.0).along.size == 0


def arc60(t):
    a = np.asarray(t) * math.pi / 3
    return np.stack([np.cos(a), np.sin(a)], axis=-1)


def test_chord_deviation_sagitta_oracle():
    a, b = arc60(0.0), arc60(1.0)
    normal = np.array([math.cos(math.pi / 6), math.sin(math.pi / 6)])
    mid = 0.5 * (a + b)
    sag = 1 - math.cos(math.pi / 6)
    assert chord_deviation(arc60, (a, b), mid - 1.0 * normal) == pytest.approx(sag, rel=1e-4)
    assert chord_deviation(arc60, (a, b), mid - 2.0 * normal) == pytest.approx(sag / 2, rel=1e-4)
    assert round(chord_deviation(arc60, (a, b), mid - normal), 4) == 0.1340


def test_chord_deviation_straight_is_zero():
    seg = LineSegment((0.1, 0.2), (0.7, -0.3))
    assert chord_deviation(seg.point, (seg.start, seg.end), (1.0, 1.0)) == 0.0


def test_chord_deviation_degenerate():
    with pytest.raises(DegenerateGeometryError):
        chord_deviation(arc60, ((0, 0), (0, 0)), (1, 1))


def test_chord_deviation_refinement_factor_four():
    def dev(span):
        f = lambda t: np.stack([np.cos(np.asarray(t) * span), np.sin(np.asarray(t) * span)], -1)
        a, b = f(0.0), f(1.0)
        nrm = (a + b) / np.linalg.norm(a + b)
        L = np.linalg.norm(b - a)
        return chord_deviation(f, (a, b), 0.5 * (a + b) - L * nrm) * L

    ratios = [dev(s) / dev(s / 2) for s in (0.4, 0.2, 0.1)]
    assert all(r >= 2.0 for r in ratios)
    assert ratios[-1] == pytest.approx(4.0, rel=1e-2)


def test_singular_vertices_of_benchmarks():
    assert len(five_star_curve().singular_vertices) == 5
    lens = lens_curve()
    pts = sorted(tuple(np.round(v.point, 12)) for v in lens.singular_vertices)
    th = 2 * math.pi / 5
    expect = sorted(tuple(np.round([-s * math.sin(th) * math.sqrt(3) / 2, s * math.cos(th) * math.sqrt(3) / 2], 12))
                    for s in (1, -1))
    assert pts == expect
    assert len(rhombus_curve().singular_vertices) == 4
    assert len(smoothed_rhombus_curve(1e-2).singular_vertices) == 0
    assert len(circle_curve().singular_vertices) == 0


def test_smoothed_rhombus_satisfies_implicit_equation():
    eps = 1e-3
    c = smoothed_rhombus_curve(eps)
    p = c.point(np.linspace(0, 4, 101))
    s = 0.5 * p[:, 0] + math.sqrt(3) / 2 * p[:, 1]
    t = -math.sqrt(3) / 2 * p[:, 0] + 0.5 * p[:, 1]
    F = math.sqrt(5) * np.sqrt(s ** 2 + eps) + math.sqrt(2 / 3) * np.sqrt(t ** 2 + eps)
    np.testing.assert_allclose(F, 1.0, atol=1e-13)
    # tangent against a centred difference
    s0 = np.array([0.3, 1.7, 2.2, 3.9])
    h = 1e-6
    fd = (c.point(s0 + h) - c.point(s0 - h)) / (2 * h)
    np.testing.assert_allclose(c.tangent(s0), fd, rtol=1e-6, atol=1e-7)


def test_curve_file_roundtrip(tmp_path):
    curve = PiecewiseCurve([
        LineSegment((0, 0), (1, 0)),
        QuadraticBezier((1, 0), (1.5, 0.5), (1, 1)),
        CircularArc((0.5, 1.0), 0.5, 0.0, math.pi),
        LineSegment((0, 1), (0, 0)),
    ])
    path = tmp_path / "c.txt"
    write_curve_file(path, [(curve, 1, 2)])
    back = read_curve_file(path)
    assert len(back) == 1
    c2, left, right = back[0]
    assert (left, right) == (1, 2)
    s = np.linspace(0, 3.99, 50)
    np.testing.assert_allclose(c2.point(s), curve.point(s), atol=1e-15)


def test_curve_file_errors(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("curve 1 2\nspline 0 0 1 1\n")
    with pytest.raises(ValueError):
        read_curve_file(bad)


def test_disconnected_segments_rejected():
    with pytest.raises(GeometryError):
        PiecewiseCurve([LineSegment((0, 0), (1, 0)), LineSegment((1, 0.5), (0, 0))])


@settings(max_examples=60, deadline=None)
@given(x=st.floats(-0.9, 0.9), y0=st.floats(-1.0, 0.0), y1=st.floats(0.01, 1.0),
       r=st.floats(0.2, 0.95))
def test_edge_intersections_reversal_symmetric(x, y0, y1, r):
    arc = CircularArc((0, 0), r, -0.3, 2.5)
    a = edge_intersections(arc, ((x, y0), (x, y1)))
    b = edge_intersections(arc, ((x, y1), (x, y0)))
    assert [tuple(p) for _, p in a] == [tuple(p) for _, p in b]
    for _, p in a:
        assert abs(math.hypot(*p) - r) < 1e-12


@settings(max_examples=40, deadline=None)
@given(rad=st.floats(0.05, 0.999), ang=st.floats(0, 2 * math.pi))
def test_convex_interior_points_inside(rad, ang):
    c = circle_curve((0.2, -0.1), 0.7)
    p = (0.2 + 0.7 * rad * math.cos(ang), -0.1 + 0.7 * rad * math.sin(ang))
    assert classify_point(c, p) == "inside"


@settings(max_examples=40, deadline=None)
@given(y=st.floats(-0.99, 0.99))
def test_circle_line_roots_exact_on_line(y):
    c = circle_curve()
    lc = c.line_crossings(1, y)
    assert lc.along.size == 2
    assert np.all(lc.points[:, 1] == y)
    np.testing.assert_allclose(np.abs(lc.along), math.sqrt(1 - y * y), atol=1e-13)
