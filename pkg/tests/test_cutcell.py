import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ufem.cutcell import (
    arc_quadrature, classify_rect, deviation, geometric_index, side_parts, singular_index,
    subtriangulate, theta_factor, triangle_quadrature,
)
from ufem.geometry import CurveSpec, DomainConfig, circle_curve, classify_point, polygon_curve


def domain(curve, labels=(1, 2), box=(-2, 2, -2, 2)):
    return DomainConfig(box, [CurveSpec(curve, *labels)], {1: 1.0, 2: 1.0}, background=2)


VLINE = polygon_curve([(0.5, -1), (1.5, -1), (1.5, 2), (0.5, 2)])
WEDGE = polygon_curve([(0.5, 0.5), (0.0, -0.5), (1.0, -0.5)])


def test_vertical_cut_is_t2():
    info = classify_rect((0, 1, 0, 1), domain(VLINE))
    assert info.cut_type == "T2"
    assert {tuple(info.A), tuple(info.B)} == {(0.5, 0.0), (0.5, 1.0)}
    assert info.delta == 0.5
    sub = subtriangulate(info)
    assert sub.counts() == {1: 2, 2: 2}
    assert deviation(sub, domain(VLINE)) == 0.0


def test_quarter_circle_is_t1():
    d = domain(circle_curve((0, 0), 0.5))
    info = classify_rect((0, 1, 0, 1), d)
    assert info.cut_type == "T1"
    sub = subtriangulate(info)
    assert sub.counts()[1] == 1 and sub.counts()[2] <= 4


def test_t1_corner_cut_counts():
    tri = polygon_curve([(-1.0, 1.5), (-1.0, -1.0), (1.5, -1.0)])
    info = classify_rect((0, 1, 0, 1), domain(tri))
    assert info.cut_type == "T1"
    np.testing.assert_allclose(sorted(map(tuple, (info.A, info.B))), [(0.0, 0.5), (0.5, 0.0)])
    counts = subtriangulate(info).counts()
    assert counts == {1: 1, 2: 3}


def test_wedge_is_t3_with_singular_point():
    info = classify_rect((0, 1, 0, 1), domain(WEDGE))
    assert info.cut_type == "T3"
    np.testing.assert_array_equal(info.Q, [0.5, 0.5])
    assert info.delta_tilde == 1.0
    sub = subtriangulate(info)
    assert all(c <= 5 for c in sub.counts().values())
    # every triangle with a curved side is apexed opposite an arm of Q
    for t in sub.triangles:
        if t.arc is not None:
            assert any(np.array_equal(v, [0.5, 0.5]) for v in t.verts[1:])


def test_geometric_index_examples():
    line = lambda x: polygon_curve([(x, -1), (3, -1), (3, 2), (x, 2)])
    assert classify_rect((0, 1, 0, 1), domain(line(0.3))).delta == pytest.approx(0.3)
    assert classify_rect((0, 1, 0, 1), domain(line(0.5))).delta == 0.5
    diag = polygon_curve([(-1, -1), (2, 2), (2, -1)])
    info = classify_rect((0, 1, 0, 1), domain(diag))
    # oracle: 1D sampling of each side against the diagonal
    t = (np.arange(100000) + 0.5) / 100000
    fr = []
    for side in (np.c_[t, 0 * t], np.c_[1 + 0 * t, t], np.c_[t, 1 + 0 * t], np.c_[0 * t, t]):
        below = side[:, 1] < side[:, 0]
        for m in (below.mean(), 1 - below.mean()):
            if m > 0:
                fr.append(m)
    assert info.delta == pytest.approx(min(fr), abs=1e-4)
    assert info.delta == 1.0


def test_singular_index_examples():
    assert singular_index((0, 1, 0, 1), (0.5, 0.5)) == 1.0
    assert singular_index((0, 1, 0, 1), (0.25, 0.5)) == 0.5
    # distance to a side over half the length of the perpendicular side
    assert singular_index((0, 2, 0, 1), (1, 0.5)) == 1.0
    assert singular_index((0, 2, 0, 1), (0.5, 0.5)) == 0.5


def test_improper_cells():
    d = domain(circle_curve((0.5, 0.5), 0.2))
    assert classify_rect((0, 1, 0, 1), d).reason == "curve inside cell"
    wavy = polygon_curve([(0.2, -1), (0.2, 0.5), (0.4, 0.5), (0.4, -1)])
    info = classify_rect((0, 1, 0, 1), domain(wavy))
    assert not info.proper


def test_uncut_labels():
    d = domain(circle_curve((0, 0), 1.0))
    assert classify_rect((-0.25, 0.25, -0.25, 0.25), d).label == 1
    assert classify_rect((1.25, 1.5, 1.25, 1.5), d).label == 2
    hole = domain(circle_curve((0, 0), 1.0), labels=(0, 1))
    assert classify_rect((-0.25, 0.25, -0.25, 0.25), hole).kind == "outside"


def test_theta_factor():
    assert theta_factor(0.0, 3) == 1.0
    t = mpmath.mpf("1.15") / mpmath.mpf("0.95")
    ref = (t + mpmath.sqrt(t * t - 1)) ** 5
    assert theta_factor(0.05, 1) == pytest.approx(float(ref), rel=1e-13)
    assert round(theta_factor(0.05, 1), 1) == 24.3
    assert theta_factor(0.06, 1) > theta_factor(0.05, 1)
    assert theta_factor(0.05, 2) > theta_factor(0.05, 1)


def brute_labels_on_boundary(rect, curve, n=400):
    x0, x1, y0, y1 = rect
    t = (np.arange(n) + 0.5) / n
    pts = np.vstack([np.c_[x0 + t * (x1 - x0), y0 + 0 * t], np.c_[x1 + 0 * t, y0 + t * (y1 - y0)],
                     np.c_[x1 - t * (x1 - x0), y1 + 0 * t], np.c_[x0 + 0 * t, y1 - t * (y1 - y0)]])
    lab = np.array([classify_point(curve, p) == "inside" for p in pts])
    return int(np.count_nonzero(lab != np.roll(lab, 1)))


@settings(max_examples=60, deadline=None)
@given(cx=st.floats(-0.5, 0.5), cy=st.floats(-0.5, 0.5), r=st.floats(0.3, 1.2),
       x0=st.floats(-1, 0.5), y0=st.floats(-1, 0.5), h=st.floats(0.05, 0.5))
def test_classify_agrees_with_boundary_sampling(cx, cy, r, x0, y0, h):
    curve = circle_curve((cx, cy), r)
    d = domain(curve)
    rect = (x0, x0 + h, y0, y0 + h)
    info = classify_rect(rect, d)
    flips = brute_labels_on_boundary(rect, curve)
    if info.is_cut and info.proper:
        assert flips == 2
        sub = subtriangulate(info, c0=0.0)
        # area identity over the straight and curved sub-triangulations
        assert sum(t.area for t in sub.triangles) == pytest.approx(h * h, rel=1e-12)
        # the swept-segment map is a bijection once the deviation is moderate
        if deviation(sub, d) < 0.3:
            curved = sum(triangle_quadrature(t, d, 8)[1].sum() for t in sub.triangles)
            assert curved == pytest.approx(h * h, rel=1e-10)
    elif not info.is_cut:
        assert flips == 0


def test_curved_area_of_disc_part():
    d = domain(circle_curve((0, 0), 0.5))
    info = classify_rect((0, 1, 0, 1), d)
    sub = subtriangulate(info)
    a1 = sum(triangle_quadrature(t, d, 10)[1].sum() for t in sub.of_label(1))
    assert a1 == pytest.approx(math.pi / 16, rel=1e-13)
    _, w, _ = arc_quadrature(d, sub.arcs[0], 8)
    assert w.sum() == pytest.approx(math.pi / 4, rel=1e-13)


def test_side_parts_labels():
    info = classify_rect((0, 1, 0, 1), domain(VLINE))
    parts = side_parts(info)
    # bottom side: x < 0.5 is outside the rectangle curve (label 2)
    assert [(a, b, lab) for a, b, lab in parts[0]] == [(0.0, 0.5, 2), (0.5, 1.0, 1)]


def test_deviation_first_order_on_circle():
    d = domain(circle_curve((0, 0), 1.0))
    etas = []
    for L in range(3, 7):
        h = 2.0 ** -L
        # cell straddling the circle at angle ~ 0.3 rad
        cx, cy = math.cos(0.3), math.sin(0.3)
        x0 = math.floor(cx / h) * h
        y0 = math.floor(cy / h) * h
        info = classify_rect((x0, x0 + h, y0, y0 + h), d)
        if not info.proper:
            continue
        etas.append((h, deviation(subtriangulate(info, c0=0.0), d)))
    hs, es = np.array(etas).T
    slope = np.polyfit(np.log(hs), np.log(es), 1)[0]
    assert 0.7 < slope < 1.3
