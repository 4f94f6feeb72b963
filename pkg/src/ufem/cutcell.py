"""How a curve cuts a rectangle, and the curved sub-triangulation of cut cells.

Every routine here works on an arbitrary axis-aligned rectangle, so the same
code serves leaves of the quadtree and merged macro-elements.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import DomainConfig, GeometryError, chord_deviation

__all__ = [
    "CutInfo", "Triangle", "SubTriangulation", "SubTriangulationError",
    "classify_rect", "classify_cut", "geometric_index", "singular_index",
    "subtriangulate", "deviation", "cell_deviation", "theta_factor", "chebyshev_growth",
    "triangle_quadrature", "arc_quadrature", "side_parts",
]

BOTTOM, RIGHT, TOP, LEFT = 0, 1, 2, 3   # perimeter order, counter-clockwise


class SubTriangulationError(RuntimeError):
    pass


def chebyshev_growth(t: float) -> float:
    return t + math.sqrt(max(t * t - 1.0, 0.0))


def theta_factor(eta: float, p: int) -> float:
    """Inverse-estimate growth factor for a cut cell of deviation ``eta``."""
    if not 0.0 <= eta < 1.0:
        raise ValueError("deviation must lie in [0, 1)")
    return chebyshev_growth((1.0 + 3.0 * eta) / (1.0 - eta)) ** (2 * p + 3)


@dataclass
class Hit:
    s: float
    point: np.ndarray
    pos: float          # perimeter coordinate, counter-clockwise from (x0, y0)
    sides: tuple


@dataclass
class CutInfo:
    rect: tuple
    kind: str                     # uncut | outside | interface | boundary
    label: int = 0                # subdomain label of uncut cells
    cut_type: str | None = None   # T1 | T2 | T3 | improper
    reason: str = ""
    curve_index: int = -1
    left: int = 0                 # labels left/right of the curve direction
    right: int = 0
    A: np.ndarray | None = None   # entry point (curve parameter increases A -> B)
    B: np.ndarray | None = None
    sA: float = 0.0
    sB: float = 0.0
    Q: np.ndarray | None = None
    sQ: float | None = None
    posA: float = 0.0
    posB: float = 0.0
    delta: float = 1.0
    delta_tilde: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def is_cut(self) -> bool:
        return self.kind in ("interface", "boundary")

    @property
    def proper(self) -> bool:
        return self.cut_type != "improper"

    @property
    def singular(self) -> bool:
        return self.Q is not None

    @property
    def labels(self) -> tuple:
        if not self.is_cut:
            return (self.label,) if self.label else ()
        return tuple(sorted({lab for lab in (self.left, self.right) if lab != 0}))

    @property
    def h(self) -> float:
        x0, x1, y0, y1 = self.rect
        return max(x1 - x0, y1 - y0)


# ---------------------------------------------------------------------------
# perimeter helpers
# ---------------------------------------------------------------------------

def _perimeter(rect):
    x0, x1, y0, y1 = rect
    w, h = x1 - x0, y1 - y0
    starts = (0.0, w, w + h, 2 * w + h)
    return starts, 2 * (w + h)


def _perim_pos(rect, p):
    x0, x1, y0, y1 = rect
    w, h = x1 - x0, y1 - y0
    x, y = p
    if y == y0 and x < x1:
        return x - x0
    if x == x1 and y < y1:
        return w + (y - y0)
    if y == y1 and x > x0:
        return w + h + (x1 - x)
    return 2 * w + h + (y1 - y)


def _point_sides(rect, p):
    x0, x1, y0, y1 = rect
    out = []
    if p[1] == y0:
        out.append(BOTTOM)
    if p[0] == x1:
        out.append(RIGHT)
    if p[1] == y1:
        out.append(TOP)
    if p[0] == x0:
        out.append(LEFT)
    return tuple(out)


def _corners(rect):
    x0, x1, y0, y1 = rect
    return [np.array([x0, y0]), np.array([x1, y0]), np.array([x1, y1]), np.array([x0, y1])]


def _ccw_corners_between(rect, pa, pb):
    """Corners met walking counter-clockwise from perimeter position ``pa`` to
    ``pb`` (exclusive of corners sitting exactly at either end)."""
    starts, P = _perimeter(rect)
    cs = _corners(rect)
    span = (pb - pa) % P
    out = []
    for k in range(4):
        d = (starts[k] - pa) % P
        if 0.0 < d < span:
            out.append((d, cs[k]))
    out.sort(key=lambda r: r[0])
    return [c for _, c in out]


def _arc_measure_on_sides(rect, pa, pb):
    """Length of each side covered by the ccw perimeter arc ``[pa, pb)``."""
    starts, P = _perimeter(rect)
    x0, x1, y0, y1 = rect
    lens = (x1 - x0, y1 - y0, x1 - x0, y1 - y0)
    span = (pb - pa) % P
    out = []
    for k in range(4):
        total = 0.0
        # intersect [starts_k, starts_k + len) with arc, unrolled on the circle
        for shift in (-P, 0.0, P):
            a0 = pa + shift
            a1 = a0 + span
            lo = max(a0, starts[k])
            hi = min(a1, starts[k] + lens[k])
            if hi > lo:
                total += hi - lo
        out.append(total)
    return out


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------

def _collect_hits(rect, curve, eps):
    x0, x1, y0, y1 = rect
    raw = []
    for axis, c, lo, hi in ((1, y0, x0, x1), (0, x1, y0, y1), (1, y1, x0, x1), (0, x0, y0, y1)):
        lc = curve.line_crossings(axis, c)
        if lc.along.size == 0:
            continue
        i0 = int(np.searchsorted(lc.along, lo, side="left"))
        i1 = int(np.searchsorted(lc.along, hi, side="right"))
        for k in range(i0, i1):
            raw.append((float(lc.s[k]), lc.points[k].copy()))
    hits = []
    for s, p in raw:
        if any(np.max(np.abs(h.point - p)) <= eps for h in hits):
            continue
        hits.append(Hit(s, p, _perim_pos(rect, p), _point_sides(rect, p)))
    return hits


def _strictly_inside(rect, p, eps=0.0):
    x0, x1, y0, y1 = rect
    return x0 + eps < p[0] < x1 - eps and y0 + eps < p[1] < y1 - eps


def _in_closed(rect, p):
    x0, x1, y0, y1 = rect
    return x0 <= p[0] <= x1 and y0 <= p[1] <= y1


def _bbox_meets(rect, bb, pad):
    x0, x1, y0, y1 = rect
    return not (bb[1] < x0 - pad or bb[0] > x1 + pad or bb[3] < y0 - pad or bb[2] > y1 + pad)


def _improper(info, reason):
    info.cut_type = "improper"
    info.reason = reason
    info.delta = 0.0
    return info


def classify_rect(rect, domain: DomainConfig) -> CutInfo:
    """Cut information for an axis-aligned rectangle ``(x0, x1, y0, y1)``."""
    rect = tuple(float(v) for v in rect)
    eps = domain.eps_geom
    x0, x1, y0, y1 = rect
    centre = (0.5 * (x0 + x1), 0.5 * (y0 + y1))
    pad = 1e-9 * domain.diameter
    involved = []
    for ci, cs in enumerate(domain.curves):
        curve = cs.curve
        if not _bbox_meets(rect, curve.bbox, pad):
            continue
        hits = _collect_hits(rect, curve, eps)
        sing = [v for v in curve.singular_vertices if _in_closed(rect, v.point)]
        if not hits and not sing:
            if _strictly_inside(rect, curve.point_at(0.0)):
                involved.append((ci, hits, sing, "curve inside cell"))
            continue
        if len(hits) == 1 and not sing and hits[0].point is not None and len(hits[0].sides) == 2:
            continue   # touches a corner from outside
        involved.append((ci, hits, sing, ""))

    if not involved:
        lab = domain.label(*centre)
        return CutInfo(rect, "uncut" if lab else "outside", label=lab)

    ci, hits, sing, why = involved[0]
    cs = domain.curves[ci]
    info = CutInfo(rect, "interface" if cs.is_interface else "boundary",
                   curve_index=ci, left=cs.left, right=cs.right)
    if len(involved) > 1:
        return _improper(info, "several curves cut the cell")
    if why:
        return _improper(info, why)
    if any(not _strictly_inside(rect, v.point) for v in sing):
        return _improper(info, "singular point on the cell boundary")
    if len(sing) > 1:
        return _improper(info, "two singular points in one cell")
    if len(hits) != 2:
        return _improper(info, f"{len(hits)} boundary crossings")
    curve = cs.curve
    n = curve.n_segments
    h0, h1 = sorted(hits, key=lambda h: h.s)
    if np.max(np.abs(h0.point - h1.point)) <= eps:
        if sing:
            return _improper(info, "coincident crossings around a singular point")
        lab = domain.label(*centre)
        return CutInfo(rect, "uncut" if lab else "outside", label=lab)
    # which of the two arcs between the crossings lies inside the rectangle
    if curve.closed:
        fwd = curve.point_at(0.5 * (h0.s + h1.s))
        bwd = curve.point_at(0.5 * (h1.s + h0.s + n))
        inside_fwd = _depth(rect, fwd) >= _depth(rect, bwd)
    else:
        inside_fwd = True
    entry, exit_ = (h0, h1) if inside_fwd else (h1, h0)
    sA, sB = entry.s, exit_.s
    if sB <= sA:
        sB += n
    info.A, info.B, info.sA, info.sB = entry.point, exit_.point, sA, sB
    info.posA, info.posB = entry.pos, exit_.pos
    if sing:
        v = sing[0]
        sQ = float(v.index)
        while sQ <= sA:
            sQ += n
        if not sQ < sB:
            return _improper(info, "singular point off the inner arc")
        info.Q, info.sQ = v.point.copy(), sQ
        info.delta_tilde = singular_index(rect, info.Q)
    info.cut_type = _cut_type(entry.sides, exit_.sides, info.singular)
    if info.cut_type == "improper":
        return _improper(info, "both crossings on one side without a singular point")
    if not info.singular:
        # each side of the chord must keep at least one rectangle corner
        if not _ccw_corners_between(rect, info.posB, info.posA) or \
                not _ccw_corners_between(rect, info.posA, info.posB):
            return _improper(info, "no cell corner on one side of the cut")
    info.delta = geometric_index(info)
    return info


def _depth(rect, p):
    x0, x1, y0, y1 = rect
    return min(p[0] - x0, x1 - p[0], p[1] - y0, y1 - p[1])


def _cut_type(sa, sb, singular):
    pairs = [(a, b) for a in sa for b in sb if a != b]
    if any((a - b) % 4 == 2 for a, b in pairs):
        return "T2"
    if pairs:
        return "T1"
    return "T3" if singular else "improper"


def classify_cut(mesh, cell, domain: DomainConfig) -> CutInfo:
    return classify_rect(mesh.bounds(cell), domain)


# ---------------------------------------------------------------------------
# indices
# ---------------------------------------------------------------------------

def side_parts(info: CutInfo):
    """Per side, the list of ``(t0, t1, label)`` pieces in counter-clockwise
    order, with ``t`` the perimeter coordinate."""
    starts, P = _perimeter(info.rect)
    x0, x1, y0, y1 = info.rect
    lens = (x1 - x0, y1 - y0, x1 - x0, y1 - y0)
    out = []
    for k in range(4):
        a, b = starts[k], starts[k] + lens[k]
        if not info.is_cut:
            out.append([(a, b, info.label)])
            continue
        cuts = sorted({t for t in (info.posA, info.posB) if a < t < b})
        pts = [a, *cuts, b]
        parts = []
        for t0, t1 in zip(pts[:-1], pts[1:]):
            mid = 0.5 * (t0 + t1)
            # left label on the ccw arc from B to A
            on_left = (mid - info.posB) % P < (info.posA - info.posB) % P
            parts.append((t0, t1, info.left if on_left else info.right))
        out.append(parts)
    return out


def geometric_index(info: CutInfo) -> float:
    """Smallest fraction of a side occupied by one side of the curve.

    On boundary cells the part outside the domain counts as well: a tiny
    outside corner would otherwise leave a sliver triangle on the chord.
    """
    if not info.is_cut:
        return 1.0
    x0, x1, y0, y1 = info.rect
    lens = (x1 - x0, y1 - y0, x1 - x0, y1 - y0)
    left = _arc_measure_on_sides(info.rect, info.posB, info.posA)
    right = _arc_measure_on_sides(info.rect, info.posA, info.posB)
    best = 1.0
    for k in range(4):
        for lab, m in ((info.left, left[k]), (info.right, right[k])):
            if m > 0.0:
                best = min(best, m / lens[k])
    return best


def singular_index(rect, Q) -> float:
    """Distance of ``Q`` to each side relative to half the perpendicular side."""
    x0, x1, y0, y1 = rect
    hx, hy = x1 - x0, y1 - y0
    qx, qy = float(Q[0]), float(Q[1])
    # a horizontal side is perpendicular to the vertical ones and vice versa
    vals = ((qy - y0) / (hy / 2), (y1 - qy) / (hy / 2), (qx - x0) / (hx / 2), (x1 - qx) / (hx / 2))
    return max(0.0, min(vals))


# ---------------------------------------------------------------------------
# sub-triangulation
# ---------------------------------------------------------------------------

@dataclass
class Triangle:
    """Straight triangle ``verts``; when ``arc`` is set the edge
    ``verts[1] -> verts[2]`` is replaced by the curve piece ``arc`` and
    ``verts[0]`` is the vertex opposite to it."""

    label: int
    verts: np.ndarray
    arc: tuple | None = None      # (curve index, s0, s1)

    @property
    def area(self) -> float:
        a, b, c = self.verts
        return 0.5 * abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))

    def inradius(self) -> float:
        a, b, c = self.verts
        per = np.linalg.norm(b - a) + np.linalg.norm(c - b) + np.linalg.norm(a - c)
        return 2.0 * self.area / per


@dataclass
class SubTriangulation:
    info: CutInfo
    triangles: list
    arcs: list                   # (curve index, s0, s1) pieces of the curve in the cell

    def of_label(self, label):
        return [t for t in self.triangles if t.label == label]

    def counts(self) -> dict:
        out = {}
        for t in self.triangles:
            out[t.label] = out.get(t.label, 0) + 1
        return out


def _fan_regular(poly, label, ci, s_first, s_last):
    """Fan of a convex polygon ``[P0, ..., Pm]`` closed by a chord from
    ``Pm`` back to ``P0``; the chord is the curve piece ``s_first -> s_last``
    running from ``Pm`` to ``P0``."""
    m = len(poly)
    chord = (poly[-1], poly[0])
    d = chord[1] - chord[0]
    nrm = np.array([-d[1], d[0]]) / np.linalg.norm(d)
    dist = [abs(float(np.dot(p - chord[0], nrm))) for p in poly]
    cand = range(1, m - 1)
    a = max(cand, key=lambda k: dist[k])
    tris = []
    for k in range(m):
        k1 = (k + 1) % m
        if a in (k, k1):
            continue
        if k == m - 1:   # the chord edge
            tris.append(Triangle(label, np.array([poly[a], poly[m - 1], poly[0]]),
                                 (ci, s_first, s_last)))
        else:
            tris.append(Triangle(label, np.array([poly[a], poly[k], poly[k1]])))
    return tris


def _fan_singular(bpath, Q, label, ci, s_in, s_out):
    """Fan from ``Q`` over the boundary path ``bpath``; the first vertex of
    the path joins ``Q`` along the curve piece ``s_out`` and the last one
    along ``s_in`` (both given as ``(s_from_Q_side, s_other)``)."""
    if len(bpath) == 2:
        # both arms leave through one side: apex at the centroid keeps that
        # side whole, so neighbouring element sides stay nested inside it
        p, q = bpath
        M = (p + q + Q) / 3.0
        return [Triangle(label, np.array([M, Q, p]), (ci, *s_out)),
                Triangle(label, np.array([M, q, Q]), (ci, *s_in)),
                Triangle(label, np.array([M, p, q]))]
    tris = []
    m = len(bpath)
    for k in range(m - 1):
        p, q = bpath[k], bpath[k + 1]
        if k == 0:
            # curved edge Q -> p, opposite vertex q
            s0, s1 = s_out
            tris.append(Triangle(label, np.array([q, Q, p]), (ci, s0, s1)))
        elif k == m - 2:
            s0, s1 = s_in
            tris.append(Triangle(label, np.array([p, q, Q]), (ci, s0, s1)))
        else:
            tris.append(Triangle(label, np.array([Q, p, q])))
    return tris


def subtriangulate(info: CutInfo, c0: float = 1e-3) -> SubTriangulation:
    if not info.is_cut:
        raise ValueError("only cut cells are sub-triangulated")
    if not info.proper:
        raise SubTriangulationError(f"improper cut: {info.reason}")
    rect, ci = info.rect, info.curve_index
    A, B = np.asarray(info.A, float), np.asarray(info.B, float)
    left_corners = _ccw_corners_between(rect, info.posB, info.posA)
    right_corners = _ccw_corners_between(rect, info.posA, info.posB)
    tris = []
    if not info.singular:
        arcs = [(ci, info.sA, info.sB)]
        if info.left:
            # polygon B, corners..., A; chord from A back to B is the arc A -> B
            tris += _fan_regular([B, *left_corners, A], info.left, ci, info.sA, info.sB)
        if info.right:
            # polygon A, corners..., B; chord B -> A is the arc traversed backwards
            tris += _fan_regular([A, *right_corners, B], info.right, ci, info.sB, info.sA)
    else:
        Q = np.asarray(info.Q, float)
        sQ = info.sQ
        arcs = [(ci, info.sA, sQ), (ci, sQ, info.sB)]
        if info.left:
            # path B -> corners -> A; Q joins B along (sQ, sB) and A along (sA, sQ)
            tris += _fan_singular([B, *left_corners, A], Q, info.left, ci,
                                  s_in=(info.sA, sQ), s_out=(sQ, info.sB))
        if info.right:
            tris += _fan_singular([A, *right_corners, B], Q, info.right, ci,
                                  s_in=(info.sB, sQ), s_out=(sQ, info.sA))
    sub = SubTriangulation(info, tris, arcs)
    h = info.h
    for t in tris:
        if t.inradius() < c0 * h:
            raise SubTriangulationError(
                f"triangle with inscribed radius {t.inradius():.3g} below {c0:g} h")
    for lab, cnt in sub.counts().items():
        if cnt > 5:
            raise SubTriangulationError(f"{cnt} triangles for subdomain {lab}")
    return sub


def deviation(sub: SubTriangulation, domain: DomainConfig) -> float:
    """Largest relative chord-to-curve distance over the curved triangles."""
    eta = 0.0
    for t in sub.triangles:
        if t.arc is None:
            continue
        ci, s0, s1 = t.arc
        curve = domain.curves[ci].curve
        if _straight_piece(curve, s0, s1):
            continue

        def arc(tau, s0=s0, s1=s1, curve=curve):
            return curve.point(s0 + np.asarray(tau) * (s1 - s0))

        eta = max(eta, chord_deviation(arc, (t.verts[1], t.verts[2]), t.verts[0]))
    return eta


def cell_deviation(info: CutInfo, domain: DomainConfig) -> float:
    """Deviation of a cut cell's sub-triangulation, cached on the domain."""
    cache = domain.__dict__.setdefault("_deviation_cache", {})
    key = (tuple(info.rect), info.curve_index, info.sA, info.sB, info.sQ)
    eta = cache.get(key)
    if eta is None:
        if len(cache) > 500_000:
            cache.clear()
        eta = cache[key] = deviation(subtriangulate(info), domain)
    return eta


def _straight_piece(curve, s0, s1):
    lo, hi = min(s0, s1), max(s0, s1)
    ks = range(math.floor(lo), max(math.ceil(hi), math.floor(lo) + 1))
    segs = [curve.segments[k % curve.n_segments] for k in ks]
    if not all(sg.kind == "line" for sg in segs):
        return False
    if len(segs) == 1:
        return True
    d = [sg.p1 - sg.p0 for sg in segs]
    return all(abs(a[0] * b[1] - a[1] * b[0]) <= 1e-14 * np.dot(a, a) ** 0.5 * np.dot(b, b) ** 0.5
               for a, b in zip(d[:-1], d[1:]))


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

_GAUSS = {}


def gauss01(n: int):
    if n not in _GAUSS:
        x, w = np.polynomial.legendre.leggauss(n)
        _GAUSS[n] = (0.5 * (x + 1.0), 0.5 * w)
    return _GAUSS[n]


def _smooth_breaks(s0, s1):
    lo, hi = min(s0, s1), max(s0, s1)
    inner = [float(k) for k in range(math.floor(lo) + 1, math.ceil(hi)) if lo < k < hi]
    pts = [lo, *inner, hi]
    if s1 < s0:
        pts = pts[::-1]
    return pts


def triangle_quadrature(tri: Triangle, domain: DomainConfig | None, n: int):
    """Points and weights on the (possibly curved) triangle.

    The curved triangle is the image of the unit square under
    ``(r, tau) -> V + r (c(tau) - V)`` with ``c`` the curve piece, which is
    exact for the region swept by segments from ``V`` to the arc.
    """
    g, w = gauss01(n)
    V = tri.verts[0]
    if tri.arc is None:
        P0, P1 = tri.verts[1], tri.verts[2]
        tau, r = g, g
        c = P0 + tau[:, None] * (P1 - P0)
        dc = np.broadcast_to(P1 - P0, c.shape)
        pieces = [(c, dc, w)]
    else:
        ci, s0, s1 = tri.arc
        curve = domain.curves[ci].curve
        br = _smooth_breaks(s0, s1)
        pieces = []
        for a, b in zip(br[:-1], br[1:]):
            s = a + g * (b - a)
            pieces.append((curve.point(s), curve.tangent(s) * (b - a), w))
        r = g
    pts, wts = [], []
    for c, dc, wt in pieces:
        cv = c - V
        cr = cv[:, 0] * dc[:, 1] - cv[:, 1] * dc[:, 0]
        # x = V + r cv; weight r |cross(cv, dc)|
        X = V + r[:, None, None] * cv[None, :, :]
        W = (w * r)[:, None] * (wt * np.abs(cr))[None, :]
        pts.append(X.reshape(-1, 2))
        wts.append(W.ravel())
    return np.vstack(pts), np.concatenate(wts)


def arc_quadrature(domain: DomainConfig, arc, n: int):
    """Gauss points, weights (arc length), unit tangents on a curve piece."""
    ci, s0, s1 = arc
    curve = domain.curves[ci].curve
    g, w = gauss01(n)
    br = _smooth_breaks(s0, s1)
    P, W, T = [], [], []
    for a, b in zip(br[:-1], br[1:]):
        lo, hi = min(a, b), max(a, b)
        s = lo + g * (hi - lo)
        d = curve.tangent(s)
        speed = np.hypot(d[:, 0], d[:, 1])
        P.append(curve.point(s))
        W.append(w * (hi - lo) * speed)
        T.append(d / speed[:, None])
    return np.vstack(P), np.concatenate(W), np.vstack(T)
