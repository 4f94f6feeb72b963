"""Piecewise C^2 curves, the domain they describe, and robust line/curve queries.

Every curve is a chain of parametric pieces ``t in [0, 1] -> R^2``.  Pieces are
split once per coordinate axis into monotone sub-pieces, so intersecting a curve
with an axis-aligned grid line reduces to one bracketed scalar root per
sub-piece.  Roots are computed per *line* and cached, which makes every cell that
touches the same line see bit-identical crossing points.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "GeometryError",
    "DegenerateGeometryError",
    "CurveSegment",
    "LineSegment",
    "CircularArc",
    "QuadraticBezier",
    "PolarSegment",
    "PiecewiseCurve",
    "SingularVertex",
    "CurveSpec",
    "DomainConfig",
    "classify_point",
    "edge_intersections",
    "chord_deviation",
    "lens_curve",
    "five_star_curve",
    "rhombus_curve",
    "smoothed_rhombus_curve",
    "circle_curve",
    "polygon_curve",
    "read_curve_file",
    "write_curve_file",
]

THETA_TOL = 1e-6
_MONO_SAMPLES = 1025


class GeometryError(RuntimeError):
    """A geometric query could not be answered robustly."""

    def __init__(self, message, *context):
        super().__init__(message)
        self.context = context


class DegenerateGeometryError(GeometryError):
    pass


# ---------------------------------------------------------------------------
# smooth pieces
# ---------------------------------------------------------------------------

class CurveSegment:
    """One regular C^2 piece of a curve, parametrised over ``[0, 1]``.

    Subclasses provide a vectorised ``point``/``tangent`` pair and the scalar
    ``_xy``/``_dxy`` versions used inside root finders.
    """

    kind = "param"

    def __init__(self, fn: Callable, dfn: Callable):
        self._fn = fn
        self._dfn = dfn

    # vectorised evaluation ------------------------------------------------
    def point(self, t):
        t = np.asarray(t, dtype=float)
        return self._fn(t)

    def tangent(self, t):
        t = np.asarray(t, dtype=float)
        return self._dfn(t)

    # scalar evaluation ----------------------------------------------------
    def _xy(self, t: float):
        p = self.point(np.array([t]))[0]
        return float(p[0]), float(p[1])

    def _dxy(self, t: float):
        d = self.tangent(np.array([t]))[0]
        return float(d[0]), float(d[1])

    def params(self) -> tuple:
        return ()

    @cached_property
    def start(self) -> np.ndarray:
        return np.array(self._xy(0.0))

    @cached_property
    def end(self) -> np.ndarray:
        return np.array(self._xy(1.0))

    @cached_property
    def length(self) -> float:
        x, w = np.polynomial.legendre.leggauss(64)
        t = 0.5 * (x + 1.0)
        d = self.tangent(t)
        return float(0.5 * np.sum(w * np.hypot(d[:, 0], d[:, 1])))

    def reversed(self) -> "CurveSegment":
        return _Reversed(self)

    # monotone decomposition ------------------------------------------------
    def monotone_breaks(self, axis: int) -> np.ndarray:
        """Parameters in ``[0, 1]`` splitting the piece into sub-pieces on
        which coordinate ``axis`` is monotone (endpoints included)."""
        cache = self.__dict__.setdefault("_breaks", {})
        if axis in cache:
            return cache[axis]
        t = np.linspace(0.0, 1.0, _MONO_SAMPLES)
        d = self.tangent(t)[:, axis]
        scale = np.max(np.abs(self.tangent(t))) or 1.0
        flat = np.abs(d) <= 1e-14 * scale
        if np.all(flat):
            cache[axis] = np.array([0.0, 1.0])
            return cache[axis]
        breaks = [0.0]
        sgn = np.sign(np.where(flat, 0.0, d))

        def comp(tt):
            return self._dxy(tt)[axis]

        for i in range(len(t) - 1):
            a, b = sgn[i], sgn[i + 1]
            if a == 0.0 and 0.0 < t[i] < 1.0:
                breaks.append(float(t[i]))
            elif a * b < 0:
                breaks.append(brentq(comp, t[i], t[i + 1], xtol=1e-15, rtol=8.9e-16))
        breaks.append(1.0)
        out = np.unique(np.array(breaks))
        cache[axis] = out
        return out

    def _piece_table(self, axis: int):
        cache = self.__dict__.setdefault("_ptable", {})
        if axis not in cache:
            br = self.monotone_breaks(axis)
            vals = np.array([self._xy(float(b))[axis] for b in br])
            lo = np.minimum(vals[:-1], vals[1:])
            hi = np.maximum(vals[:-1], vals[1:])
            cache[axis] = (br, vals, lo, hi)
        return cache[axis]


class _Reversed(CurveSegment):
    kind = "reversed"

    def __init__(self, base: CurveSegment):
        self.base = base

    def point(self, t):
        return self.base.point(1.0 - np.asarray(t, dtype=float))

    def tangent(self, t):
        return -self.base.tangent(1.0 - np.asarray(t, dtype=float))

    def _xy(self, t):
        return self.base._xy(1.0 - t)

    def _dxy(self, t):
        dx, dy = self.base._dxy(1.0 - t)
        return -dx, -dy


class LineSegment(CurveSegment):
    kind = "line"

    def __init__(self, p0, p1):
        self.p0 = np.asarray(p0, dtype=float)
        self.p1 = np.asarray(p1, dtype=float)
        if np.hypot(*(self.p1 - self.p0)) == 0.0:
            raise DegenerateGeometryError("zero-length line segment", p0, p1)

    def point(self, t):
        t = np.asarray(t, dtype=float)
        return self.p0 + t[..., None] * (self.p1 - self.p0)

    def tangent(self, t):
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(self.p1 - self.p0, t.shape + (2,)).copy()

    def _xy(self, t):
        # exact endpoints, so shared vertices stay bit-identical
        if t == 0.0:
            return float(self.p0[0]), float(self.p0[1])
        if t == 1.0:
            return float(self.p1[0]), float(self.p1[1])
        return (self.p0[0] + t * (self.p1[0] - self.p0[0]),
                self.p0[1] + t * (self.p1[1] - self.p0[1]))

    def _dxy(self, t):
        return float(self.p1[0] - self.p0[0]), float(self.p1[1] - self.p0[1])

    def params(self):
        return (*self.p0, *self.p1)


class CircularArc(CurveSegment):
    kind = "arc"

    def __init__(self, center, radius, a0, a1):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.a0 = float(a0)
        self.a1 = float(a1)
        if self.radius <= 0 or self.a0 == self.a1:
            raise DegenerateGeometryError("degenerate arc", center, radius, a0, a1)

    def point(self, t):
        a = self.a0 + np.asarray(t, dtype=float) * (self.a1 - self.a0)
        return self.center + self.radius * np.stack([np.cos(a), np.sin(a)], axis=-1)

    def tangent(self, t):
        a = self.a0 + np.asarray(t, dtype=float) * (self.a1 - self.a0)
        s = self.radius * (self.a1 - self.a0)
        return s * np.stack([-np.sin(a), np.cos(a)], axis=-1)

    def _xy(self, t):
        a = self.a0 + t * (self.a1 - self.a0)
        return (self.center[0] + self.radius * math.cos(a),
                self.center[1] + self.radius * math.sin(a))

    def _dxy(self, t):
        a = self.a0 + t * (self.a1 - self.a0)
        s = self.radius * (self.a1 - self.a0)
        return -s * math.sin(a), s * math.cos(a)

    def params(self):
        return (*self.center, self.radius, self.a0, self.a1)


class QuadraticBezier(CurveSegment):
    kind = "bezier"

    def __init__(self, p0, p1, p2):
        self.ctrl = np.array([p0, p1, p2], dtype=float)

    def point(self, t):
        t = np.asarray(t, dtype=float)[..., None]
        c = self.ctrl
        return (1 - t) ** 2 * c[0] + 2 * t * (1 - t) * c[1] + t ** 2 * c[2]

    def tangent(self, t):
        t = np.asarray(t, dtype=float)[..., None]
        c = self.ctrl
        return 2 * (1 - t) * (c[1] - c[0]) + 2 * t * (c[2] - c[1])

    def _xy(self, t):
        c = self.ctrl
        if t == 0.0:
            return float(c[0, 0]), float(c[0, 1])
        if t == 1.0:
            return float(c[2, 0]), float(c[2, 1])
        u = 1.0 - t
        return (u * u * c[0, 0] + 2 * t * u * c[1, 0] + t * t * c[2, 0],
                u * u * c[0, 1] + 2 * t * u * c[1, 1] + t * t * c[2, 1])

    def _dxy(self, t):
        c = self.ctrl
        u = 1.0 - t
        return (2 * u * (c[1, 0] - c[0, 0]) + 2 * t * (c[2, 0] - c[1, 0]),
                2 * u * (c[1, 1] - c[0, 1]) + 2 * t * (c[2, 1] - c[1, 1]))

    def params(self):
        return tuple(self.ctrl.ravel())


class PolarSegment(CurveSegment):
    """``center + r(phi) (cos phi, sin phi)`` for ``phi`` in ``[phi0, phi1]``,
    optionally followed by a fixed rotation ``frame`` (2x2)."""

    kind = "polar"

    def __init__(self, radius, dradius, phi0, phi1, center=(0.0, 0.0), frame=None, label=""):
        self.radius = radius
        self.dradius = dradius
        self.phi0 = float(phi0)
        self.phi1 = float(phi1)
        self.center = np.asarray(center, dtype=float)
        self.frame = np.eye(2) if frame is None else np.asarray(frame, dtype=float)
        self.label = label

    def _local(self, t):
        phi = self.phi0 + t * (self.phi1 - self.phi0)
        r = self.radius(phi)
        return phi, r

    def point(self, t):
        phi, r = self._local(np.asarray(t, dtype=float))
        p = np.stack([r * np.cos(phi), r * np.sin(phi)], axis=-1)
        return self.center + p @ self.frame.T

    def tangent(self, t):
        phi, r = self._local(np.asarray(t, dtype=float))
        dr = self.dradius(phi)
        d = np.stack([dr * np.cos(phi) - r * np.sin(phi),
                      dr * np.sin(phi) + r * np.cos(phi)], axis=-1)
        return (self.phi1 - self.phi0) * (d @ self.frame.T)

    def _xy(self, t):
        p = self.point(np.array([t]))[0]
        return float(p[0]), float(p[1])


# ---------------------------------------------------------------------------
# piecewise curves
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SingularVertex:
    index: int            # junction between segment index-1 and index
    point: np.ndarray
    tangent_in: np.ndarray
    tangent_out: np.ndarray

    @property
    def param(self) -> float:
        return float(self.index)

    def arms(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit directions of the two curve pieces leaving the vertex."""
        a = -self.tangent_in / np.hypot(*self.tangent_in)
        b = self.tangent_out / np.hypot(*self.tangent_out)
        return a, b


@dataclass
class LineCrossings:
    """Transversal crossings of a curve with one axis-aligned line, sorted
    along the line."""

    s: np.ndarray       # global curve parameter
    along: np.ndarray   # coordinate along the line
    points: np.ndarray  # (n, 2), exact on the line


class PiecewiseCurve:
    """Chain of :class:`CurveSegment` joined end to start.

    Junctions whose one-sided tangents differ by more than ``theta_tol``
    radians are singular vertices.  The global parameter ``s`` runs over
    ``[0, n_segments]``; ``s = k + t`` is parameter ``t`` on segment ``k``.
    """

    def __init__(self, segments: Sequence[CurveSegment], closed: bool = True,
                 theta_tol: float = THETA_TOL, name: str = ""):
        if not segments:
            raise GeometryError("a curve needs at least one segment")
        self.segments = tuple(segments)
        self.closed = bool(closed)
        self.theta_tol = float(theta_tol)
        self.name = name
        n = len(self.segments)
        scale = max(1.0, self.diameter)
        joints = range(n) if closed else range(1, n)
        for k in joints:
            a = self.segments[k - 1].end
            b = self.segments[k].start
            if np.hypot(*(a - b)) > 1e-10 * scale:
                raise GeometryError(f"segments {k - 1} and {k} do not meet", a, b)
        sing = []
        for k in joints:
            tin = self.segments[k - 1].tangent(1.0)
            tout = self.segments[k].tangent(0.0)
            c = float(np.dot(tin, tout) / (np.hypot(*tin) * np.hypot(*tout)))
            ang = math.acos(max(-1.0, min(1.0, c)))
            if ang > self.theta_tol:
                sing.append(SingularVertex(k % n, self.segments[k].start.copy(), tin, tout))
        self.singular_vertices = tuple(sorted(sing, key=lambda v: v.index))
        self._line_cache: dict = {}
        self._tables: dict = {}

    # basic queries ------------------------------------------------------
    @property
    def n_segments(self) -> int:
        return len(self.segments)

    def locate(self, s: float) -> tuple[int, float]:
        n = self.n_segments
        if self.closed:
            s = s % n
        k = min(int(math.floor(s)), n - 1)
        return k, s - k

    def point(self, s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        n = self.n_segments
        if self.closed:
            s = np.mod(s, n)
        k = np.clip(np.floor(s).astype(int), 0, n - 1)
        out = np.empty(s.shape + (2,))
        for j in np.unique(k):
            m = k == j
            out[m] = self.segments[j].point(s[m] - j)
        return out

    def tangent(self, s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        n = self.n_segments
        if self.closed:
            s = np.mod(s, n)
        k = np.clip(np.floor(s).astype(int), 0, n - 1)
        out = np.empty(s.shape + (2,))
        for j in np.unique(k):
            m = k == j
            out[m] = self.segments[j].tangent(s[m] - j)
        return out

    def point_at(self, s: float) -> np.ndarray:
        k, t = self.locate(s)
        return np.array(self.segments[k]._xy(t))

    def polyline(self, per_segment: int = 256) -> np.ndarray:
        t = np.linspace(0.0, 1.0, per_segment + 1)[:-1]
        pts = [seg.point(t) for seg in self.segments]
        if not self.closed:
            pts.append(self.segments[-1].end[None, :])
        return np.vstack(pts)

    @cached_property
    def bbox(self) -> tuple[float, float, float, float]:
        p = self.polyline(512)
        return float(p[:, 0].min()), float(p[:, 0].max()), float(p[:, 1].min()), float(p[:, 1].max())

    @cached_property
    def diameter(self) -> float:
        p = np.vstack([s.point(np.linspace(0, 1, 65)) for s in self.segments])
        return float(np.hypot(np.ptp(p[:, 0]), np.ptp(p[:, 1])))

    @cached_property
    def length(self) -> float:
        return float(sum(seg.length for seg in self.segments))

    @cached_property
    def signed_area(self) -> float:
        if not self.closed:
            return 0.0
        p = self.polyline(512)
        x, y = p[:, 0], p[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    @property
    def counterclockwise(self) -> bool:
        return self.signed_area > 0

    def singular_params(self) -> list[float]:
        return [v.param for v in self.singular_vertices]

    def _table(self, k: int, axis: int):
        # monotone pieces of segment k; its end value is snapped to the start
        # of the next segment so junctions are watertight in floating point
        key = (k, axis)
        hit = self._tables.get(key)
        if hit is None:
            br, vals, _, _ = self.segments[k]._piece_table(axis)
            vals = vals.copy()
            n = self.n_segments
            if k + 1 < n or self.closed:
                vals[-1] = self.segments[(k + 1) % n].start[axis]
            lo = np.minimum(vals[:-1], vals[1:])
            hi = np.maximum(vals[:-1], vals[1:])
            hit = (br, vals, lo, hi)
            self._tables[key] = hit
        return hit

    # line crossings -----------------------------------------------------
    def line_crossings(self, axis: int, c: float) -> LineCrossings:
        """All transversal crossings with the line ``x[axis] == c``.

        Tangential touches (the curve reaches the line and turns back) are
        not crossings.  Endpoints of open curves lying on the line count.
        """
        key = (axis, float(c))
        hit = self._line_cache.get(key)
        if hit is not None:
            return hit
        res = self._compute_crossings(axis, float(c))
        if len(self._line_cache) > 200000:
            self._line_cache.clear()
        self._line_cache[key] = res
        return res

    def _compute_crossings(self, axis, c):
        n = self.n_segments
        found = {}
        for k, seg in enumerate(self.segments):
            br, vals, lo, hi = self._table(k, axis)
            cand = np.nonzero((lo <= c) & (hi >= c))[0]
            for j in cand:
                ta, tb = float(br[j]), float(br[j + 1])
                fa, fb = vals[j] - c, vals[j + 1] - c
                if fa == 0.0 and fb == 0.0:
                    raise GeometryError("curve runs along a grid line", axis, c)
                if fa == 0.0:
                    t = ta
                elif fb == 0.0:
                    t = tb
                elif fa * fb < 0:
                    def f(tt, seg=seg, ta=ta, tb=tb, fa=fa, fb=fb):
                        if tt == ta:
                            return fa
                        if tt == tb:
                            return fb
                        return seg._xy(tt)[axis] - c
                    t = brentq(f, ta, tb, xtol=1e-15, rtol=8.9e-16, maxiter=200)
                else:
                    continue
                kk, tt = k, t
                if tt == 1.0 and (k + 1 < n or self.closed):
                    kk, tt = (k + 1) % n, 0.0
                found[(kk, tt)] = True
        s_list, along, pts = [], [], []
        for (k, t) in sorted(found):
            if not self._transversal(axis, c, k, t):
                continue
            x, y = self.segments[k]._xy(t)
            p = [x, y]
            p[axis] = c
            s_list.append(k + t)
            along.append(p[1 - axis])
            pts.append(p)
        if not s_list:
            res = LineCrossings(np.zeros(0), np.zeros(0), np.zeros((0, 2)))
        else:
            o = np.argsort(np.asarray(along), kind="stable")
            res = LineCrossings(np.asarray(s_list)[o], np.asarray(along)[o], np.asarray(pts)[o])
        return res

    def _transversal(self, axis, c, k, t):
        seg = self.segments[k]
        br, vals, _, _ = self._table(k, axis)
        idx = np.searchsorted(br, t)
        on_break = idx < len(br) and br[idx] == t
        if not on_break:
            return True
        n = self.n_segments
        # value just after the root
        if idx < len(br) - 1:
            after = vals[idx + 1] - c
        elif k + 1 < n or self.closed:
            nb, nv, _, _ = self._table((k + 1) % n, axis)
            after = nv[1] - c
        else:
            return True
        # value just before the root
        if idx > 0:
            before = vals[idx - 1] - c
        elif k > 0 or self.closed:
            pb, pv, _, _ = self._table((k - 1) % n, axis)
            before = pv[-2] - c
        else:
            return True
        if before == 0.0 or after == 0.0:
            raise GeometryError("curve runs along a grid line", axis, c)
        return (before > 0) != (after > 0)

    # ray casting ----------------------------------------------------------
    def crossings_right_of(self, x: float, y: float) -> tuple[int, float]:
        """Number of crossings of the ray ``{(t, y): t >= x}`` and the
        distance (along the line) of the closest crossing."""
        lc = self.line_crossings(1, y)
        if lc.along.size == 0:
            return 0, math.inf
        i = int(np.searchsorted(lc.along, x, side="left"))
        near = float(np.min(np.abs(lc.along - x)))
        return lc.along.size - i, near

    def contains(self, x: float, y: float) -> bool:
        if not self.closed:
            raise GeometryError("containment needs a closed curve")
        bx0, bx1, by0, by1 = self.bbox
        pad = 1e-9 * max(1.0, self.diameter)
        if x < bx0 - pad or x > bx1 + pad or y < by0 - pad or y > by1 + pad:
            return False
        cnt, _ = self.crossings_right_of(x, y)
        return cnt % 2 == 1


# ---------------------------------------------------------------------------
# domain description
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CurveSpec:
    """A curve together with the subdomain labels on its two sides.

    Label 0 means "outside the physical domain"; a curve with a zero label on
    one side is part of the boundary, otherwise it is an interface.
    """

    curve: PiecewiseCurve
    left: int
    right: int

    @property
    def is_interface(self) -> bool:
        return self.left != 0 and self.right != 0

    @property
    def minus(self) -> int:
        """Label whose outward normal defines ``n`` (Omega_1 on interfaces)."""
        if self.is_interface:
            return min(self.left, self.right)
        return self.left or self.right

    @property
    def plus(self) -> int:
        return self.right if self.minus == self.left else self.left

    def normal(self, tangent: np.ndarray) -> np.ndarray:
        """Unit normal pointing from the minus side to the plus side."""
        t = np.asarray(tangent, dtype=float)
        t = t / np.linalg.norm(t, axis=-1, keepdims=True)
        right = np.stack([t[..., 1], -t[..., 0]], axis=-1)
        return right if self.minus == self.left else -right


@dataclass
class DomainConfig:
    """Background box, curves, and piecewise constant coefficient.

    ``background`` is the label of points outside every closed curve.  When
    it is nonzero the box sides belong to the boundary and carry Dirichlet
    data.  ``label_fn`` overrides ray casting (needed for open curves).
    """

    box: tuple[float, float, float, float]
    curves: tuple[CurveSpec, ...]
    coefficients: dict
    background: int = 2
    label_fn: Callable | None = None
    name: str = ""
    _point_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.curves = tuple(self.curves)
        for lab, a in self.coefficients.items():
            if not a > 0:
                raise ValueError(f"coefficient of subdomain {lab} must be positive")
        for cs in self.curves:
            if not cs.curve.closed and self.label_fn is None:
                raise GeometryError("open curves need an explicit label function")
            if not cs.curve.closed:
                self._check_open_ends(cs.curve)

    def _check_open_ends(self, curve):
        x0, x1, y0, y1 = self.box
        tol = self.eps_geom
        for p in (curve.segments[0].start, curve.segments[-1].end):
            on = (abs(p[0] - x0) <= tol or abs(p[0] - x1) <= tol
                  or abs(p[1] - y0) <= tol or abs(p[1] - y1) <= tol)
            if not on:
                raise GeometryError("an open curve must end on the outer box", p)

    @property
    def diameter(self) -> float:
        x0, x1, y0, y1 = self.box
        return math.hypot(x1 - x0, y1 - y0)

    @property
    def eps_geom(self) -> float:
        return 1e-12 * self.diameter

    @property
    def box_is_boundary(self) -> bool:
        return self.background != 0

    @property
    def labels_present(self) -> list[int]:
        labs = {self.background}
        for cs in self.curves:
            labs.update((cs.left, cs.right))
        return sorted(lab for lab in labs if lab != 0)

    def coefficient(self, label: int) -> float:
        return float(self.coefficients.get(label, 0.0))

    def label(self, x: float, y: float) -> int:
        key = (x, y)
        hit = self._point_cache.get(key)
        if hit is not None:
            return hit
        if self.label_fn is not None:
            lab = int(self.label_fn(np.array([x]), np.array([y]))[0])
        else:
            lab = self.background
            best = math.inf
            for cs in self.curves:
                c = cs.curve
                if c.contains(x, y):
                    area = abs(c.signed_area)
                    if area < best:
                        best = area
                        lab = cs.left if c.counterclockwise else cs.right
        if len(self._point_cache) > 2_000_000:
            self._point_cache.clear()
        self._point_cache[key] = lab
        return lab

    def labels(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        if self.label_fn is not None:
            return np.asarray(self.label_fn(pts[:, 0], pts[:, 1]), dtype=int)
        return np.array([self.label(float(x), float(y)) for x, y in pts], dtype=int)

    def singular_points(self) -> list[tuple[int, SingularVertex]]:
        return [(i, v) for i, cs in enumerate(self.curves) for v in cs.curve.singular_vertices]


# ---------------------------------------------------------------------------
# elementary queries
# ---------------------------------------------------------------------------

def classify_point(curve: PiecewiseCurve, p, eps: float | None = None) -> str:
    """``'inside'``, ``'outside'`` or ``'on-curve'`` for a closed curve."""
    if not curve.closed:
        raise GeometryError("classify_point needs a closed curve")
    x, y = float(p[0]), float(p[1])
    eps = 1e-12 * max(1.0, curve.diameter) if eps is None else eps
    cnt, near = curve.crossings_right_of(x, y)
    if near <= eps:
        return "on-curve"
    return "inside" if cnt % 2 == 1 else "outside"


def edge_intersections(seg: CurveSegment, e) -> list[tuple[float, np.ndarray]]:
    """Transversal intersections of one smooth piece with an axis-aligned edge.

    ``e`` is ``((x0, y0), (x1, y1))``.  A hit at an edge endpoint belongs to
    the edge that *starts* there (half-open ``[lo, hi)`` along the line), so
    a vertex hit is reported by exactly one of two collinear edges.
    """
    (x0, y0), (x1, y1) = e
    if x0 == x1 and y0 == y1:
        raise DegenerateGeometryError("edge has zero length", e)
    if x0 != x1 and y0 != y1:
        raise GeometryError("edge must be axis aligned", e)
    axis = 0 if x0 == x1 else 1
    c = x0 if axis == 0 else y0
    lo, hi = (min(y0, y1), max(y0, y1)) if axis == 0 else (min(x0, x1), max(x0, x1))
    curve = PiecewiseCurve([seg], closed=False)
    lc = curve.line_crossings(axis, c)
    out = []
    for s, a, p in zip(lc.s, lc.along, lc.points):
        if lo <= a < hi:
            out.append((float(s), p.copy()))
    out.sort(key=lambda r: r[0])
    return out


def _point_segment_distance(pts, a, b):
    ab = b - a
    L2 = float(ab @ ab)
    t = np.clip(((pts - a) @ ab) / L2, 0.0, 1.0)
    proj = a + t[..., None] * ab
    return np.hypot(*(pts - proj).T)


def chord_deviation(arc, chord, apex, n_chord: int = 65, n_arc: int = 257) -> float:
    """One-sided Hausdorff distance from a chord to its arc, divided by the
    distance of ``apex`` to the chord.

    ``arc`` is a callable mapping ``tau in [0, 1]`` (vectorised) to points,
    or an ``(m, 2)`` polyline.
    """
    a = np.asarray(chord[0], dtype=float)
    b = np.asarray(chord[1], dtype=float)
    L = math.hypot(*(b - a))
    if L < 1e-12 * max(1.0, np.abs(np.concatenate([a, b])).max()):
        raise DegenerateGeometryError("degenerate chord", a, b)
    if callable(arc):
        poly = np.asarray(arc(np.linspace(0.0, 1.0, n_arc)), dtype=float)
    else:
        poly = np.asarray(arc, dtype=float)
    tau = np.linspace(0.0, 1.0, n_chord)
    cs = a + tau[:, None] * (b - a)
    # distance of every chord sample to every arc polyline piece
    p0 = poly[:-1][None, :, :]
    p1 = poly[1:][None, :, :]
    d = p1 - p0
    L2 = np.einsum("ijk,ijk->ij", d, d)
    L2 = np.where(L2 == 0.0, 1.0, L2)
    w = cs[:, None, :] - p0
    t = np.clip(np.einsum("ijk,ijk->ij", w, d) / L2, 0.0, 1.0)
    proj = p0 + t[..., None] * d
    dist = np.hypot(*(cs[:, None, :] - proj).transpose(2, 0, 1)).min(axis=1)
    dh = float(dist.max())
    dA = float(_point_segment_distance(np.asarray(apex, dtype=float)[None, :], a, b)[0])
    if dA == 0.0:
        raise DegenerateGeometryError("apex lies on the chord", apex)
    return dh / dA


# ---------------------------------------------------------------------------
# benchmark curves
# ---------------------------------------------------------------------------

def _rotation(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def lens_curve(theta: float = 2 * math.pi / 5) -> PiecewiseCurve:
    """Boundary of the intersection of the unit discs centred at
    ``(+-1/2, 0)`` in rotated coordinates; corners at ``(0, +-sqrt(3)/2)``."""
    R = _rotation(theta)
    cr = R @ np.array([-0.5, 0.0])
    cl = R @ np.array([0.5, 0.0])
    right = CircularArc(cr, 1.0, -math.pi / 3 + theta, math.pi / 3 + theta)
    left = CircularArc(cl, 1.0, 2 * math.pi / 3 + theta, 4 * math.pi / 3 + theta)
    return PiecewiseCurve([right, left], closed=True, name="lens")


def five_star_curve() -> PiecewiseCurve:
    """Polar curve ``r = q(theta)`` of the five-pointed star."""
    segs = []
    for j in range(5):
        c = 3 * math.pi / 10 + 2 * math.pi * j / 5
        lo = math.pi / 10 + 2 * math.pi * j / 5
        hi = math.pi / 2 + 2 * math.pi * j / 5
        segs.append(PolarSegment(
            (lambda phi, c=c: 2.0 * (phi - c) ** 2 + 4.0 / 9.0),
            (lambda phi, c=c: 4.0 * (phi - c)),
            lo, hi, label=f"star{j}"))
    return PiecewiseCurve(segs, closed=True, name="five-star")


def _rhombus_frame(b1, b2):
    # (s, t) = (b1 x + b2 y, -b2 x + b1 y)  ->  x = frame @ (s, t)
    return np.array([[b1, -b2], [b2, b1]])


def rhombus_curve(alpha=math.sqrt(5.0), beta=math.sqrt(2.0 / 3.0),
                  b1=0.5, b2=math.sqrt(3.0) / 2) -> PiecewiseCurve:
    """``alpha |s| + beta |t| = 1`` in the rotated frame (four straight sides)."""
    F = _rhombus_frame(b1, b2)
    v = [F @ np.array(p) for p in ((1 / alpha, 0.0), (0.0, 1 / beta), (-1 / alpha, 0.0), (0.0, -1 / beta))]
    segs = [LineSegment(v[i], v[(i + 1) % 4]) for i in range(4)]
    return PiecewiseCurve(segs, closed=True, name="rhombus")


def smoothed_rhombus_curve(eps: float, alpha=math.sqrt(5.0), beta=math.sqrt(2.0 / 3.0),
                           b1=0.5, b2=math.sqrt(3.0) / 2) -> PiecewiseCurve:
    """``alpha sqrt(s^2+eps) + beta sqrt(t^2+eps) = 1`` as a polar curve."""
    if not (alpha + beta) * math.sqrt(eps) < 1.0:
        raise GeometryError("smoothing parameter too large: the curve is empty")

    def F(r, c, s):
        return alpha * np.sqrt((r * c) ** 2 + eps) + beta * np.sqrt((r * s) ** 2 + eps) - 1.0

    def Fr(r, c, s):
        return (alpha * r * c * c / np.sqrt((r * c) ** 2 + eps)
                + beta * r * s * s / np.sqrt((r * s) ** 2 + eps))

    def radius(phi):
        phi = np.asarray(phi, dtype=float)
        c, s = np.cos(phi), np.sin(phi)
        r = 1.0 / (alpha * np.abs(c) + beta * np.abs(s))   # F(r) >= 0 here
        for _ in range(100):
            step = F(r, c, s) / Fr(r, c, s)
            r = r - step
            if np.all(np.abs(step) <= 1e-16 * np.abs(r)):
                break
        return r

    def dradius(phi):
        phi = np.asarray(phi, dtype=float)
        c, s = np.cos(phi), np.sin(phi)
        r = radius(phi)
        qa = np.sqrt((r * c) ** 2 + eps)
        qb = np.sqrt((r * s) ** 2 + eps)
        Fphi = -alpha * r * r * c * s / qa + beta * r * r * s * c / qb
        return -Fphi / Fr(r, c, s)

    F0 = _rhombus_frame(b1, b2)
    segs = [PolarSegment(radius, dradius, k * math.pi / 2, (k + 1) * math.pi / 2, frame=F0,
                         label=f"smooth{k}") for k in range(4)]
    return PiecewiseCurve(segs, closed=True, name=f"smoothed-rhombus({eps:g})")


def circle_curve(center=(0.0, 0.0), radius=1.0, pieces: int = 4) -> PiecewiseCurve:
    segs = [CircularArc(center, radius, 2 * math.pi * k / pieces, 2 * math.pi * (k + 1) / pieces)
            for k in range(pieces)]
    return PiecewiseCurve(segs, closed=True, name="circle")


def polygon_curve(vertices, closed=True) -> PiecewiseCurve:
    v = [np.asarray(p, dtype=float) for p in vertices]
    n = len(v)
    segs = [LineSegment(v[i], v[(i + 1) % n]) for i in range(n if closed else n - 1)]
    return PiecewiseCurve(segs, closed=closed, name="polygon")


# ---------------------------------------------------------------------------
# curve files
# ---------------------------------------------------------------------------

_SEGMENT_ARITY = {"line": 4, "arc": 5, "bezier": 6}


def read_curve_file(path) -> list[tuple[PiecewiseCurve, int, int]]:
    """Parse a curve description file.

    ``curve <left> <right> [open]`` starts a new curve whose left/right
    labels are given; each following line is one segment::

        line x0 y0 x1 y1
        arc cx cy r a0 a1
        bezier x0 y0 x1 y1 x2 y2

    Blank lines and ``#`` comments are ignored.
    """
    curves = []
    current = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tok = line.split()
            head = tok[0].lower()
            if head == "curve":
                if len(tok) not in (3, 4):
                    raise ValueError(f"line {lineno}: expected 'curve <left> <right> [open]'")
                current = {"left": int(tok[1]), "right": int(tok[2]),
                           "closed": not (len(tok) == 4 and tok[3] == "open"), "segs": []}
                curves.append(current)
                continue
            if head not in _SEGMENT_ARITY:
                raise ValueError(f"line {lineno}: unknown segment type {tok[0]!r}")
            if current is None:
                raise ValueError(f"line {lineno}: segment before any 'curve' header")
            vals = [float(v) for v in tok[1:]]
            if len(vals) != _SEGMENT_ARITY[head]:
                raise ValueError(f"line {lineno}: {head} takes {_SEGMENT_ARITY[head]} numbers")
            if head == "line":
                current["segs"].append(LineSegment(vals[:2], vals[2:]))
            elif head == "arc":
                current["segs"].append(CircularArc(vals[:2], vals[2], vals[3], vals[4]))
            else:
                current["segs"].append(QuadraticBezier(vals[:2], vals[2:4], vals[4:]))
    return [(PiecewiseCurve(c["segs"], closed=c["closed"]), c["left"], c["right"]) for c in curves]


def write_curve_file(path, curves: Sequence[tuple[PiecewiseCurve, int, int]]) -> None:
    with open(path, "w") as fh:
        for curve, left, right in curves:
            fh.write(f"curve {left} {right}{'' if curve.closed else ' open'}\n")
            for seg in curve.segments:
                if seg.kind not in _SEGMENT_ARITY:
                    raise ValueError(f"segment kind {seg.kind!r} has no text form")
                fh.write(seg.kind + " " + " ".join(repr(float(v)) for v in seg.params()) + "\n")
