"""Randomised reliability checks for the merging pipeline."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..geometry import (CircularArc, CurveSpec, DomainConfig, LineSegment, PiecewiseCurve,
                        QuadraticBezier)
from ..merging import MergeError, induce
from ..mesh import QuadtreeMesh


def _arc_through(p, q, bulge):
    """Circular arc from ``p`` to ``q`` whose midpoint sits ``bulge`` times
    the chord length to the left of the chord."""
    c = q - p
    L = math.hypot(*c)
    s = bulge * L                       # signed sagitta
    r = (L * L / 4 + s * s) / (2 * abs(s))
    nrm = np.array([-c[1], c[0]]) / L
    mid = (p + q) / 2
    center = mid + nrm * (s - math.copysign(r, s))
    a0 = math.atan2(*(p - center)[::-1])
    a1 = math.atan2(*(q - center)[::-1])
    if s > 0:   # arc bends left of the chord: turn clockwise from p to q
        while a1 > a0:
            a1 -= 2 * math.pi
    else:
        while a1 < a0:
            a1 += 2 * math.pi
    return CircularArc(center, r, a0, a1)


def _star_shaped(curve: PiecewiseCurve, center, min_radius) -> bool:
    p = curve.polyline(64) - center
    if np.min(np.hypot(p[:, 0], p[:, 1])) < min_radius:
        return False
    a = np.unwrap(np.arctan2(p[:, 1], p[:, 0]))
    a = np.r_[a, a[0] + 2 * np.pi]
    return bool(np.all(np.diff(a) > 0))


def random_star_curve(rng: np.random.Generator, n_corners=None) -> PiecewiseCurve:
    """Random star-shaped closed curve with 3 to 9 corners joined by line,
    circular and parabolic edges, randomly rotated and scaled."""
    n = int(n_corners or rng.integers(3, 10))
    for _ in range(100):
        curve, center, scale = _random_star_try(rng, n)
        if _star_shaped(curve, center, 0.2 * scale):
            return curve
    raise RuntimeError("could not draw a simple star-shaped curve")


def _random_star_try(rng, n):
    while True:
        gaps = rng.uniform(0.5, 1.0, n)
        ang = np.cumsum(gaps) / gaps.sum() * 2 * math.pi + rng.uniform(0, 2 * math.pi)
        if np.min(np.diff(np.r_[ang, ang[0] + 2 * math.pi])) > 2 * math.pi / (2.5 * n):
            break
    scale = rng.uniform(0.6, 1.0)
    rad = scale * rng.uniform(0.6, 1.0, n)
    center = rng.uniform(-0.1, 0.1, 2)
    pts = np.c_[rad * np.cos(ang), rad * np.sin(ang)] + center
    segs = []
    for k in range(n):
        p, q = pts[k], pts[(k + 1) % n]
        kind = rng.integers(3)
        bulge = rng.uniform(0.05, 0.2) * rng.choice([-1.0, 1.0])
        if kind == 0:
            segs.append(LineSegment(p, q))
        elif kind == 1:
            segs.append(_arc_through(p, q, bulge))
        else:
            c = q - p
            ctrl = (p + q) / 2 + 2 * bulge * np.array([-c[1], c[0]])
            segs.append(QuadraticBezier(p, ctrl, q))
    return PiecewiseCurve(segs, closed=True), center, scale


def random_mesh(rng: np.random.Generator, box) -> QuadtreeMesh:
    n = int(rng.choice([4, 8]))
    mesh = QuadtreeMesh(box, n, n)
    for _ in range(int(rng.integers(0, 4))):
        leaves = sorted(mesh.leaves)
        pick = rng.choice(len(leaves), size=min(len(leaves), int(rng.integers(1, 6))), replace=False)
        mesh.refine([leaves[i] for i in pick])
    return mesh


@dataclass
class FuzzReport:
    trials: int = 0
    passed: int = 0
    failures: list = field(default_factory=list)
    seconds: float = 0.0
    macros: int = 0
    patterns: int = 0

    @property
    def ok(self) -> bool:
        return self.passed == self.trials

    def summary(self) -> str:
        return (f"{self.passed}/{self.trials} trials valid, {self.patterns} singular patterns, "
                f"{self.macros} macros, {self.seconds:.1f}s")


def fuzz_merging(seed: int = 0, trials: int = 100, box=(-1.5, 1.5, -1.5, 1.5)) -> FuzzReport:
    """Run the merging pipeline on random geometries and check every
    invariant of the produced induced meshes."""
    rep = FuzzReport()
    t0 = time.perf_counter()
    for k in range(trials):
        rng = np.random.default_rng([seed, k])
        curve = random_star_curve(rng)
        boundary = bool(rng.integers(2))
        left = 1 if curve.counterclockwise else 2
        if boundary:
            spec = CurveSpec(curve, *((1, 0) if left == 1 else (0, 1)))
            domain = DomainConfig(box, [spec], {1: 1.0}, background=0)
        else:
            spec = CurveSpec(curve, left, 3 - left)
            domain = DomainConfig(box, [spec], {1: 1.0, 2: 10.0}, background=2)
        mesh = random_mesh(rng, box)
        rep.trials += 1
        try:
            ind = induce(mesh, domain)
            bad = ind.violations()
            if len(ind.patterns) != len(domain.singular_points()):
                bad.append(("pattern count", len(ind.patterns)))
        except MergeError as exc:
            bad = [("error", str(exc))]
        if bad:
            rep.failures.append((k, bad[:3]))
        else:
            rep.passed += 1
            rep.macros += len(ind)
            rep.patterns += len(ind.patterns)
    rep.seconds = time.perf_counter() - t0
    return rep
