"""Benchmark problems: the lens, the five-pointed star interface, the rhombus
hole and its smoothed version, and a straight-interface patch test."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..geometry import (CurveSpec, DomainConfig, five_star_curve, lens_curve, polygon_curve,
                        rhombus_curve, smoothed_rhombus_curve)

__all__ = ["ProblemSpec", "PROBLEMS", "get_problem", "lens_solution", "patch_problem", "modeling_sigma",
           "RHOMBUS_ALPHA", "RHOMBUS_BETA", "X_STAR"]

LENS_THETA = 2 * math.pi / 5
RHOMBUS_ALPHA = math.sqrt(5.0)
RHOMBUS_BETA = math.sqrt(2.0 / 3.0)
X_STAR = (math.sqrt(2.0), math.sqrt(2.0))


@dataclass
class ProblemSpec:
    name: str
    domain: DomainConfig
    f: Callable
    g: Callable | None = None
    g_grad: Callable | None = None
    exact: tuple | None = None          # (u, grad u)
    n0: int = 8
    description: str = ""

    @property
    def singular_points(self):
        return [v.point for _, v in self.domain.singular_points()]


def _sides(curve, inside, outside):
    """CurveSpec with ``inside`` on the bounded side of a closed curve."""
    return CurveSpec(curve, inside, outside) if curve.counterclockwise else CurveSpec(curve, outside, inside)


def _zero(x, y):
    return np.zeros(np.broadcast(x, y).shape)


def _zero_grad(x, y):
    z = _zero(x, y)
    return z, z


# ---------------------------------------------------------------------------
# the lens
# ---------------------------------------------------------------------------

def lens_solution(theta: float = LENS_THETA):
    """``Re[(z^2 + 3/4)^(1/2)] / sqrt(2)`` in the rotated frame and its gradient.

    The principal square root has its cut on the negative real axis, which
    maps outside the lens.
    """
    c, s = math.cos(theta), math.sin(theta)

    def z_of(x, y):
        return (c * x + s * y) + 1j * (-s * x + c * y)

    def u(x, y):
        z = z_of(np.asarray(x, float), np.asarray(y, float))
        return np.real(np.sqrt(z * z + 0.75)) / math.sqrt(2.0)

    def grad(x, y):
        z = z_of(np.asarray(x, float), np.asarray(y, float))
        d = z / np.sqrt(z * z + 0.75) / math.sqrt(2.0)
        u_xi, u_eta = np.real(d), -np.imag(d)
        return c * u_xi - s * u_eta, s * u_xi + c * u_eta

    return u, grad


def _lens_domain():
    return DomainConfig((-1.0, 1.0, -1.0, 1.0), [_sides(lens_curve(LENS_THETA), 1, 0)], {1: 1.0},
                        background=0, name="lens")


def _ex1(oscillating: bool) -> ProblemSpec:
    u1, g1 = lens_solution()
    if not oscillating:
        return ProblemSpec("ex1_u1", _lens_domain(), _zero, u1, g1, (u1, g1), 8,
                           "lens domain, harmonic solution singular at both corners")

    def u(x, y):
        return u1(x, y) + np.cos(20 * x * y)

    def grad(x, y):
        gx, gy = g1(x, y)
        s = np.sin(20 * x * y)
        return gx - 20 * y * s, gy - 20 * x * s

    def f(x, y):
        return 400.0 * (x * x + y * y) * np.cos(20 * x * y)

    return ProblemSpec("ex1_u2", _lens_domain(), f, u, grad, (u, grad), 8,
                       "lens domain, singular plus oscillating solution")


# ---------------------------------------------------------------------------
# five-pointed star interface
# ---------------------------------------------------------------------------

def _ex2(oscillating: bool) -> ProblemSpec:
    dom = DomainConfig((-2.0, 2.0, -2.0, 2.0), [_sides(five_star_curve(), 1, 2)], {1: 10.0, 2: 1.0},
                       background=2, name="five-star")
    if oscillating:
        f = lambda x, y: np.cos(20 * x * y)
    else:
        f = lambda x, y: np.ones(np.broadcast(x, y).shape)
    return ProblemSpec("ex2_f2" if oscillating else "ex2_f1", dom, f, _zero, _zero_grad, None, 8,
                       "five-pointed star interface, coefficients 10 inside and 1 outside")


# ---------------------------------------------------------------------------
# rhombus hole, sharp and smoothed
# ---------------------------------------------------------------------------

def rhombus_domain(eps: float | None = None) -> DomainConfig:
    """The box (-2, 2)^2 minus the rhombus, or minus its smoothed version."""
    curve = rhombus_curve(RHOMBUS_ALPHA, RHOMBUS_BETA) if eps is None else \
        smoothed_rhombus_curve(eps, RHOMBUS_ALPHA, RHOMBUS_BETA)
    return DomainConfig((-2.0, 2.0, -2.0, 2.0), [_sides(curve, 0, 1)], {1: 1.0}, background=1,
                        name="rhombus" if eps is None else f"smoothed-rhombus-{eps:g}")


def _ex3(eps: float | None = None) -> ProblemSpec:
    one = lambda x, y: np.ones(np.broadcast(x, y).shape)
    return ProblemSpec("ex3" if eps is None else f"ex3_eps{eps:g}", rhombus_domain(eps), one, _zero,
                       _zero_grad, None, 8, "unit source in the box minus a rhombus")


def modeling_sigma() -> float:
    """Rate exponent ``(p1 - 2) / (2 p1)`` of the corner singularity.

    Near a reentrant corner of angle ``theta`` the gradient behaves like
    ``r^(pi/theta - 1)``, which lies in ``L^q`` for ``q < 2 / (1 - pi/theta)``.
    """
    theta = 2 * math.pi - 2 * math.atan(math.sqrt(3.0 / 10.0))
    p1 = 2.0 / (1.0 - math.pi / theta)
    return (p1 - 2.0) / (2.0 * p1)


# ---------------------------------------------------------------------------
# patch test
# ---------------------------------------------------------------------------

def patch_problem(x0: float = 0.3, a1: float = 2.0, a2: float = 1.0, slope: float = 1.0,
                  ty: float = 0.5, c: float = 0.1) -> ProblemSpec:
    """Straight interface ``x = x0`` in the unit square and a piecewise
    linear solution whose flux ``a du/dx`` is continuous."""
    curve = polygon_curve([(x0, -1.0), (2.0, -1.0), (2.0, 2.0), (x0, 2.0)])
    dom = DomainConfig((0.0, 1.0, 0.0, 1.0), [_sides(curve, 2, 1)], {1: a1, 2: a2}, background=1,
                       name="patch")
    s1, s2 = slope, slope * a1 / a2

    def u(x, y):
        x = np.asarray(x, float)
        return np.where(x < x0, s1, s2) * (x - x0) + ty * np.asarray(y, float) + c

    def grad(x, y):
        x = np.asarray(x, float)
        shape = np.broadcast(x, y).shape
        return np.where(x < x0, s1, s2) * np.ones(shape), ty * np.ones(shape)

    return ProblemSpec("patch_test", dom, _zero, u, grad, (u, grad), 4,
                       "straight interface with a piecewise linear solution")


PROBLEMS = {
    "ex1_u1": lambda: _ex1(False),
    "ex1_u2": lambda: _ex1(True),
    "ex2_f1": lambda: _ex2(False),
    "ex2_f2": lambda: _ex2(True),
    "ex3": lambda: _ex3(None),
    "patch_test": patch_problem,
}


def get_problem(name: str, **kw) -> ProblemSpec:
    if name.startswith("ex3_eps"):
        return _ex3(float(name[len("ex3_eps"):]))
    try:
        return PROBLEMS[name](**kw)
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None
