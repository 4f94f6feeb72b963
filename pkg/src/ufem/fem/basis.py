"""Nodal Lagrange bases on the unit square (tensor Q_p) and on triangles (P_p).

Nodes are equispaced so that the trace of either element on one of its edges
is the 1D Lagrange interpolant through the same ``p + 1`` edge points; that is
what glues rectangles and triangles together across shared edges.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

__all__ = ["Lagrange1D", "QuadBasis", "TriBasis", "quad_basis", "tri_basis"]


class Lagrange1D:
    """Equispaced Lagrange polynomials on [0, 1]."""

    def __init__(self, p: int):
        self.p = p
        self.nodes = np.linspace(0.0, 1.0, p + 1)
        # coefficients in the monomial basis, column k = polynomial k
        V = np.vander(self.nodes, p + 1, increasing=True)
        self.coef = np.linalg.inv(V)

    def _powers(self, t, der):
        t = np.asarray(t, dtype=float)
        p = self.p
        out = np.zeros(t.shape + (p + 1,))
        for k in range(der, p + 1):
            fac = 1.0
            for m in range(der):
                fac *= k - m
            out[..., k] = fac * t ** (k - der)
        return out

    def __call__(self, t, der: int = 0):
        """Values (or derivatives) of all p+1 polynomials, shape ``t.shape + (p+1,)``."""
        return self._powers(t, der) @ self.coef


class QuadBasis:
    """Q_p on the unit square; local node ``i + (p+1) j`` sits at ``(i/p, j/p)``."""

    def __init__(self, p: int):
        self.p = p
        self.n = (p + 1) ** 2
        self.line = Lagrange1D(p)
        t = self.line.nodes
        self.nodes = np.array([(t[i], t[j]) for j in range(p + 1) for i in range(p + 1)])
        ij = [(i, j) for j in range(p + 1) for i in range(p + 1)]
        self.ij = np.array(ij)

    def edge_nodes(self):
        """Local node indices along the four sides, ordered by increasing coordinate.

        Order of sides: x = 0, x = 1, y = 0, y = 1.
        """
        p = self.p
        idx = np.arange(self.n).reshape(p + 1, p + 1)   # [j, i]
        return [idx[:, 0], idx[:, p], idx[0, :], idx[p, :]]

    def eval(self, xi, eta, der: int = 1):
        """Values, reference gradients and (if der == 2) reference Hessians.

        ``xi``/``eta`` have shape (..., ); returns arrays with a trailing
        basis axis: ``v``, ``gx``, ``gy``, and ``hxx``, ``hxy``, ``hyy``.
        """
        L0x, L0y = self.line(xi), self.line(eta)
        i, j = self.ij[:, 0], self.ij[:, 1]
        out = {"v": L0x[..., i] * L0y[..., j]}
        if der >= 1:
            L1x, L1y = self.line(xi, 1), self.line(eta, 1)
            out["gx"] = L1x[..., i] * L0y[..., j]
            out["gy"] = L0x[..., i] * L1y[..., j]
        if der >= 2:
            L2x, L2y = self.line(xi, 2), self.line(eta, 2)
            out["hxx"] = L2x[..., i] * L0y[..., j]
            out["hxy"] = L1x[..., i] * L1y[..., j]
            out["hyy"] = L0x[..., i] * L2y[..., j]
        return out


class TriBasis:
    """P_p on the reference triangle (0,0), (1,0), (0,1).

    Node ``(i, j)`` sits at ``(i/p, j/p)``; the basis is built from monomials
    through the inverse Vandermonde matrix, so it can be evaluated anywhere
    in the plane (the extension of a polynomial beyond its triangle).
    """

    def __init__(self, p: int):
        self.p = p
        self.ij = np.array([(i, j) for j in range(p + 1) for i in range(p + 1 - j)])
        self.n = len(self.ij)
        self.nodes = self.ij / p
        self.mono = [(a, b) for a in range(p + 1) for b in range(p + 1 - a)]
        V = self._monomials(self.nodes[:, 0], self.nodes[:, 1], 0, 0)
        self.coef = np.linalg.inv(V)

    def _monomials(self, x, y, dx, dy):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = np.zeros(x.shape + (len(self.mono),))
        for k, (a, b) in enumerate(self.mono):
            if a < dx or b < dy:
                continue
            ca = 1.0
            for m in range(dx):
                ca *= a - m
            cb = 1.0
            for m in range(dy):
                cb *= b - m
            out[..., k] = ca * cb * x ** (a - dx) * y ** (b - dy)
        return out

    def edge_nodes(self):
        """Local node indices on edges V0V1, V0V2, V1V2, ordered away from the
        first named vertex."""
        p = self.p
        pos = {tuple(ij): k for k, ij in enumerate(self.ij.tolist())}
        e01 = [pos[(i, 0)] for i in range(p + 1)]
        e02 = [pos[(0, j)] for j in range(p + 1)]
        e12 = [pos[(p - j, j)] for j in range(p + 1)]
        return [np.array(e01), np.array(e02), np.array(e12)]

    def eval(self, xi, eta, der: int = 1):
        out = {"v": self._monomials(xi, eta, 0, 0) @ self.coef}
        if der >= 1:
            out["gx"] = self._monomials(xi, eta, 1, 0) @ self.coef
            out["gy"] = self._monomials(xi, eta, 0, 1) @ self.coef
        if der >= 2:
            out["hxx"] = self._monomials(xi, eta, 2, 0) @ self.coef
            out["hxy"] = self._monomials(xi, eta, 1, 1) @ self.coef
            out["hyy"] = self._monomials(xi, eta, 0, 2) @ self.coef
        return out


@lru_cache(maxsize=None)
def quad_basis(p: int) -> QuadBasis:
    return QuadBasis(p)


@lru_cache(maxsize=None)
def tri_basis(p: int) -> TriBasis:
    return TriBasis(p)


def push_forward(ref: dict, jac_inv: np.ndarray) -> dict:
    """Physical derivatives from reference ones under an affine map.

    ``jac_inv`` is the 2x2 matrix ``d(xi, eta) / d(x, y)``.
    """
    (a, b), (c, d) = jac_inv       # xi_x, xi_y ; eta_x, eta_y
    out = {"v": ref["v"]}
    if "gx" in ref:
        out["gx"] = a * ref["gx"] + c * ref["gy"]
        out["gy"] = b * ref["gx"] + d * ref["gy"]
    if "hxx" in ref:
        hxx, hxy, hyy = ref["hxx"], ref["hxy"], ref["hyy"]
        out["hxx"] = a * a * hxx + 2 * a * c * hxy + c * c * hyy
        out["hyy"] = b * b * hxx + 2 * b * d * hxy + d * d * hyy
        out["hxy"] = a * b * hxx + (a * d + b * c) * hxy + c * d * hyy
    return out
