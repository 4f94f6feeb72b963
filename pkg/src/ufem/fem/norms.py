"""Evaluation of discrete fields and the DG error norm."""
from __future__ import annotations

import math

import numpy as np

from .space import DofMap
from .system import _call, _call_grad, _rect_reference, face_quadrature

__all__ = ["face_alpha", "rect_fields", "element_fields", "evaluate", "dg_error"]


def face_alpha(fq, p: int, alpha0: float) -> float:
    return alpha0 * fq.a_hat * fq.theta_hat * p * p / fq.h


def rect_fields(dofs: DofMap, node_values, elements=None, n=None, der=1):
    """Quadrature points, weights and values/derivatives of the field on
    rectangles, batched: arrays of shape ``(n_elements, n_points)``."""
    p = dofs.p
    n = n or p + 3
    el = np.arange(dofs.n_rect) if elements is None else np.asarray(elements, dtype=np.int64)
    from .basis import quad_basis
    from ..cutcell import gauss01
    g, w = gauss01(n)
    X, Y = np.meshgrid(g, g, indexing="ij")
    xr, yr = X.ravel(), Y.ravel()
    ev = quad_basis(p).eval(xr, yr, der)
    b = dofs.rect_bounds[el]
    hx, hy = b[:, 1] - b[:, 0], b[:, 3] - b[:, 2]
    coef = np.asarray(node_values)[dofs.rect_nodes[el]]            # (ne, nloc)
    out = {"pts": np.stack([b[:, :1] + xr * hx[:, None], b[:, 2:3] + yr * hy[:, None]], -1),
           "w": np.outer(hx * hy, np.outer(w, w).ravel()),
           "v": coef @ ev["v"].T}
    if der >= 1:
        out["gx"] = (coef @ ev["gx"].T) / hx[:, None]
        out["gy"] = (coef @ ev["gy"].T) / hy[:, None]
    if der >= 2:
        out["hxx"] = (coef @ ev["hxx"].T) / (hx * hx)[:, None]
        out["hyy"] = (coef @ ev["hyy"].T) / (hy * hy)[:, None]
        out["hxy"] = (coef @ ev["hxy"].T) / (hx * hy)[:, None]
    return out


def element_fields(dofs: DofMap, node_values, e, pts, der=1) -> dict:
    ev = dofs.eval_element(e, pts, der)
    c = np.asarray(node_values)[dofs.element_nodes(e)]
    return {k: v @ c for k, v in ev.items()}


def _tri_candidates(dofs, k, label):
    return [e for e in dofs.macro_elements[k] if dofs.element_label(e) == label]


def locate_elements(dofs: DofMap, pts) -> np.ndarray:
    """Element id holding each point (-1 outside the domain).

    Inside a cut macro the point's subdomain selects the triangles; among
    them the one whose straight triangle contains the point (or misses it
    by the least barycentric amount) is taken.
    """
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    ind = dofs.induced
    out = -np.ones(len(pts), dtype=np.int64)
    leaves = ind.mesh.locate_many(pts)
    for i, q in enumerate(leaves):
        k = ind.leaf_macro.get(q, -1) if q is not None else -1
        if k < 0:
            continue
        els = dofs.macro_elements[k]
        if not ind.macros[k].is_cut:
            out[i] = els[0]
            continue
        x, y = pts[i]
        lab = dofs.domain.label(x, y)
        best, score = -1, -math.inf
        for e in _tri_candidates(dofs, k, lab):
            xi, eta = dofs.tris[e - dofs.n_rect].reference(np.array([x, y]))
            s = min(xi, eta, 1 - xi - eta)
            if s > score:
                best, score = e, s
        out[i] = best
    return out


def evaluate(dofs: DofMap, node_values, pts, der=1) -> dict:
    """Field values (and gradients) at arbitrary points; NaN outside."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    el = locate_elements(dofs, pts)
    out = {"v": np.full(len(pts), np.nan)}
    if der >= 1:
        out["gx"] = np.full(len(pts), np.nan)
        out["gy"] = np.full(len(pts), np.nan)
    for e in np.unique(el[el >= 0]):
        sel = np.nonzero(el == e)[0]
        fv = element_fields(dofs, node_values, int(e), pts[sel], der)
        for key in out:
            out[key][sel] = fv[key]
    return out


def dg_error(dofs: DofMap, U, u, grad_u, alpha0: float = 10.0, n: int | None = None) -> dict:
    """DG norm of ``u - U`` with its three squared components.

    ``u`` and ``grad_u`` are the exact solution and its gradient (callables
    of ``x, y``); on the boundary ``u`` provides the Dirichlet data.
    """
    p = dofs.p
    dom = dofs.domain
    nv = dofs.prolong @ U
    n = n or p + 3
    vol = 0.0
    if dofs.n_rect:
        rf = rect_fields(dofs, nv, n=n)
        G = _call_grad(grad_u, rf["pts"])
        a = np.array([dom.coefficient(lab) for lab in dofs.rect_label])
        vol += float(np.sum(a[:, None] * rf["w"] * ((G[..., 0] - rf["gx"]) ** 2 + (G[..., 1] - rf["gy"]) ** 2)))
    for t_id, t in enumerate(dofs.tris):
        e = dofs.n_rect + t_id
        pts, W = dofs.element_quadrature(e, n)
        fv = element_fields(dofs, nv, e, pts)
        G = _call_grad(grad_u, pts)
        vol += dom.coefficient(t.label) * float(np.sum(W * ((G[:, 0] - fv["gx"]) ** 2 + (G[:, 1] - fv["gy"]) ** 2)))
    jump = tang = 0.0
    for fq in face_quadrature(dofs, n):
        al = face_alpha(fq, p, alpha0)
        fm = element_fields(dofs, nv, fq.minus, fq.pts)
        if fq.boundary:
            d = _call(u, fq.pts) - fm["v"]
            G = _call_grad(grad_u, fq.pts)
            dt = (G[:, 0] - fm["gx"]) * fq.tangent[:, 0] + (G[:, 1] - fm["gy"]) * fq.tangent[:, 1]
        else:
            fp = element_fields(dofs, nv, fq.plus, fq.pts)
            d = fp["v"] - fm["v"]
            dt = (fp["gx"] - fm["gx"]) * fq.tangent[:, 0] + (fp["gy"] - fm["gy"]) * fq.tangent[:, 1]
        jump += al * float(np.sum(fq.wts * d * d))
        tang += fq.h / p ** 2 * float(np.sum(fq.wts * dt * dt))
    total = math.sqrt(vol + jump + tang)
    return {"total": total, "volume": vol, "jump": jump, "tangential": tang}
