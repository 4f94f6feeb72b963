"""Assembly of the bilinear form and load, the local liftings, and the solve."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..cutcell import arc_quadrature, gauss01
from .space import AssemblyError, DofMap

__all__ = ["FaceQuad", "LocalBlock", "DiscreteSystem", "SolverError", "face_quadrature", "local_block",
           "lift", "assemble", "solve", "zero"]


class SolverError(RuntimeError):
    pass


def zero(x, y):
    return np.zeros(np.broadcast(x, y).shape)


def _call(fn, pts):
    return np.asarray(fn(pts[..., 0], pts[..., 1]), dtype=float) * np.ones(pts.shape[:-1])


def _call_grad(fn, pts):
    gx, gy = fn(pts[..., 0], pts[..., 1])
    shape = pts.shape[:-1]
    return np.stack([np.asarray(gx, float) * np.ones(shape), np.asarray(gy, float) * np.ones(shape)], -1)


# ---------------------------------------------------------------------------
# faces: curve pieces and box sides
# ---------------------------------------------------------------------------

@dataclass
class FaceQuad:
    """Quadrature on one face of the curved mesh.

    ``minus``/``plus`` are element ids (``plus`` is None on the boundary);
    ``normal`` points from the minus side to the plus side (outward on the
    boundary); ``tangent`` is a unit tangent.
    """
    macro: int
    minus: int
    plus: int | None
    pts: np.ndarray
    wts: np.ndarray
    tangent: np.ndarray
    normal: np.ndarray
    h: float
    theta_hat: float
    a_hat: float
    boundary: bool
    ends: tuple = ()
    touch: tuple = ()


def face_quadrature(dofs: DofMap, n: int | None = None) -> list[FaceQuad]:
    """Quadrature on every face of ``E^Gamma`` and ``E^bdy``, cached per ``n``."""
    n = n or dofs.p + 3
    cache = dofs.__dict__.setdefault("_face_cache", {})
    if n in cache:
        return cache[n]
    dom = dofs.domain
    macros = dofs.induced.macros
    at_point: dict = {}
    for k in dofs.sub:
        info = macros[k].info
        for P in (info.A, info.B):
            at_point.setdefault((float(P[0]), float(P[1])), []).append(k)
    out = []
    for cf in dofs.curve_faces:
        m = macros[cf.macro]
        pts, wts, tan = arc_quadrature(dom, cf.arc, n)
        nrm = cf.spec.normal(tan)
        ends = []
        curve = cf.spec.curve
        for s in (cf.arc[1], cf.arc[2]):
            P = curve.point_at(s)
            ends.append((float(P[0]), float(P[1])))
        ks = {cf.macro}
        for P in ends:
            ks.update(at_point.get(P, ()))
        theta_hat = max(dofs.theta[k] for k in ks)
        a_hat = max(dom.coefficient(lab) for lab in m.info.labels)
        out.append(FaceQuad(cf.macro, cf.minus, cf.plus, pts, wts, tan, nrm, m.h, theta_hat, a_hat,
                            not cf.spec.is_interface, tuple(ends), tuple(sorted(ks))))
    g, w = gauss01(n)
    for bf in dofs.box_faces:
        k = dofs.element_macro(bf.element)
        m = macros[k]
        t = bf.lo + g * (bf.hi - bf.lo)
        pts = np.c_[t, np.full(n, bf.const)] if bf.axis == 0 else np.c_[np.full(n, bf.const), t]
        tan = np.tile([1.0, 0.0] if bf.axis == 0 else [0.0, 1.0], (n, 1))
        nrm = np.tile(bf.normal, (n, 1))
        lab = dofs.element_label(bf.element)
        out.append(FaceQuad(k, bf.element, None, pts, w * (bf.hi - bf.lo), tan, nrm, m.h,
                            dofs.theta[k], dom.coefficient(lab), True, (), (k,)))
    cache[n] = out
    return out


def faces_by_macro(dofs: DofMap, n=None) -> dict:
    out: dict = {}
    for fq in face_quadrature(dofs, n):
        out.setdefault(fq.macro, []).append(fq)
    return out


# ---------------------------------------------------------------------------
# macro-local matrices
# ---------------------------------------------------------------------------

@dataclass
class LocalBlock:
    """Local matrices of one macro over its local nodes ``nodes``.

    ``K`` stiffness, ``M`` mass, ``Ma`` a-weighted mass, ``Cx``/``Cy`` with
    entries ``(a d_x phi_i, phi_j)`` (row j), ``Gx``/``Gy`` the lifting right
    hand sides ``<phi_j^- n, [[phi_i]]>``, ``P`` penalty plus tangential
    stabilization, ``load`` the source term, ``gx``/``gy`` the boundary-data
    lifting right hand sides and ``Fg`` the boundary-data penalty terms.
    """
    macro: int
    elements: list
    nodes: np.ndarray
    K: np.ndarray
    M: np.ndarray
    Ma: np.ndarray
    Cx: np.ndarray
    Cy: np.ndarray
    Gx: np.ndarray
    Gy: np.ndarray
    P: np.ndarray
    load: np.ndarray
    gx: np.ndarray
    gy: np.ndarray
    Fg: np.ndarray
    alpha: list = field(default_factory=list)

    def liftings(self):
        """Coefficients of L(phi_i) (columns) and of L_1(g) in the local basis."""
        try:
            cf = sla.cho_factor(self.M)
        except np.linalg.LinAlgError as exc:
            raise AssemblyError("local mass matrix is not positive definite", self.macro) from exc
        Lx, Ly = sla.cho_solve(cf, self.Gx), sla.cho_solve(cf, self.Gy)
        l1x, l1y = sla.cho_solve(cf, self.gx), sla.cho_solve(cf, self.gy)
        return Lx, Ly, l1x, l1y

    def matrix(self):
        Lx, Ly, l1x, l1y = self.liftings()
        A = (self.K - self.Cx.T @ Lx - Lx.T @ self.Cx - self.Cy.T @ Ly - Ly.T @ self.Cy
             + Lx.T @ self.Ma @ Lx + Ly.T @ self.Ma @ Ly + self.P)
        F = (self.load + self.Fg - self.Cx.T @ l1x - self.Cy.T @ l1y
             + Lx.T @ self.Ma @ l1x + Ly.T @ self.Ma @ l1y)
        return 0.5 * (A + A.T), F


def local_block(dofs: DofMap, k: int, elements, faces, f, g, g_grad, alpha0: float,
                n_vol: int | None = None) -> LocalBlock:
    p = dofs.p
    dom = dofs.domain
    nodes = np.unique(np.concatenate([dofs.element_nodes(e) for e in elements]))
    pos = {int(v): i for i, v in enumerate(nodes)}
    nl = len(nodes)
    K, M, Ma, Cx, Cy = (np.zeros((nl, nl)) for _ in range(5))
    load = np.zeros(nl)
    for e in elements:
        loc = np.array([pos[int(v)] for v in dofs.element_nodes(e)])
        pts, W = dofs.element_quadrature(e, n_vol)
        ev = dofs.eval_element(e, pts, 1)
        a = dom.coefficient(dofs.element_label(e))
        v, gx, gy = ev["v"], ev["gx"], ev["gy"]
        vW = v.T * W
        ix = np.ix_(loc, loc)
        K[ix] += a * ((gx.T * W) @ gx + (gy.T * W) @ gy)
        Me = vW @ v
        M[ix] += Me
        Ma[ix] += a * Me
        Cx[ix] += a * (vW @ gx)
        Cy[ix] += a * (vW @ gy)
        load[loc] += vW @ _call(f, pts)
    Gx, Gy, P = (np.zeros((nl, nl)) for _ in range(3))
    gxv, gyv, Fg = np.zeros(nl), np.zeros(nl), np.zeros(nl)
    alphas = []
    for fq in faces:
        jump, wminus, tjump = _face_traces(dofs, fq, pos, nl)
        alpha = alpha0 * fq.a_hat * fq.theta_hat * p * p / fq.h
        alphas.append(alpha)
        W = fq.wts
        Gx += (wminus.T * (W * fq.normal[:, 0])) @ jump
        Gy += (wminus.T * (W * fq.normal[:, 1])) @ jump
        P += alpha * (jump.T * W) @ jump + (fq.h / p ** 2) * (tjump.T * W) @ tjump
        if fq.boundary and g is not None:
            gv = _call(g, fq.pts)
            gt = np.einsum("qd,qd->q", _call_grad(g_grad, fq.pts), fq.tangent) if g_grad else 0 * gv
            Fg += alpha * (jump.T * W) @ gv + (fq.h / p ** 2) * (tjump.T * W) @ gt
            gxv += (wminus.T * (W * fq.normal[:, 0])) @ gv
            gyv += (wminus.T * (W * fq.normal[:, 1])) @ gv
    return LocalBlock(k, list(elements), nodes, K, M, Ma, Cx, Cy, Gx, Gy, P, load, gxv, gyv, Fg, alphas)


def _face_traces(dofs, fq, pos, nl):
    """Jump of every local basis function, minus-side traces, and the jump of
    tangential derivatives at the face points."""
    nq = len(fq.wts)
    jump = np.zeros((nq, nl))
    wminus = np.zeros((nq, nl))
    tjump = np.zeros((nq, nl))
    for e, sign in ((fq.minus, 1.0), (fq.plus, -1.0)):
        if e is None:
            continue
        loc = np.array([pos[int(v)] for v in dofs.element_nodes(e)])
        ev = dofs.eval_element(e, fq.pts, 1)
        dt = ev["gx"] * fq.tangent[:, :1] + ev["gy"] * fq.tangent[:, 1:]
        jump[:, loc] += sign * ev["v"]
        tjump[:, loc] += sign * dt
        if sign > 0:
            wminus[:, loc] += ev["v"]
    return jump, wminus, tjump


def lift(dofs: DofMap, node_values, g=None, alpha0: float = 10.0) -> dict:
    """Macro-local liftings ``L(v)`` (and ``L_1(g)``) for every macro with faces.

    Returns ``{macro: (nodes, Lx, Ly, L1x, L1y)}`` with coefficient vectors
    in the local nodal basis of the macro.
    """
    out = {}
    fb = faces_by_macro(dofs)
    v = np.asarray(node_values, dtype=float)
    for k, faces in fb.items():
        blk = local_block(dofs, k, dofs.macro_elements[k], faces, zero, g, None, alpha0)
        Lx, Ly, l1x, l1y = blk.liftings()
        vl = v[blk.nodes]
        out[k] = (blk.nodes, Lx @ vl, Ly @ vl, l1x, l1y)
    return out


# ---------------------------------------------------------------------------
# global assembly
# ---------------------------------------------------------------------------

@dataclass
class DiscreteSystem:
    A: sp.csr_matrix
    F: np.ndarray
    dofs: DofMap
    alpha0: float
    face_alpha: dict
    U: np.ndarray | None = None
    timings: dict = field(default_factory=dict)

    def node_values(self, U=None) -> np.ndarray:
        return self.dofs.prolong @ (self.U if U is None else U)

    def residual(self, U=None) -> float:
        U = self.U if U is None else U
        return float(np.linalg.norm(self.A @ U - self.F))


def _rect_reference(p, n):
    from .basis import quad_basis
    qb = quad_basis(p)
    g, w = gauss01(n)
    X, Y = np.meshgrid(g, g, indexing="ij")
    ev = qb.eval(X.ravel(), Y.ravel(), 1)
    return X.ravel(), Y.ravel(), np.outer(w, w).ravel(), ev


def assemble(dofs: DofMap, f, g=None, g_grad=None, alpha0: float = 10.0) -> DiscreteSystem:
    t0 = time.perf_counter()
    p = dofs.p
    dom = dofs.domain
    fb = faces_by_macro(dofs)
    rows, cols, vals = [], [], []
    Fn = np.zeros(dofs.n_nodes)
    # plain rectangles, vectorised
    face_rects = {dofs.macro_elements[k][0] for k in fb if not dofs.induced.macros[k].is_cut}
    plain = np.array([e for e in range(dofs.n_rect) if e not in face_rects], dtype=np.int64)
    if len(plain):
        n = p + 3
        xr, yr, wr, ev = _rect_reference(p, n)
        b = dofs.rect_bounds[plain]
        hx, hy = b[:, 1] - b[:, 0], b[:, 3] - b[:, 2]
        a = np.array([dom.coefficient(lab) for lab in dofs.rect_label[plain]])
        Kxx = (ev["gx"].T * wr) @ ev["gx"]
        Kyy = (ev["gy"].T * wr) @ ev["gy"]
        Ke = a[:, None, None] * ((hy / hx)[:, None, None] * Kxx + (hx / hy)[:, None, None] * Kyy)
        nd = dofs.rect_nodes[plain]
        rows.append(np.repeat(nd, nd.shape[1], axis=1).ravel())
        cols.append(np.tile(nd, (1, nd.shape[1])).ravel())
        vals.append(Ke.ravel())
        px = b[:, 0:1] + xr[None, :] * hx[:, None]
        py = b[:, 2:3] + yr[None, :] * hy[:, None]
        fv = _call(f, np.stack([px, py], -1))
        le = (fv * wr[None, :]) @ ev["v"] * (hx * hy)[:, None]
        np.add.at(Fn, nd.ravel(), le.ravel())
    t1 = time.perf_counter()
    # macro-local blocks: cut macros and rectangles touching a boundary box side
    face_alpha = {}
    blocks = list(fb.items())
    for k in dofs.sub:
        if k not in fb:
            blocks.append((k, []))
    for k, faces in blocks:
        blk = local_block(dofs, k, dofs.macro_elements[k], faces, f, g, g_grad, alpha0)
        Ak, Fk = blk.matrix()
        face_alpha[k] = blk.alpha
        nd = blk.nodes
        rows.append(np.repeat(nd, len(nd)))
        cols.append(np.tile(nd, len(nd)))
        vals.append(Ak.ravel())
        Fn[nd] += Fk
    t2 = time.perf_counter()
    An = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                       shape=(dofs.n_nodes, dofs.n_nodes))
    P = dofs.prolong
    A = (P.T @ An @ P).tocsr()
    A = 0.5 * (A + A.T)
    F = P.T @ Fn
    t3 = time.perf_counter()
    return DiscreteSystem(A.tocsr(), np.asarray(F).ravel(), dofs, alpha0, face_alpha,
                          timings={"rectangles": t1 - t0, "macros": t2 - t1, "global": t3 - t2})


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------

def _pcg(A, b, tol, maxiter):
    """Conjugate gradients with diagonal scaling; returns (x, iterations,
    Ritz estimates of the extreme eigenvalues of the scaled matrix)."""
    d = A.diagonal()
    if np.any(d <= 0):
        raise SolverError("matrix has a non-positive diagonal entry")
    Dinv = 1.0 / d
    x = np.zeros_like(b)
    r = b.copy()
    z = Dinv * r
    pvec = z.copy()
    rz = r @ z
    nb = np.linalg.norm(b) or 1.0
    alphas, betas = [], []
    for it in range(1, maxiter + 1):
        Ap = A @ pvec
        pAp = pvec @ Ap
        if pAp <= 0:
            raise SolverError(f"matrix is not positive definite (p^T A p = {pAp:.3e})")
        al = rz / pAp
        x += al * pvec
        r -= al * Ap
        if np.linalg.norm(r) <= tol * nb:
            return x, it, None
        z = Dinv * r
        rz_new = r @ z
        be = rz_new / rz
        alphas.append(al)
        betas.append(be)
        rz = rz_new
        pvec = z + be * pvec
    # Lanczos tridiagonal from the CG coefficients
    m = len(alphas)
    T = np.zeros((m, m))
    for i in range(m):
        T[i, i] = 1 / alphas[i] + (betas[i - 1] / alphas[i - 1] if i else 0.0)
        if i + 1 < m:
            T[i, i + 1] = T[i + 1, i] = np.sqrt(betas[i]) / alphas[i]
    ev = np.linalg.eigvalsh(T)
    raise SolverError(f"conjugate gradients did not converge in {maxiter} iterations; "
                      f"Ritz values of the scaled matrix in [{ev[0]:.3e}, {ev[-1]:.3e}]")


def solve(system: DiscreteSystem, method: str = "auto", tol: float = 1e-12, maxiter: int = 20000):
    """Solve ``A U = F``.  ``method``: auto (dense below 500 dofs, sparse
    direct above), dense, direct, or cg."""
    A, F = system.A, system.F
    n = A.shape[0]
    if method == "auto":
        method = "dense" if n < 500 else "direct"
    if method == "dense":
        Ad = A.toarray()
        try:
            cf = sla.cho_factor(Ad)
        except np.linalg.LinAlgError as exc:
            w = np.linalg.eigvalsh(Ad)
            raise SolverError(f"matrix is not positive definite; eigenvalues in [{w[0]:.3e}, {w[-1]:.3e}]") \
                from exc
        U = sla.cho_solve(cf, F)
    elif method == "direct":
        lu = spla.splu(A.tocsc(), permc_spec="MMD_AT_PLUS_A")
        U = lu.solve(F)
        if not np.all(np.isfinite(U)):
            raise SolverError("sparse factorization produced non-finite values")
    elif method == "cg":
        U, _, _ = _pcg(A, F, tol, maxiter)
    else:
        raise ValueError(f"unknown solver {method!r}")
    res = np.linalg.norm(A @ U - F) / (np.linalg.norm(F) or 1.0)
    if method == "direct" and res > 1e-6:
        raise SolverError(f"relative residual {res:.3e} after the direct solve")
    system.U = U
    return U
