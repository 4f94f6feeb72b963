"""Residual a posteriori estimator, Dörfler marking and the adaptive loop."""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .cutcell import gauss01
from .fem.basis import quad_basis
from .fem.norms import dg_error, element_fields, face_alpha, rect_fields
from .fem.space import DofMap, build_space
from .fem.system import _call, _call_grad, assemble, face_quadrature, solve
from .geometry import DomainConfig
from .merging import Classifier, InducedMesh, MergeError, induce
from .mesh import QuadtreeMesh

__all__ = ["Indicators", "Residuals", "lambda_weights", "residuals", "indicators", "mark",
           "leaves_to_refine", "IterationRecord", "RunRecord", "adaptive_solve", "COMPONENTS"]

COMPONENTS = ("residual", "edge_jump", "interface_jump", "tangential")


# ---------------------------------------------------------------------------
# weights
# ---------------------------------------------------------------------------

def _macro_coefficients(dofs: DofMap):
    dom = dofs.domain
    amax, amin = [], []
    for m in dofs.induced.macros:
        labs = m.info.labels if m.is_cut else (m.info.label,)
        a = [dom.coefficient(lab) for lab in labs]
        amax.append(max(a))
        amin.append(min(a))
    return np.array(amax), np.array(amin)


def lambda_weights(dofs: DofMap) -> np.ndarray:
    """``Lambda_K = ||a^1/2||_inf(K) ||a^-1/2||_inf(omega(K))`` per macro."""
    ind = dofs.induced
    amax, amin = _macro_coefficients(dofs)
    omega_min = amin.copy()
    if len(set(dofs.domain.coefficient(lab) for lab in dofs.domain.labels_present)) > 1:
        mesh = ind.mesh
        for k, m in enumerate(ind.macros):
            if not m.is_cut:
                continue
            near = set()
            for q in m.leaves:
                for r in mesh.touching(q):
                    j = ind.leaf_macro.get(r)
                    if j is not None and j != k:
                        near.add(j)
            for j in near:
                omega_min[j] = min(omega_min[j], amin[k])
                omega_min[k] = min(omega_min[k], amin[j])
    return np.sqrt(amax / omega_min)


# ---------------------------------------------------------------------------
# residuals
# ---------------------------------------------------------------------------

@dataclass
class Residuals:
    """Weighted squared integrals of the element and jump residuals.

    ``element[k]`` holds ``int_K R^2 / a`` per macro; ``edges`` lists
    ``(macros, h_e, a_hat, int_e J^2)`` for every interior side, within-macro
    triangle edge and interface piece.
    """
    element: np.ndarray
    edges: list = field(default_factory=list)


def _pair_points(pair, n):
    g, w = gauss01(n)
    t = pair.lo + g * (pair.hi - pair.lo)
    c = np.full(n, pair.const)
    pts = np.c_[t, c] if pair.axis == 0 else np.c_[c, t]
    return pts, w * (pair.hi - pair.lo)


def _rect_pair_flux(dofs, nv, pairs, n):
    """Normal flux jumps on rectangle-rectangle sides, batched."""
    p = dofs.p
    qb = quad_basis(p)
    g, w = gauss01(n)
    lo = np.array([q.lo for q in pairs])
    hi = np.array([q.hi for q in pairs])
    c = np.array([q.const for q in pairs])
    ax = np.array([q.axis for q in pairs])
    t = lo[:, None] + g[None, :] * (hi - lo)[:, None]
    X = np.where(ax[:, None] == 0, t, c[:, None])
    Y = np.where(ax[:, None] == 0, c[:, None], t)
    dom = dofs.domain
    flux = np.zeros_like(t)
    for side, sign in (("a", 1.0), ("b", -1.0)):
        el = np.array([getattr(q, side) for q in pairs])
        b = dofs.rect_bounds[el]
        hx, hy = b[:, 1] - b[:, 0], b[:, 3] - b[:, 2]
        xi = (X - b[:, :1]) / hx[:, None]
        eta = (Y - b[:, 2:3]) / hy[:, None]
        ev = qb.eval(xi, eta, 1)
        coef = nv[dofs.rect_nodes[el]]
        a = np.array([dom.coefficient(lab) for lab in dofs.rect_label[el]])
        gx = np.einsum("pqn,pn->pq", ev["gx"], coef) / hx[:, None]
        gy = np.einsum("pqn,pn->pq", ev["gy"], coef) / hy[:, None]
        dn = np.where(ax[:, None] == 0, gy, gx)
        flux += sign * a[:, None] * dn
    return np.sum(w[None, :] * (hi - lo)[:, None] * flux ** 2, axis=1)


def residuals(dofs: DofMap, U, f) -> Residuals:
    p = dofs.p
    dom = dofs.domain
    ind = dofs.induced
    nv = dofs.prolong @ U
    nmac = len(ind.macros)
    elem = np.zeros(nmac)
    if dofs.n_rect:
        rf = rect_fields(dofs, nv, der=2)
        a = np.array([dom.coefficient(lab) for lab in dofs.rect_label])
        R = _call(f, rf["pts"]) + a[:, None] * (rf["hxx"] + rf["hyy"])
        np.add.at(elem, dofs.rect_macro, np.sum(rf["w"] * R * R, axis=1) / a)
    for t_id, t in enumerate(dofs.tris):
        e = dofs.n_rect + t_id
        pts, W = dofs.element_quadrature(e)
        fv = element_fields(dofs, nv, e, pts, der=2)
        a = dom.coefficient(t.label)
        R = _call(f, pts) + a * (fv["hxx"] + fv["hyy"])
        elem[t.macro] += float(np.sum(W * R * R)) / a
    amax, _ = _macro_coefficients(dofs)
    out = Residuals(elem)
    n = p + 2
    hmac = np.array([m.h for m in ind.macros])
    # sides on grid lines between macros
    rr = [q for q in dofs.side_pairs if q.a < dofs.n_rect and q.b < dofs.n_rect]
    other = [q for q in dofs.side_pairs if not (q.a < dofs.n_rect and q.b < dofs.n_rect)]
    if rr:
        jj = _rect_pair_flux(dofs, nv, rr, n)
        for q, val in zip(rr, jj):
            ka, kb = int(dofs.rect_macro[q.a]), int(dofs.rect_macro[q.b])
            out.edges.append(((ka, kb), 0.5 * (hmac[ka] + hmac[kb]), max(amax[ka], amax[kb]), float(val)))
    for q in other:
        pts, w = _pair_points(q, n)
        nrm = np.array([0.0, 1.0]) if q.axis == 0 else np.array([1.0, 0.0])
        J = _flux(dofs, nv, q.a, pts, nrm) - _flux(dofs, nv, q.b, pts, nrm)
        ka, kb = dofs.element_macro(q.a), dofs.element_macro(q.b)
        out.edges.append(((ka, kb), 0.5 * (hmac[ka] + hmac[kb]), max(amax[ka], amax[kb]),
                          float(np.sum(w * J * J))))
    # straight edges shared by two triangles of one macro
    g, w = gauss01(n)
    for ea, eb, P0, P1, k in dofs.inner_edges:
        pts = P0 + g[:, None] * (P1 - P0)
        L = float(np.hypot(*(P1 - P0)))
        d = (P1 - P0) / L
        nrm = np.array([-d[1], d[0]])
        J = _flux(dofs, nv, ea, pts, nrm) - _flux(dofs, nv, eb, pts, nrm)
        out.edges.append(((k,), hmac[k], amax[k], float(np.sum(w * L * J * J))))
    # interface pieces: [[a grad U . n]]
    for fq in face_quadrature(dofs):
        if fq.boundary:
            continue
        J = np.zeros(len(fq.wts))
        for e, sign in ((fq.minus, 1.0), (fq.plus, -1.0)):
            fv = element_fields(dofs, nv, e, fq.pts)
            a = dom.coefficient(dofs.element_label(e))
            J += sign * a * (fv["gx"] * fq.normal[:, 0] + fv["gy"] * fq.normal[:, 1])
        out.edges.append((fq.touch, fq.h, fq.a_hat, float(np.sum(fq.wts * J * J)), fq.macro))
    return out


def _flux(dofs, nv, e, pts, nrm):
    fv = element_fields(dofs, nv, e, pts)
    a = dofs.domain.coefficient(dofs.element_label(e))
    return a * (fv["gx"] * nrm[0] + fv["gy"] * nrm[1])


# ---------------------------------------------------------------------------
# indicators
# ---------------------------------------------------------------------------

@dataclass
class Indicators:
    """Per-macro components (columns in ``COMPONENTS`` order) and totals."""
    components: np.ndarray
    lam: np.ndarray

    @property
    def xi2(self) -> np.ndarray:
        return self.components.sum(axis=1)

    @property
    def xi(self) -> np.ndarray:
        return np.sqrt(self.xi2)

    @property
    def estimator(self) -> float:
        return math.sqrt(float(np.sum(self.xi2)))

    def breakdown(self) -> dict:
        return {name: float(self.components[:, i].sum()) for i, name in enumerate(COMPONENTS)}


def indicators(dofs: DofMap, U, f, g=None, g_grad=None, alpha0: float = 10.0) -> Indicators:
    p = dofs.p
    ind = dofs.induced
    nmac = len(ind.macros)
    comp = np.zeros((nmac, 4))
    lam = lambda_weights(dofs)
    hmac = np.array([m.h for m in ind.macros])
    res = residuals(dofs, U, f)
    comp[:, 0] = (hmac / p) ** 2 * lam ** 2 * res.element
    for rec in res.edges:
        ks, h, ahat, val = rec[:4]
        owners = (rec[4],) if len(rec) > 4 else ks
        lam_hat = max(lam[k] for k in ks)
        contrib = (h / p) * lam_hat ** 2 / ahat * val
        for k in set(owners):
            comp[k, 1] += contrib
    nv = dofs.prolong @ U
    for fq in face_quadrature(dofs):
        al = face_alpha(fq, p, alpha0)
        lam_hat = max(lam[k] for k in fq.touch)
        fm = element_fields(dofs, nv, fq.minus, fq.pts)
        if fq.boundary:
            gv = _call(g, fq.pts) if g is not None else 0.0
            gg = _call_grad(g_grad, fq.pts) if g_grad is not None else np.zeros((len(fq.wts), 2))
            d = fm["v"] - gv
            dt = (fm["gx"] - gg[:, 0]) * fq.tangent[:, 0] + (fm["gy"] - gg[:, 1]) * fq.tangent[:, 1]
        else:
            fp = element_fields(dofs, nv, fq.plus, fq.pts)
            d = fm["v"] - fp["v"]
            dt = (fm["gx"] - fp["gx"]) * fq.tangent[:, 0] + (fm["gy"] - fp["gy"]) * fq.tangent[:, 1]
        comp[fq.macro, 2] += al * p * fq.theta_hat * lam_hat ** 2 * float(np.sum(fq.wts * d * d))
        comp[fq.macro, 3] += (fq.a_hat * fq.h / p ** 2 * fq.theta_hat * lam_hat ** 2
                              * float(np.sum(fq.wts * dt * dt)))
    return Indicators(comp, lam)


def mark(xi, gamma: float = 0.5) -> list[int]:
    """Smallest greedy Dörfler set: indices of the largest ``xi`` (ties by
    index) until their squared sum reaches ``gamma^2`` times the total."""
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    xi = np.asarray(xi, dtype=float)
    total = float(np.sum(xi ** 2))
    if total == 0.0:
        return []
    order = sorted(range(len(xi)), key=lambda k: (-xi[k], k))
    target = gamma * gamma * total
    acc = 0.0
    out = []
    for k in order:
        if xi[k] <= 0.0:
            break
        out.append(k)
        acc += xi[k] ** 2
        if acc >= target * (1 - 1e-15):
            break
    return out


def leaves_to_refine(induced: InducedMesh, marked) -> set:
    """Leaves whose closure meets a marked macro."""
    mesh = induced.mesh
    out = set()
    for k in marked:
        for q in induced.macros[k].leaves:
            out.add(q)
            out |= mesh.touching(q)
    return {q for q in out if q in induced.leaf_macro}


# ---------------------------------------------------------------------------
# the adaptive loop
# ---------------------------------------------------------------------------

@dataclass
class IterationRecord:
    iteration: int
    dofs: int
    estimator: float
    dg_error: float | None
    effectivity: float | None
    macros: int
    leaves: int
    max_level: int
    seconds: float
    components: dict = field(default_factory=dict)

    def csv_row(self):
        fmt = lambda v: "" if v is None else repr(float(v))
        return [self.iteration, self.dofs, fmt(self.estimator), fmt(self.dg_error), fmt(self.effectivity)]


CSV_HEADER = ["iter", "dofs", "estimator", "dg_error", "effectivity"]


@dataclass
class RunRecord:
    rows: list
    converged: bool = False
    reason: str = ""
    mesh: QuadtreeMesh | None = None
    induced: InducedMesh | None = None
    dofs: DofMap | None = None
    U: np.ndarray | None = None
    snapshots: dict = field(default_factory=dict)

    def column(self, name):
        return np.array([getattr(r, name) if getattr(r, name) is not None else np.nan for r in self.rows],
                        dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow(r.csv_row())
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_csv())


def macro_deviations(induced: InducedMesh) -> dict:
    """Deviation of every cut macro from its straight sub-triangulation."""
    from .cutcell import cell_deviation
    return {k: cell_deviation(m.info, induced.domain) for k, m in enumerate(induced.macros) if m.is_cut}


def controlled_induce(mesh, domain, eta0=0.05, classify=None, memo=None, max_rounds=30, delta0=None):
    """Merge, then refine macros whose deviation exceeds ``eta0`` and merge
    again until every cut macro is within the bound."""
    classify = classify or Classifier(domain)
    for _ in range(max_rounds):
        induced = induce(mesh, domain, delta0, classify=classify, memo=memo)
        bad = [k for k, eta in macro_deviations(induced).items() if eta > eta0]
        if not bad:
            return induced
        memo = induced.pattern_memo
        mesh.refine({q for k in bad for q in induced.macros[k].leaves})
    raise MergeError(f"deviation above {eta0} after {max_rounds} refinements")


def adaptive_solve(domain: DomainConfig, p: int, f, g=None, g_grad=None, exact=None, tol: float = 1e-3,
                   gamma: float = 0.5, eta0: float = 0.05, alpha0: float = 10.0, max_iter: int = 30,
                   max_dofs: int | None = None, mesh: QuadtreeMesh | None = None, n0: int = 8,
                   snapshot_every: int = 0, log=None, reference: float | None = None,
                   delta0: float | None = None) -> RunRecord:
    """The adaptive loop: merge, solve, estimate, mark, refine.

    ``exact`` is ``(u, grad_u)`` when the solution is known; the record then
    carries DG errors and effectivity indices.  Stops when the estimator has
    dropped by ``tol`` relative to iteration 0, after ``max_iter`` solves, or
    before a solve that would exceed ``max_dofs``.  ``reference`` replaces
    the iteration-0 estimator in the stopping ratio, so that runs on
    different domains can share one absolute target.
    """
    if p < 1:
        raise ValueError("p must be at least 1")
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    if not 0 < eta0 < 0.5:
        raise ValueError("eta0 must lie in (0, 1/2)")
    from .mesh import uniform_mesh
    mesh = mesh if mesh is not None else uniform_mesh(domain.box, n0)
    classify = Classifier(domain)
    memo = None
    rec = RunRecord([], mesh=mesh)
    est0 = reference
    for it in range(max_iter):
        t0 = time.perf_counter()
        induced = controlled_induce(mesh, domain, eta0, classify, memo, delta0=delta0)
        memo = induced.pattern_memo
        dofs = build_space(induced, p)
        if max_dofs is not None and dofs.n_dofs > max_dofs and rec.rows:
            rec.reason = "dof budget reached"
            break
        system = assemble(dofs, f, g, g_grad, alpha0)
        U = solve(system)
        est = indicators(dofs, U, f, g, g_grad, alpha0)
        err = eff = None
        if exact is not None:
            err = dg_error(dofs, U, exact[0], exact[1], alpha0)["total"]
            eff = est.estimator / err if err > 0 else None
        row = IterationRecord(it, dofs.n_dofs, est.estimator, err, eff, len(induced.macros), len(mesh.leaves),
                              max(q[0] for q in mesh.leaves), time.perf_counter() - t0, est.breakdown())
        rec.rows.append(row)
        rec.induced, rec.dofs, rec.U, rec.mesh = induced, dofs, U, mesh
        if snapshot_every and it % snapshot_every == 0:
            rec.snapshots[it] = induced.to_svg()
        if log is not None:
            log(row)
        est0 = est.estimator if est0 is None else est0
        if est0 == 0.0 or est.estimator / est0 < tol:
            rec.converged = True
            rec.reason = "tolerance reached"
            break
        if it == max_iter - 1:
            continue
        marked = mark(est.xi, gamma)
        # refine a copy so the recorded space keeps the mesh it was built on
        mesh = mesh.copy()
        mesh.refine(leaves_to_refine(induced, marked))
    else:
        rec.reason = "iteration limit reached"
    return rec
