"""The discrete space: Q_p on uncut macros, P_p on the sub-triangles of cut
macros, continuous inside each subdomain, with hanging-edge constraints."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..cutcell import SubTriangulationError, cell_deviation, subtriangulate, theta_factor
from ..merging import InducedMesh, MergeError
from .basis import push_forward, quad_basis, tri_basis

__all__ = ["AssemblyError", "TriElement", "CurveFace", "BoxFace", "SidePair", "DofMap", "build_space"]


class AssemblyError(RuntimeError):
    def __init__(self, message, *context):
        super().__init__(message if not context else f"{message}: {context}")
        self.context = context


@dataclass
class TriElement:
    label: int
    macro: int
    verts: np.ndarray
    arc: tuple | None
    nodes: np.ndarray
    jinv: np.ndarray = field(repr=False, default=None)
    det: float = 0.0

    def __post_init__(self):
        J = np.column_stack([self.verts[1] - self.verts[0], self.verts[2] - self.verts[0]])
        self.det = float(np.linalg.det(J))
        self.jinv = np.linalg.inv(J)

    def reference(self, pts):
        d = np.asarray(pts, dtype=float) - self.verts[0]
        r = d @ self.jinv.T
        return r[..., 0], r[..., 1]


@dataclass
class CurveFace:
    """A curve piece inside a cut macro with the triangles on either side."""
    macro: int
    arc: tuple
    spec: object                  # CurveSpec
    minus: int                    # element id on the minus side
    plus: int | None              # element id on the plus side (interfaces)


@dataclass
class BoxFace:
    """An element edge on a side of the box when the box is a boundary."""
    element: int
    axis: int                     # 0: horizontal line y = const, 1: vertical x = const
    const: float
    lo: float
    hi: float
    normal: tuple


@dataclass
class SidePair:
    """Two elements of one subdomain sharing the piece ``[lo, hi]`` of a grid line."""
    a: int                        # element on the low side of the line
    b: int                        # element on the high side
    axis: int
    const: float
    lo: float
    hi: float


class DofMap:
    """Elements, nodes, and the node-to-dof prolongation.

    Element ids ``0 .. n_rect-1`` are rectangles (uncut macros); the rest are
    triangles ``tris[e - n_rect]``.  ``prolong`` maps free dofs to all nodes,
    so a coefficient vector ``U`` has node values ``prolong @ U``.
    """

    def __init__(self, induced: InducedMesh, p: int):
        self.induced = induced
        self.domain = induced.domain
        self.p = p
        self.qb = quad_basis(p)
        self.tb = tri_basis(p)
        self._keys: dict = {}
        self._xy: list = []
        self._lab: list = []
        self.rect_macro: list = []
        self.rect_bounds: list = []
        self.rect_label: list = []
        self.rect_nodes: list = []
        self.tris: list[TriElement] = []
        self.macro_elements: list = []
        self.sub: dict = {}
        self.eta = np.zeros(len(induced.macros))
        self.theta = np.ones(len(induced.macros))
        self.curve_faces: list[CurveFace] = []
        self.box_faces: list[BoxFace] = []
        self.side_pairs: list[SidePair] = []
        self.inner_edges: list = []          # (tri elem a, tri elem b, P0, P1, macro)

    # node bookkeeping -------------------------------------------------
    def _node(self, key, xy, label):
        k = self._keys.get(key)
        if k is None:
            k = len(self._xy)
            self._keys[key] = k
            self._xy.append(xy)
            self._lab.append(label)
        return k

    def _edge_node(self, label, P, Q, frac):
        """Node at fraction ``frac`` (numerator over p) along segment P->Q."""
        p = self.p
        if frac == 0:
            return self._node((label, P), P, label)
        if frac == p:
            return self._node((label, Q), Q, label)
        if P > Q:
            P, Q, frac = Q, P, p - frac
        t = frac / p
        xy = (P[0] + t * (Q[0] - P[0]), P[1] + t * (Q[1] - P[1]))
        return self._node((label, P, Q, frac), xy, label)

    # construction -----------------------------------------------------
    def _add_rect(self, k, macro):
        p = self.p
        x0, x1, y0, y1 = macro.rect
        lab = macro.info.label
        e = len(self.rect_macro)
        nodes = np.empty(self.qb.n, dtype=np.int64)
        for loc, (i, j) in enumerate(self.qb.ij.tolist()):
            on_x = i in (0, p)
            on_y = j in (0, p)
            if on_x and on_y:
                xy = (x0 if i == 0 else x1, y0 if j == 0 else y1)
                nodes[loc] = self._node((lab, xy), xy, lab)
            elif on_x:
                x = x0 if i == 0 else x1
                nodes[loc] = self._edge_node(lab, (x, y0), (x, y1), j)
            elif on_y:
                y = y0 if j == 0 else y1
                nodes[loc] = self._edge_node(lab, (x0, y), (x1, y), i)
            else:
                xy = (x0 + i / p * (x1 - x0), y0 + j / p * (y1 - y0))
                nodes[loc] = self._node((lab, "rect", e, loc), xy, lab)
        self.rect_macro.append(k)
        self.rect_bounds.append(macro.rect)
        self.rect_label.append(lab)
        self.rect_nodes.append(nodes)
        return e

    def _add_tri(self, k, tri, n_tris_before):
        p = self.p
        lab = tri.label
        V = [tuple(map(float, v)) for v in tri.verts]
        nodes = np.empty(self.tb.n, dtype=np.int64)
        t_id = len(self.tris)
        for loc, (i, j) in enumerate(self.tb.ij.tolist()):
            if j == 0:
                nodes[loc] = self._edge_node(lab, V[0], V[1], i)
            elif i == 0:
                nodes[loc] = self._edge_node(lab, V[0], V[2], j)
            elif i + j == p:
                nodes[loc] = self._edge_node(lab, V[1], V[2], j)
            else:
                xy = tuple(np.asarray(V[0]) + i / p * (np.subtract(V[1], V[0]))
                           + j / p * (np.subtract(V[2], V[0])))
                nodes[loc] = self._node((lab, "tri", t_id, loc), xy, lab)
        self.tris.append(TriElement(lab, k, np.array(V), tri.arc, nodes))
        return t_id

    def build(self):
        dom = self.domain
        p = self.p
        tri_macros = []
        for k, m in enumerate(self.induced.macros):
            if not m.is_cut:
                self.macro_elements.append([self._add_rect(k, m)])
            else:
                self.macro_elements.append(None)
                tri_macros.append(k)
        self.n_rect = len(self.rect_macro)
        for k in tri_macros:
            m = self.induced.macros[k]
            try:
                sub = subtriangulate(m.info)
            except SubTriangulationError as exc:
                raise AssemblyError(f"cannot sub-triangulate macro {k}: {exc}", m.rect) from exc
            self.sub[k] = sub
            self.eta[k] = cell_deviation(m.info, dom)
            self.theta[k] = theta_factor(self.eta[k], p)
            ids = [self.n_rect + self._add_tri(k, t, None) for t in sub.triangles]
            self.macro_elements[k] = ids
            self._faces_of(k, sub, ids)
            self._inner_edges_of(k, ids)
        self.node_xy = np.array(self._xy, dtype=float).reshape(-1, 2)
        self.node_label = np.array(self._lab, dtype=int)
        self.n_nodes = len(self._xy)
        self.rect_bounds = np.array(self.rect_bounds, dtype=float).reshape(-1, 4)
        self.rect_label = np.array(self.rect_label, dtype=int)
        self.rect_macro = np.array(self.rect_macro, dtype=int)
        self.rect_nodes = np.array(self.rect_nodes, dtype=np.int64).reshape(-1, self.qb.n)
        self._constraints()
        self._keys = None
        return self

    def _faces_of(self, k, sub, ids):
        for arc in sub.arcs:
            ci = arc[0]
            spec = self.domain.curves[ci]
            found = {}
            for e in ids:
                t = self.tris[e - self.n_rect]
                if t.arc is not None and t.arc[0] == ci and {t.arc[1], t.arc[2]} == {arc[1], arc[2]}:
                    found[t.label] = e
            if spec.minus not in found:
                raise AssemblyError("curve piece without a minus-side triangle", k, arc)
            plus = found.get(spec.plus) if spec.is_interface else None
            if spec.is_interface and plus is None:
                raise AssemblyError("interface piece without a plus-side triangle", k, arc)
            self.curve_faces.append(CurveFace(k, arc, spec, found[spec.minus], plus))

    def _inner_edges_of(self, k, ids):
        seen = {}
        for e in ids:
            t = self.tris[e - self.n_rect]
            V = [tuple(v) for v in t.verts]
            for a, b in ((0, 1), (0, 2), (1, 2)):
                if t.arc is not None and (a, b) == (1, 2):
                    continue
                key = (t.label, *sorted((V[a], V[b])))
                if key in seen:
                    self.inner_edges.append((seen.pop(key), e, np.array(V[a]), np.array(V[b]), k))
                else:
                    seen[key] = e

    # boundary edges on grid lines ------------------------------------
    def _grid_edges(self):
        """``(label, axis, const, lo, hi, side, elem, node ids)`` for element
        edges lying on the boundary of their macro."""
        out = []
        en = self.qb.edge_nodes()
        for e in range(self.n_rect):
            x0, x1, y0, y1 = self.rect_bounds[e]
            lab, nd = self.rect_label[e], self.rect_nodes[e]
            out.append((lab, 1, x0, y0, y1, +1, e, nd[en[0]]))
            out.append((lab, 1, x1, y0, y1, -1, e, nd[en[1]]))
            out.append((lab, 0, y0, x0, x1, +1, e, nd[en[2]]))
            out.append((lab, 0, y1, x0, x1, -1, e, nd[en[3]]))
        ten = self.tb.edge_nodes()
        for t_id, t in enumerate(self.tris):
            x0, x1, y0, y1 = self.induced.macros[t.macro].rect
            for (a, b), loc in zip(((0, 1), (0, 2), (1, 2)), ten):
                if t.arc is not None and (a, b) == (1, 2):
                    continue
                Pa, Pb = t.verts[a], t.verts[b]
                nd = t.nodes[loc]
                for axis, c, (lo_b, hi_b) in ((0, y0, (x0, x1)), (0, y1, (x0, x1)),
                                             (1, x0, (y0, y1)), (1, x1, (y0, y1))):
                    fixed = 1 - axis          # coordinate held constant on the line
                    if Pa[fixed] == c and Pb[fixed] == c:
                        lo, hi = Pa[axis], Pb[axis]
                        if lo > hi:
                            lo, hi, nd = hi, lo, nd[::-1]
                        side = +1 if c == (y0 if axis == 0 else x0) else -1
                        out.append((t.label, axis, c, lo, hi, side, self.n_rect + t_id, nd))
                        break
        return out

    def _constraints(self):
        p = self.p
        line = self.qb.line
        groups = defaultdict(list)
        bx0, bx1, by0, by1 = self.domain.box
        box_bdy = self.domain.box_is_boundary
        for rec in self._grid_edges():
            lab, axis, c, lo, hi, side, e, nd = rec
            on_box = (axis == 0 and c in (by0, by1)) or (axis == 1 and c in (bx0, bx1))
            if on_box:
                if box_bdy:
                    normal = (0.0, -float(side)) if axis == 0 else (-float(side), 0.0)
                    self.box_faces.append(BoxFace(e, axis, c, lo, hi, normal))
                continue
            groups[(lab, axis, c)].append(rec)
        cons: dict = {}
        for (lab, axis, c), recs in groups.items():
            low = sorted((r for r in recs if r[5] == -1), key=lambda r: r[3])
            high = sorted((r for r in recs if r[5] == +1), key=lambda r: r[3])
            i = j = 0
            while i < len(low) and j < len(high):
                A, B = low[i], high[j]
                lo, hi = max(A[3], B[3]), min(A[4], B[4])
                if hi > lo:
                    self.side_pairs.append(SidePair(A[6], B[6], axis, c, lo, hi))
                    if (A[3], A[4]) != (B[3], B[4]):
                        if A[3] <= B[3] and B[4] <= A[4]:
                            master, slave = A, B
                        elif B[3] <= A[3] and A[4] <= B[4]:
                            master, slave = B, A
                        else:
                            raise MergeError("element sides are not nested", (lab, axis, c), (A[3], A[4]),
                                             (B[3], B[4]))
                        m_lo, m_hi = master[3], master[4]
                        s_lo, s_hi = slave[3], slave[4]
                        pos = s_lo + np.arange(p + 1) / p * (s_hi - s_lo)
                        W = line((pos - m_lo) / (m_hi - m_lo))
                        mnodes = master[7]
                        for k_s, node in enumerate(slave[7]):
                            node = int(node)
                            if node in mnodes or node in cons:
                                continue
                            row = [(int(mn), float(w)) for mn, w in zip(mnodes, W[k_s]) if abs(w) > 1e-14]
                            cons[node] = row
                if A[4] <= B[4]:
                    i += 1
                else:
                    j += 1
        # resolve chains of constraints down to free nodes
        resolved: dict = {}

        def expand(node, depth=0):
            if node not in cons:
                return {node: 1.0}
            if node in resolved:
                return resolved[node]
            if depth > 50:
                raise AssemblyError("cyclic hanging-node constraints", node)
            acc: dict = defaultdict(float)
            for m, w in cons[node]:
                for f, v in expand(m, depth + 1).items():
                    acc[f] += w * v
            resolved[node] = dict(acc)
            return resolved[node]

        free = np.array([n for n in range(self.n_nodes) if n not in cons], dtype=np.int64)
        dof_of = -np.ones(self.n_nodes, dtype=np.int64)
        dof_of[free] = np.arange(len(free))
        rows, cols, vals = list(free), list(range(len(free))), [1.0] * len(free)
        for node in cons:
            for f, v in expand(node).items():
                rows.append(node)
                cols.append(int(dof_of[f]))
                vals.append(v)
        self.n_dofs = len(free)
        self.free_nodes = free
        self.constrained = np.array(sorted(cons), dtype=np.int64)
        self.prolong = sp.csr_matrix((vals, (rows, cols)), shape=(self.n_nodes, self.n_dofs))

    # evaluation -------------------------------------------------------
    def n_elements(self) -> int:
        return self.n_rect + len(self.tris)

    def element_nodes(self, e) -> np.ndarray:
        return self.rect_nodes[e] if e < self.n_rect else self.tris[e - self.n_rect].nodes

    def element_label(self, e) -> int:
        return int(self.rect_label[e]) if e < self.n_rect else self.tris[e - self.n_rect].label

    def element_macro(self, e) -> int:
        return int(self.rect_macro[e]) if e < self.n_rect else self.tris[e - self.n_rect].macro

    def eval_element(self, e, pts, der=1) -> dict:
        """Basis values and physical derivatives of element ``e`` at ``pts``."""
        pts = np.asarray(pts, dtype=float)
        if e < self.n_rect:
            x0, x1, y0, y1 = self.rect_bounds[e]
            hx, hy = x1 - x0, y1 - y0
            ref = self.qb.eval((pts[..., 0] - x0) / hx, (pts[..., 1] - y0) / hy, der)
            return push_forward(ref, np.array([[1 / hx, 0.0], [0.0, 1 / hy]]))
        t = self.tris[e - self.n_rect]
        xi, eta = t.reference(pts)
        return push_forward(self.tb.eval(xi, eta, der), t.jinv)

    def element_quadrature(self, e, n=None):
        """Points and weights on element ``e`` (curved when it carries an arc)."""
        from ..cutcell import Triangle, gauss01, triangle_quadrature
        n = n or self.p + 3
        cache = self.__dict__.setdefault("_quad_cache", {})
        hit = cache.get((e, n))
        if hit is not None:
            return hit
        cache[(e, n)] = out = self._element_quadrature(e, n)
        return out

    def _element_quadrature(self, e, n):
        from ..cutcell import Triangle, gauss01, triangle_quadrature
        if e < self.n_rect:
            x0, x1, y0, y1 = self.rect_bounds[e]
            g, w = gauss01(n)
            X, Y = np.meshgrid(x0 + g * (x1 - x0), y0 + g * (y1 - y0), indexing="ij")
            W = np.outer(w, w) * (x1 - x0) * (y1 - y0)
            return np.c_[X.ravel(), Y.ravel()], W.ravel()
        t = self.tris[e - self.n_rect]
        try:
            return triangle_quadrature(Triangle(t.label, t.verts, t.arc), self.domain, n)
        except Exception as exc:        # pragma: no cover - geometry failure
            raise AssemblyError(f"quadrature failed on element {e}: {exc}", t.macro) from exc

    def macro_h(self, k) -> float:
        return self.induced.macros[k].h

    def summary(self) -> dict:
        return {"p": self.p, "dofs": self.n_dofs, "nodes": self.n_nodes, "rectangles": self.n_rect,
                "triangles": len(self.tris), "constrained": len(self.constrained),
                "curve_faces": len(self.curve_faces), "box_faces": len(self.box_faces)}


def build_space(induced: InducedMesh, p: int) -> DofMap:
    if p < 1:
        raise ValueError("polynomial degree must be at least 1")
    return DofMap(induced, int(p)).build()
