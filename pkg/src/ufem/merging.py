"""Merging small cut cells into large macro-elements.

Singular points get a rectangular *singular pattern* sized from the slopes of
the two curve arms at the point.  The remaining cut cells are merged by a
greedy search over small rectangular blocks, and every produced mesh is
checked against the large-element contract before it is returned.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .cutcell import CutInfo, classify_rect
from .geometry import DomainConfig, GeometryError
from .mesh import EAST, NORTH, SOUTH, WEST, QuadtreeMesh

log = logging.getLogger(__name__)

__all__ = [
    "MergeError", "Extents", "SingularPattern", "Chain", "Macro", "InducedMesh", "Classifier",
    "strict_floor", "lemma_extents", "ring_positions", "scan_ring", "build_singular_pattern",
    "build_chains", "check_admissible", "find_admissible_subchains", "merge_smooth_subchain",
    "refine_outlet", "refine_singular_pattern", "merge_closed_chain", "induce",
    "sector_domain", "sector_setup", "sector_pattern",
]


class MergeError(RuntimeError):
    def __init__(self, message, *context):
        super().__init__(message)
        self.context = context


class Classifier:
    """Memoised :func:`classify_rect` for one domain."""

    def __init__(self, domain: DomainConfig):
        self.domain = domain
        self._cache: dict = {}

    def __call__(self, rect) -> CutInfo:
        key = tuple(rect)
        hit = self._cache.get(key)
        if hit is None:
            hit = classify_rect(key, self.domain)
            if len(self._cache) > 500_000:
                self._cache.clear()
            self._cache[key] = hit
        return hit


def strict_floor(x: float) -> int:
    """Greatest integer strictly less than ``x`` (so ``strict_floor(3) == 2``)."""
    return math.ceil(x) - 1


# ---------------------------------------------------------------------------
# singular pattern extents
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Extents:
    """Number of cells a pattern extends beyond its host cell on each side."""

    left: int
    right: int
    down: int
    up: int

    @classmethod
    def from_mn(cls, m1, m2, n1, n2):
        return cls(m1 - 1, m2, n1, n2 - 1)

    @property
    def mn(self):
        return self.left + 1, self.right, self.down, self.up + 1

    @property
    def bound(self) -> float:
        """Index bound ``min(1/(m1+m2), 1/(n1+n2))`` of the pattern."""
        m1, m2, n1, n2 = self.mn
        return min(1.0 / (m1 + m2), 1.0 / (n1 + n2))

    def grown(self, a, b, c, d):
        return Extents(self.left + a, self.right + b, self.down + c, self.up + d)

    def _flip_x(self):
        return Extents(self.right, self.left, self.down, self.up)

    def _flip_y(self):
        return Extents(self.left, self.right, self.up, self.down)

    def _transpose(self):
        return Extents(self.down, self.up, self.left, self.right)


def _region(d, h1, h2):
    dx, dy = float(d[0]), float(d[1])
    if abs(dy) * h1 < abs(dx) * h2:
        return "E" if dx > 0 else "W"
    return "N" if dy > 0 else "S"


def _canonical_frame(d1, d2, h1, h2):
    """Symmetry (transpose, fx, fy) mapping the arms to a canonical case,
    the transformed arms, cell sizes, and the case name."""
    r1, r2 = _region(d1, h1, h2), _region(d2, h1, h2)
    horiz = {"E", "W"}
    transpose = False
    if r1 in horiz and r2 in horiz:
        transpose = True
    elif r1 not in horiz and r2 in horiz:
        d1, d2, r1, r2 = d2, d1, r2, r1          # horizontal arm first in mixed case
    if transpose:
        d1, d2 = np.array([d1[1], d1[0]]), np.array([d2[1], d2[0]])
        h1, h2 = h2, h1
        r1, r2 = _region(d1, h1, h2), _region(d2, h1, h2)
    d1, d2 = np.asarray(d1, float).copy(), np.asarray(d2, float).copy()
    fx = fy = 1
    if r1 in horiz:                                # mixed: L1 east, L2 south
        case = "mixed"
        if r1 == "W":
            fx = -1
        if r2 == "N":
            fy = -1
    elif r1 == r2:                                 # same region: both south
        case = "same"
        if r1 == "N":
            fy = -1
    else:                                          # opposite: L1 north, L2 south
        case = "opposite"
        if r1 == "S":
            d1, d2 = d2, d1
    d1 = d1 * np.array([fx, fy])
    d2 = d2 * np.array([fx, fy])
    return (transpose, fx, fy), d1, d2, h1, h2, case


def _from_canonical(ext: Extents, sym) -> Extents:
    transpose, fx, fy = sym
    if fx < 0:
        ext = ext._flip_x()
    if fy < 0:
        ext = ext._flip_y()
    if transpose:
        ext = ext._transpose()
    return ext


def _pos(x):
    return max(x, 0.0)


def lemma_extents(d1, d2, h1: float, h2: float) -> list[tuple[Extents, str]]:
    """Candidate pattern extents from the arm directions at the singular point.

    Returns one or two ``(Extents, case)`` candidates in the original frame.
    """
    sym, a, b, H1, H2, case = _canonical_frame(np.asarray(d1, float), np.asarray(d2, float), h1, h2)
    sf = strict_floor
    out = []
    if case == "mixed":
        k1 = a[1] / a[0]
        lam1 = k1 * H1 / H2
        k2_pos = (b[0] == 0.0) or (b[1] / b[0] >= 0)
        lam2 = b[0] * H2 / (b[1] * H1)
        if k1 < 0 and not k2_pos:
            den = 1.0 - lam1 * lam2
            out.append((Extents.from_mn(2, sf((2 - lam2) / den), sf((1 - 2 * lam1) / den) + 1, 2),
                        "mixed-middle"))
            out.append((Extents.from_mn(2, sf((1 - 2 * lam2) / den) + 1, sf((2 - lam1) / den), 2),
                        "mixed-right"))
        elif k1 >= 0 and k2_pos:
            out.append((Extents.from_mn(sf(2 * lam2) + 2, 1, 1, sf(2 * lam1) + 3), "mixed-pp"))
        elif k1 >= 0:
            m2 = sf(2 * _pos(-lam2)) + 2
            out.append((Extents.from_mn(2, m2, 1, sf((m2 + 1) * lam1) + 3), "mixed-pn"))
        else:
            n1 = sf(2 * _pos(-lam1)) + 2
            out.append((Extents.from_mn(sf((n1 + 1) * lam2) + 2, 1, n1, 2), "mixed-np"))
    elif case == "same":
        lam = [v[0] * H2 / (v[1] * H1) for v in (a, b)]
        if lam[0] == lam[1]:
            raise MergeError("parallel arms at a singular point")
        n1 = sf(3.0 / abs(lam[0] - lam[1])) + 1
        m1 = max(sf((n1 + 1) * _pos(x)) for x in lam) + 3
        m2 = max(sf((n1 + 1) * _pos(-x)) for x in lam) + 2
        out.append((Extents.from_mn(m1, m2, n1, 2), "same"))
    else:
        lam = [v[0] * H2 / (v[1] * H1) for v in (a, b)]
        m1 = max(sf(2 * _pos(x)) for x in lam) + 3
        m2 = max(sf(2 * _pos(-x)) for x in lam) + 2
        out.append((Extents.from_mn(m1, m2, 1, 2), "opposite"))
    return [(_from_canonical(e, sym), name) for e, name in out]


# ---------------------------------------------------------------------------
# ring scan
# ---------------------------------------------------------------------------

def ring_positions(ext: Extents) -> list[tuple[int, int]]:
    """Cells of the first layer around the pattern, in counter-clockwise
    order, as offsets from the host cell."""
    i0, i1 = -ext.left - 1, ext.right + 1
    j0, j1 = -ext.down - 1, ext.up + 1
    out = [(i, j0) for i in range(i0, i1 + 1)]
    out += [(i1, j) for j in range(j0 + 1, j1 + 1)]
    out += [(i, j1) for i in range(i1 - 1, i0 - 1, -1)]
    out += [(i0, j) for j in range(j1 - 1, j0, -1)]
    return out


@dataclass
class RingScan:
    ok: bool
    reason: str = ""
    outlets: list = field(default_factory=list)    # lists of ring offsets
    dist: int = 0


def scan_ring(ext: Extents, cell_info) -> RingScan:
    """Check the outlet conditions on the ring around a pattern.

    ``cell_info(i, j)`` returns the :class:`CutInfo` of the ring cell at
    offset ``(i, j)`` (or ``None`` when it falls outside the mesh).
    """
    pos = ring_positions(ext)
    infos = [cell_info(i, j) for i, j in pos]
    if any(inf is None for inf in infos):
        return RingScan(False, "ring leaves the mesh")
    cut = [inf.is_cut or not inf.proper for inf in infos]
    if not any(cut):
        return RingScan(False, "no outlet")
    n = len(pos)
    start = next(k for k in range(n) if not cut[k]) if not all(cut) else None
    if start is None:
        return RingScan(False, "ring entirely cut")
    runs, cur = [], []
    for step in range(1, n + 1):
        k = (start + step) % n
        if cut[k]:
            cur.append(k)
        elif cur:
            runs.append(cur)
            cur = []
    if cur:
        runs.append(cur)
    if len(runs) != 2:
        return RingScan(False, f"{len(runs)} outlet patches")
    for run in runs:
        kinds = [infos[k].cut_type for k in run]
        if kinds == ["T2"]:
            continue
        if kinds == ["T1", "T1"]:
            continue
        return RingScan(False, f"outlet of kinds {kinds}")
    a, b = runs
    gap1 = (b[0] - a[-1]) % n - 1
    gap2 = (a[0] - b[-1]) % n - 1
    dist = min(gap1, gap2)
    if dist < 2:
        return RingScan(False, f"outlets {dist} cells apart", dist=dist)
    return RingScan(True, outlets=[[pos[k] for k in a], [pos[k] for k in b]], dist=dist)


# ---------------------------------------------------------------------------
# singular patterns on a mesh
# ---------------------------------------------------------------------------

@dataclass
class SingularPattern:
    host: tuple                  # leaf (level, i, j) containing Q
    Q: np.ndarray
    curve_index: int
    vertex_index: int
    extents: Extents
    rect: tuple
    info: CutInfo
    outlets: list                # lists of leaves
    dist: int
    source: str                  # which construction produced the extents
    formula_ok: bool = True

    @property
    def level(self) -> int:
        return self.host[0]

    @property
    def bound(self) -> float:
        return self.extents.bound

    @property
    def delta(self) -> float:
        return self.info.delta

    @property
    def delta_tilde(self) -> float:
        return self.info.delta_tilde

    def cells(self) -> list:
        L, i, j = self.host
        e = self.extents
        return [(L, i + a, j + b) for a in range(-e.left, e.right + 1) for b in range(-e.down, e.up + 1)]

    def ring_box_cells(self) -> list:
        L, i, j = self.host
        e = self.extents
        return [(L, i + a, j + b) for a in range(-e.left - 1, e.right + 2)
                for b in range(-e.down - 1, e.up + 2)]


def _pattern_rect(mesh, host, ext):
    L, i, j = host
    return (mesh.xcoord(L, i - ext.left), mesh.xcoord(L, i + ext.right + 1),
            mesh.ycoord(L, j - ext.down), mesh.ycoord(L, j + ext.up + 1))


def try_pattern(mesh, classify, host, ext, need_leaves=True):
    """Verify one candidate pattern on the level grid of ``host``.

    Returns ``(RingScan, CutInfo)``.  With ``need_leaves`` every grid cell of
    the ring box must be a leaf of the mesh.
    """
    L, i, j = host

    def grid_info(a, b):
        c = (L, i + a, j + b)
        if not mesh.inside_grid(c):
            return None
        return classify(mesh.bounds(c))

    if need_leaves:
        for a in range(-ext.left - 1, ext.right + 2):
            for b in range(-ext.down - 1, ext.up + 2):
                c = (L, i + a, j + b)
                if mesh.inside_grid(c) and c not in mesh.leaves:
                    return RingScan(False, "ring box is not uniform"), None
    rect = _pattern_rect(mesh, host, ext)
    x0, x1, y0, y1 = mesh.box
    if rect[0] < x0 or rect[1] > x1 or rect[2] < y0 or rect[3] > y1:
        return RingScan(False, "pattern leaves the mesh"), None
    info = classify(rect)
    if not (info.is_cut and info.proper and info.singular):
        return RingScan(False, f"pattern cut is {info.cut_type}: {info.reason}"), info
    scan = scan_ring(ext, grid_info)
    if scan.ok and min(info.delta, info.delta_tilde) < ext.bound - 1e-12:
        return RingScan(False, "pattern below its index bound"), info
    return scan, info


def build_singular_pattern(mesh, domain, host, vertex, curve_index=0, classify=None,
                           memo: Extents | None = None, max_growth: int = 2, within=None):
    """Singular pattern around the singular vertex hosted by leaf ``host``.

    Tries the previous extents ``memo`` (nested rebuild), then the case
    formulas, then grown versions of them.  Returns ``None`` if nothing
    verifies on the current mesh.
    """
    classify = classify or Classifier(domain)
    hx, hy = mesh.size(host)
    a, b = vertex.arms()
    cands = []
    if memo is not None:
        cands.append((memo, "nested"))
    formula = lemma_extents(a, b, hx, hy)
    cands += formula
    for e, name in formula:
        for g in sorted(itertools.product(range(max_growth + 1), repeat=4), key=sum):
            if sum(g):
                cands.append((e.grown(*g), "fallback"))
    seen = set()
    for ext, name in cands:
        if ext in seen:
            continue
        seen.add(ext)
        if within is not None:
            r = _pattern_rect(mesh, host, ext)
            if r[0] < within[0] or r[1] > within[1] or r[2] < within[2] or r[3] > within[3]:
                continue
        scan, info = try_pattern(mesh, classify, host, ext)
        if scan.reason == "ring box is not uniform":
            if within is not None:
                # nested rebuild: rings reaching the coarse cells outside are skipped
                continue
            return _NonUniform(ext)
        if scan.ok:
            L, i, j = host
            outlets = [[(L, i + p, j + q) for p, q in run] for run in scan.outlets]
            return SingularPattern(host, vertex.point.copy(), curve_index, vertex.index, ext,
                                   _pattern_rect(mesh, host, ext), info, outlets, scan.dist, name,
                                   formula_ok=name != "fallback")
    return None


@dataclass
class _NonUniform:
    extents: Extents


# ---------------------------------------------------------------------------
# chains and admissibility
# ---------------------------------------------------------------------------

@dataclass
class Chain:
    curve_index: int
    cells: list
    closed: bool

    def __len__(self):
        return len(self.cells)

    def levels(self):
        return [c[0] for c in self.cells]


def build_chains(mesh: QuadtreeMesh, domain: DomainConfig, classify=None, cells=None) -> list[Chain]:
    """Order the cut leaves of every curve along the curve parameter.

    Consecutive cells must share their exit/entry crossing exactly; a break
    in continuity raises :class:`MergeError`.  ``cells`` restricts the scan
    (default: all leaves).
    """
    classify = classify or Classifier(domain)
    per_curve: dict = {}
    for c in (cells if cells is not None else mesh.leaves):
        info = classify(mesh.bounds(c))
        if info.is_cut:
            if not info.proper:
                raise MergeError("chains need proper cuts", c, info.reason)
            per_curve.setdefault(info.curve_index, []).append((info.sA, c, info))
    chains = []
    for ci in sorted(per_curve):
        cs = domain.curves[ci]
        n = cs.curve.n_segments
        items = sorted(per_curve[ci], key=lambda r: r[0] % n if cs.curve.closed else r[0])
        cells_sorted = [c for _, c, _ in items]
        infos = [inf for _, _, inf in items]
        for k in range(len(infos) - 1):
            if not np.array_equal(infos[k].B, infos[k + 1].A):
                raise MergeError("orphan cut cell: chain is not continuous", cells_sorted[k + 1])
        closed = cs.curve.closed
        if closed and not np.array_equal(infos[-1].B, infos[0].A):
            raise MergeError("closed chain does not close up", cells_sorted[-1], cells_sorted[0])
        if not closed:
            x0, x1, y0, y1 = domain.box
            for p in (infos[0].A, infos[-1].B):
                if not (p[0] in (x0, x1) or p[1] in (y0, y1)):
                    raise MergeError("open chain must end on the outer box", p)
        chains.append(Chain(ci, cells_sorted, closed))
    return chains


def check_admissible(chain: Chain, mesh: QuadtreeMesh, domain: DomainConfig, classify=None) -> list:
    """Violations ``(rule, cell)`` of the four admissibility rules."""
    classify = classify or Classifier(domain)
    out = []
    members = set(chain.cells)
    for K in chain.cells:
        L = K[0]
        if any(q[0] != L for q in mesh.layer(K, 2)):
            out.append((1, K))
        info = classify(mesh.bounds(K))
        # rule 2: a side lying in one subdomain is a full side of an uncut neighbour
        for side in (WEST, EAST, SOUTH, NORTH):
            nb = mesh.side_neighbors(K, side)
            if not nb:
                continue
            if _side_uncut(info, side):
                if len(nb) != 1 or nb[0][0] != L or classify(mesh.bounds(nb[0])).is_cut:
                    out.append((2, K))
    around = set()
    for K in chain.cells:
        around |= mesh.touching(K)
    uncut = [q for q in around if not classify(mesh.bounds(q)).is_cut]
    for U in uncut:
        n_adj = sum(1 for side in (WEST, EAST, SOUTH, NORTH)
                    for q in mesh.side_neighbors(U, side) if q in members)
        if n_adj > 2:
            out.append((3, U))
        for j in (1, 2):
            cut = [q for q in mesh.layer(U, j) if q in members]
            if cut and not _connected(mesh, cut):
                out.append((4, U))
                break
    return out


def _side_uncut(info: CutInfo, side) -> bool:
    if not info.is_cut:
        return True
    from .cutcell import side_parts
    k = {SOUTH: 0, EAST: 1, NORTH: 2, WEST: 3}[side]
    parts = side_parts(info)[k]
    return len(parts) == 1


def _connected(mesh, cells) -> bool:
    """Whether the union of closed cells has connected interior (cells
    linked through shared sides)."""
    cells = list(cells)
    todo = {cells[0]}
    seen = set()
    pool = set(cells)
    while todo:
        c = todo.pop()
        seen.add(c)
        for side in (WEST, EAST, SOUTH, NORTH):
            for q in mesh.side_neighbors(c, side):
                if q in pool and q not in seen:
                    todo.add(q)
    return seen == pool


def find_admissible_subchains(chain: Chain, mesh: QuadtreeMesh, domain: DomainConfig,
                              classify=None, max_rounds: int = 40):
    """Split a chain into maximal constant-level runs.

    Level jumps larger than two between consecutive chain cells are removed
    by refining the coarser cell (the chain is rebuilt after each round).
    Returns the final chain and the ``(n_runs, 2)`` matrix of 1-based
    inclusive index ranges.
    """
    classify = classify or Classifier(domain)
    for _ in range(max_rounds):
        lv = chain.levels()
        bad = [k for k in range(len(lv) - 1) if abs(lv[k] - lv[k + 1]) > 2]
        if chain.closed and len(lv) > 1 and abs(lv[-1] - lv[0]) > 2:
            bad.append(len(lv) - 1)
        if not bad:
            break
        todo = set()
        for k in bad:
            a, b = chain.cells[k], chain.cells[(k + 1) % len(chain.cells)]
            todo.add(a if a[0] < b[0] else b)
        mesh.refine(todo)
        chains = [c for c in build_chains(mesh, domain, classify) if c.curve_index == chain.curve_index]
        chain = chains[0]
    else:
        raise MergeError("level jumps along the chain did not settle")
    lv = chain.levels()
    rows = []
    start = 0
    for k in range(1, len(lv) + 1):
        if k == len(lv) or lv[k] != lv[start]:
            rows.append((start + 1, k))
            start = k
    return chain, np.array(rows, dtype=int).reshape(-1, 2)


# ---------------------------------------------------------------------------
# macros and the induced mesh
# ---------------------------------------------------------------------------

@dataclass
class Macro:
    rect: tuple
    leaves: tuple
    info: CutInfo
    tag: str                      # regular (uncut) | large (cut) | singular
    level: int
    pattern: int | None = None

    @property
    def is_cut(self) -> bool:
        return self.info.is_cut

    @property
    def h(self) -> float:
        x0, x1, y0, y1 = self.rect
        return max(x1 - x0, y1 - y0)


def _sides_nested(a0, a1, b0, b1) -> bool:
    if min(a1, b1) <= max(a0, b0):
        return True                           # no shared piece of positive length
    return (a0 <= b0 and b1 <= a1) or (b0 <= a0 and a1 <= b1)


def _h4_pair(r, s) -> bool:
    """Whether rectangles ``r`` and ``s`` satisfy the side-nesting condition."""
    if r[1] == s[0] or s[1] == r[0]:
        return _sides_nested(r[2], r[3], s[2], s[3])
    if r[3] == s[2] or s[3] == r[2]:
        return _sides_nested(r[0], r[1], s[0], s[1])
    return True


class _Merger:
    """Greedy block merger with a registry of claimed leaves."""

    def __init__(self, mesh, classify, delta0):
        self.mesh = mesh
        self.classify = classify
        self.delta0 = delta0
        self.claimed: dict = {}          # leaf -> Macro
        self.macros: list = []

    def claim(self, macro: Macro):
        for q in macro.leaves:
            if q in self.claimed:
                raise MergeError("leaf claimed twice", q, macro.rect)
            self.claimed[q] = macro
        self.macros.append(macro)

    def element_rect(self, q):
        m = self.claimed.get(q)
        return m.rect if m is not None else self.mesh.bounds(q)

    def block(self, L, i0, j0, a, b):
        return [(L, i, j) for i in range(i0, i0 + a) for j in range(j0, j0 + b)]

    def h4_ok(self, rect, cells) -> bool:
        inside = set(cells)
        seen = set()
        for c in cells:
            for side in (WEST, EAST, SOUTH, NORTH):
                for q in self.mesh.side_neighbors(c, side):
                    if q in inside or q in seen:
                        continue
                    seen.add(q)
                    if not _h4_pair(rect, self.element_rect(q)):
                        return False
        return True

    def candidates(self, K, allowed=None, max_side=3):
        L, i, j = K
        out = []
        for a in range(1, max_side + 1):
            for b in range(1, max_side + 1):
                if a == b == 1:
                    continue
                for oi in range(a):
                    for oj in range(b):
                        out.append((a * b, abs(a - b), a, b, i - oi, j - oj))
        out.sort()
        return out

    def try_block(self, L, i0, j0, a, b, allowed=None):
        cells = self.block(L, i0, j0, a, b)
        for q in cells:
            if q not in self.mesh.leaves or q in self.claimed:
                return None
            if allowed is not None and q not in allowed:
                return None
        rect = (self.mesh.xcoord(L, i0), self.mesh.xcoord(L, i0 + a),
                self.mesh.ycoord(L, j0), self.mesh.ycoord(L, j0 + b))
        info = self.classify(rect)
        if not (info.is_cut and info.proper and not info.singular):
            return None
        if info.delta < self.delta0:
            return None
        if not self.h4_ok(rect, cells):
            return None
        return Macro(rect, tuple(sorted(cells)), info, "large", L)

    def merge_small(self, K, allowed=None):
        """Best block containing the small cut leaf ``K``, or ``None``."""
        best, best_area = None, None
        for area, _, a, b, i0, j0 in self.candidates(K):
            if best is not None and area > best_area:
                break
            m = self.try_block(K[0], i0, j0, a, b, allowed)
            if m is not None and (best is None or m.info.delta > best.info.delta):
                best, best_area = m, area
        return best


def merge_smooth_subchain(mesh, domain, cells, delta0: float = 0.2, classify=None,
                          merger: _Merger | None = None, allowed=None):
    """Cover the cut leaves ``cells`` with large rectangular macros.

    Leaves with geometric index at least ``delta0`` stay single; smaller ones
    are merged with neighbouring leaves of the same level into blocks of at
    most 3 by 3 leaves.  Returns ``(macros, failed)`` where ``failed`` lists
    the leaves no admissible block could absorb.
    """
    classify = classify or Classifier(domain)
    merger = merger or _Merger(mesh, classify, delta0)
    start = len(merger.macros)
    infos = {c: classify(mesh.bounds(c)) for c in cells}
    small = sorted((c for c in cells if infos[c].delta < delta0), key=lambda c: (infos[c].delta, c))
    failed = []
    for K in small:
        if K in merger.claimed:
            continue
        m = merger.merge_small(K, allowed)
        if m is None:
            failed.append(K)
        else:
            merger.claim(m)
    for K in sorted(cells):
        if K not in merger.claimed and K not in failed:
            info = infos[K]
            if info.is_cut and info.proper and not info.singular and info.delta >= delta0:
                if merger.h4_ok(info.rect, [K]):
                    merger.claim(Macro(info.rect, (K,), info, "large", K[0]))
                    continue
            failed.append(K)
    return merger.macros[start:], failed


# ---------------------------------------------------------------------------
# outlet and pattern refinement
# ---------------------------------------------------------------------------

def _ring_region(pattern: SingularPattern):
    L, i, j = pattern.host
    e = pattern.extents
    inner = (i - e.left, i + e.right + 1, j - e.down, j + e.up + 1)
    outer = (inner[0] - 1, inner[1] + 1, inner[2] - 1, inner[3] + 1)
    return L, inner, outer


def _in_grid_box(c, L, box):
    """Whether leaf ``c`` lies inside the level-``L`` index box ``box``."""
    Lc, i, j = c
    s = Lc - L
    if s >= 0:
        return box[0] << s <= i < box[1] << s and box[2] << s <= j < box[3] << s
    return False


def _in_grid_box_any(c, L, box):
    """Whether leaf ``c`` (of any level) lies inside the level-``L`` index box."""
    Lc, i, j = c
    if Lc >= L:
        return _in_grid_box(c, L, box)
    s = L - Lc
    return box[0] <= i << s and (i + 1) << s <= box[1] and box[2] <= j << s and (j + 1) << s <= box[3]


def refine_outlet(mesh, domain, pattern: SingularPattern, outlet: list, ell: int,
                  delta0: float = 0.2, classify=None):
    """Refine an outlet patch ``ell`` times, merging what falls off it.

    Returns the new outlet patch and the list of large macros covering the
    curve inside the old patch but outside the new one.
    """
    classify = classify or Classifier(domain)
    L, inner, outer = _ring_region(pattern)

    def in_ring(c):
        return _in_grid_box(c, L, outer) and not _in_grid_box(c, L, inner)

    def on_outer(c):
        x0, x1, y0, y1 = mesh.bounds(c)
        X0, X1 = mesh.xcoord(L, outer[0]), mesh.xcoord(L, outer[1])
        Y0, Y1 = mesh.ycoord(L, outer[2]), mesh.ycoord(L, outer[3])
        return x0 == X0 or x1 == X1 or y0 == Y0 or y1 == Y1

    P = list(outlet)
    made = []
    for _ in range(ell):
        todo = set(P)
        for c in P:
            todo |= {q for q in mesh.touching(c) if in_ring(q)}
        mesh.refine(todo)
        region = set()
        for c in todo:
            region |= set(mesh.descend(c))
        cut = [q for q in region if classify(mesh.bounds(q)).is_cut]
        P_next = [q for q in cut if on_outer(q)]
        rest = [q for q in cut if q not in P_next]
        allowed = {q for q in mesh.leaves if in_ring(q)}
        merger = _Merger(mesh, classify, delta0)
        for q in P_next:
            merger.claimed[q] = None
        macros, failed = merge_smooth_subchain(mesh, domain, rest, delta0, classify, merger, allowed)
        if failed:
            raise MergeError("outlet remnants could not be merged", failed)
        made += macros
        P = sorted(P_next)
    return P, made


def refine_singular_pattern(mesh, domain, pattern: SingularPattern, vertex,
                            delta0: float | None = None, classify=None, merge_remnants: bool = True):
    """Quad-refine all leaves of a pattern and rebuild it one level finer.

    The rebuilt pattern reuses the integer extents, so it is nested in the
    old one.  Cut leaves left between the two are merged inside the old
    pattern.  Returns the new pattern and those macros.
    """
    classify = classify or Classifier(domain)
    mesh.refine(pattern.cells())
    host = mesh.locate(*pattern.Q)
    new = build_singular_pattern(mesh, domain, host, vertex, pattern.curve_index, classify,
                                 memo=pattern.extents, within=pattern.rect)
    if not isinstance(new, SingularPattern):
        raise MergeError("rebuilt pattern does not verify", pattern.rect)
    if not merge_remnants:
        return new, []
    if delta0 is None:
        delta0 = min(0.2, new.delta, new.delta_tilde)
    L0, inner0, outer0 = _ring_region(pattern)
    L1, inner1, _ = _ring_region(new)
    region = {q for q in mesh.leaves if _in_grid_box(q, L0, inner0)}
    for _ in range(3):
        todo = [q for q in region
                if not _in_grid_box(q, L1, inner1) and classify(mesh.bounds(q)).is_cut]
        merger = _Merger(mesh, classify, delta0)
        for q in new.cells():
            merger.claimed[q] = None
        macros, failed = merge_smooth_subchain(mesh, domain, todo, delta0, classify, merger, region)
        if not failed:
            break
        # coarse ring neighbours get in the way: refine them (they belong to
        # the outlet region) and merge again
        ring = set()
        for K in failed:
            ring |= {q for q in mesh.touching(K) if q[0] < K[0] and _in_grid_box_any(q, L0, outer0)}
        if not ring:
            break
        mesh.refine(ring)
        for q in ring:
            region |= set(mesh.descend(q))
        region &= mesh.leaves
    if failed:
        raise MergeError("pattern remnants could not be merged", failed)
    return new, macros


# ---------------------------------------------------------------------------
# the full pipeline
# ---------------------------------------------------------------------------

class InducedMesh:
    """Macro-elements covering a quadtree mesh."""

    def __init__(self, mesh, domain, macros, patterns, delta0, pattern_memo=None, rounds=0):
        self.mesh = mesh
        self.domain = domain
        self.macros: list[Macro] = macros
        self.patterns: list[SingularPattern] = patterns
        self.delta0 = delta0
        self.pattern_memo = pattern_memo or {}
        self.rounds = rounds
        self.leaf_macro: dict = {}
        for k, m in enumerate(macros):
            for q in m.leaves:
                if q in self.leaf_macro:
                    raise MergeError("leaf in two macros", q)
                self.leaf_macro[q] = k

    def __len__(self):
        return len(self.macros)

    def macro_of(self, leaf) -> Macro:
        return self.macros[self.leaf_macro[leaf]]

    def cut_macros(self) -> list:
        return [m for m in self.macros if m.is_cut]

    def counts(self) -> dict:
        out: dict = {}
        for m in self.macros:
            out[m.tag] = out.get(m.tag, 0) + 1
        return out

    def locate(self, x: float, y: float) -> int:
        return self.leaf_macro.get(self.mesh.locate(x, y), -1)

    # contract ---------------------------------------------------------
    def violations(self, n_samples: int = 1000, c0: float = 4.0) -> list:
        """Every broken invariant as ``(kind, detail)``; empty when valid."""
        out = []
        d0 = self.delta0 - 1e-12
        for k, m in enumerate(self.macros):
            if m.is_cut:
                if not m.info.proper:
                    out.append(("improper", k))
                    continue
                if m.info.delta < d0:
                    out.append(("small", k))
                if m.info.singular and m.info.delta_tilde < d0:
                    out.append(("small singular index", k))
                if m.tag != "singular":
                    hx, hy = self.mesh.size(m.leaves[0])
                    if m.h > c0 * max(hx, hy) + 1e-14:
                        out.append(("too wide", k))
            # union of leaves fills the rectangle
            area = math.fsum(self.mesh.size(q)[0] * self.mesh.size(q)[1] for q in m.leaves)
            x0, x1, y0, y1 = m.rect
            if abs(area - (x1 - x0) * (y1 - y0)) > 1e-12 * (x1 - x0) * (y1 - y0):
                out.append(("not a union of its leaves", k))
        for q in self.mesh.leaves:
            if q not in self.leaf_macro:
                info = self._leaf_info(q)
                if info.is_cut or info.label != 0:
                    out.append(("uncovered leaf", q))
        out += [("H4", pair) for pair in self._h4_violations()]
        for ci, cs in enumerate(self.domain.curves):
            n = cs.curve.n_segments
            s = (np.arange(n_samples) + 0.5) / n_samples * n
            for p in cs.curve.point(s):
                k = self.locate(*p)
                if k < 0 or not self._near(self.macros[k].rect, p):
                    out.append(("curve not covered", tuple(p)))
                    break
        return out

    def _leaf_info(self, q):
        return classify_rect(self.mesh.bounds(q), self.domain)

    @staticmethod
    def _near(rect, p):
        return rect[0] <= p[0] <= rect[1] and rect[2] <= p[1] <= rect[3]

    def _h4_violations(self):
        bad = []
        for k, m in enumerate(self.macros):
            for q in m.leaves:
                for side in (EAST, NORTH):
                    for r in self.mesh.side_neighbors(q, side):
                        j = self.leaf_macro.get(r)
                        if j is None or j == k:
                            continue
                        if not _h4_pair(m.rect, self.macros[j].rect):
                            bad.append((k, j))
        return sorted(set(bad))

    def validate(self, **kw) -> "InducedMesh":
        bad = self.violations(**kw)
        if bad:
            raise MergeError(f"induced mesh violates its contract: {bad[:5]}", bad)
        return self

    # export -----------------------------------------------------------
    def dump_text(self) -> str:
        lines = []
        for q in sorted(self.mesh.leaves):
            (ri, rj), digits = self.mesh.path(q)
            k = self.leaf_macro.get(q, -1)
            tag = self.macros[k].tag if k >= 0 else "outside"
            lines.append(f"{ri},{rj}:{digits or '-'} {k} {tag}")
        return "\n".join(lines) + "\n"

    def to_svg(self, **kw) -> str:
        """One rectangle per macro and one polyline per curve."""
        rects = [m.rect for m in self.macros]
        kw.setdefault("show_leaves", False)
        return self.mesh.to_svg([cs.curve for cs in self.domain.curves], rects, **kw)


def _grid_box_leaves(mesh, L, box):
    """Leaves overlapping the level-``L`` index box ``box``."""
    i0, i1, j0, j1 = box
    out = set()
    for i in range(max(i0, 0), min(i1, mesh.nx << L)):
        for j in range(max(j0, 0), min(j1, mesh.ny << L)):
            out.update(mesh.region_leaves((L, i, j)))
    return out


def _box_of(host, ext, pad=1):
    L, i, j = host
    return (i - ext.left - pad, i + ext.right + 1 + pad, j - ext.down - pad, j + ext.up + 1 + pad)


def _boxes_overlap(a, b):
    (La, A), (Lb, B) = a, b
    L = max(La, Lb)
    A = [v << (L - La) for v in A]
    B = [v << (L - Lb) for v in B]
    return A[0] < B[1] and B[0] < A[1] and A[2] < B[3] and B[2] < A[3]


def induce(mesh: QuadtreeMesh, domain: DomainConfig, delta0: float | None = None,
           classify=None, memo: dict | None = None, max_rounds: int = 40) -> InducedMesh:
    """Refine ``mesh`` as needed and merge its cut leaves into large macros.

    Runs in rounds: build and verify a singular pattern at every singular
    point, refine improper cut leaves, merge the remaining cut leaves, and
    refine around any leaf that could not be merged.  ``delta0`` defaults to
    ``min(1/5, smallest pattern index)``.
    """
    classify = classify or Classifier(domain)
    memo = dict(memo or {})
    bx0, bx1, by0, by1 = domain.box
    singular = [(ci, v) for ci, v in domain.singular_points()
                if bx0 < v.point[0] < bx1 and by0 < v.point[1] < by1]
    for rnd in range(1, max_rounds + 1):
        refine = set()
        patterns = []
        for ci, v in singular:
            host = mesh.locate(*v.point)
            key = (ci, v.index)
            prev = memo.get(key)
            res = build_singular_pattern(mesh, domain, host, v, ci, classify, memo=prev)
            if isinstance(res, SingularPattern):
                patterns.append(res)
                continue
            ext = res.extents if isinstance(res, _NonUniform) else lemma_extents(*v.arms(), *mesh.size(host))[0][0]
            region = _grid_box_leaves(mesh, host[0], _box_of(host, ext))
            top = max(q[0] for q in region)
            coarse = {q for q in region if q[0] < top}
            refine |= coarse if coarse else region
        boxes = [(p.level, _box_of(p.host, p.extents)) for p in patterns]
        for a in range(len(patterns)):
            for b in range(a + 1, len(patterns)):
                if _boxes_overlap(boxes[a], boxes[b]):
                    for p in (patterns[a], patterns[b]):
                        refine |= _grid_box_leaves(mesh, p.level, _box_of(p.host, p.extents))
        if refine:
            mesh.refine(refine)
            continue
        d_s = min((min(p.delta, p.delta_tilde) for p in patterns), default=1.0)
        d0 = delta0 if delta0 is not None else min(0.2, d_s)
        merger = _Merger(mesh, classify, d0)
        for k, p in enumerate(patterns):
            merger.claim(Macro(p.rect, tuple(sorted(p.cells())), p.info, "singular", p.level, k))
        cut, improper = [], []
        for q in mesh.leaves:
            if q in merger.claimed:
                continue
            info = classify(mesh.bounds(q))
            if info.is_cut:
                (cut if info.proper and not info.singular else improper).append(q)
        if improper:
            mesh.refine(improper)
            continue
        _, failed = merge_smooth_subchain(mesh, domain, cut, d0, classify, merger)
        if failed:
            todo = set()
            for K in failed:
                near = [q for q in mesh.layer(K, 2) if q[0] < K[0] and q not in merger.claimed]
                todo |= set(near) if near else {K} | {q for q in mesh.touching(K)
                                                     if q not in merger.claimed
                                                     and classify(mesh.bounds(q)).is_cut}
            log.debug("round %d: %d leaves could not be merged", rnd, len(failed))
            mesh.refine(todo)
            continue
        for q in sorted(mesh.leaves):
            if q in merger.claimed:
                continue
            info = classify(mesh.bounds(q))
            if info.kind != "outside":
                merger.claim(Macro(info.rect, (q,), info, "regular", q[0]))
        new_memo = {(p.curve_index, p.vertex_index): p.extents for p in patterns}
        return InducedMesh(mesh, domain, merger.macros, patterns, d0, new_memo, rnd)
    raise MergeError(f"merging did not settle within {max_rounds} rounds")


def merge_closed_chain(mesh, domain, chain: Chain | None = None, **kw) -> InducedMesh:
    """Induced mesh for a closed chain: patterns at singular points, then
    greedy merging along the smooth connecting pieces."""
    if chain is not None and not chain.closed:
        raise MergeError("chain is not closed")
    induced = induce(mesh, domain, **kw)
    build_chains(mesh, domain)
    return induced


def sector_domain(Q, d1, d2, radius: float):
    """Closed polygon following the half lines ``Q + t d1`` and ``Q + t d2``
    out to ``radius`` and closing far away, so that near ``Q`` it is the
    straight sector between the two arms."""
    from .geometry import polygon_curve
    Q = np.asarray(Q, float)
    a1 = math.atan2(d1[1], d1[0])
    a2 = math.atan2(d2[1], d2[0])
    span = (a2 - a1) % (2 * math.pi)
    k = max(2, int(math.ceil(span / (math.pi / 6))))
    arc = [Q + radius * np.array([math.cos(a1 + span * t / k), math.sin(a1 + span * t / k)])
           for t in range(k + 1)]
    curve = polygon_curve([Q] + arc)
    R = 1.5 * radius
    box = (Q[0] - R, Q[0] + R, Q[1] - R, Q[1] + R)
    return DomainConfig(box, [_spec(curve)], {1: 1.0, 2: 1.0}, background=2)


def _spec(curve):
    from .geometry import CurveSpec
    left, right = (1, 2) if curve.counterclockwise else (2, 1)
    return CurveSpec(curve, left, right)


def sector_setup(alpha: float, beta: float, d1, d2, h1: float = 1.0, h2: float = 1.0, pad: int = 5):
    """Uniform grid and straight-sector domain around a singular vertex.

    The host cell is ``(-h1, 0) x (0, h2)`` shifted so that the vertex sits
    at ``(-alpha h1, beta h2)`` relative to its lower right corner.  Returns
    ``(mesh, domain, curve_index, vertex)``.
    """
    d1 = np.asarray(d1, float)
    d2 = np.asarray(d2, float)
    ext = lemma_extents(d1, d2, h1, h2)
    N = max(max(e.left, e.right, e.down, e.up) for e, _ in ext) + pad
    Q = np.array([0.0, 0.0])
    x0 = Q[0] + alpha * h1 - h1 - N * h1
    y0 = Q[1] - beta * h2 - N * h2
    n = 2 * N + 1
    mesh = QuadtreeMesh((x0, x0 + n * h1, y0, y0 + n * h2), n, n)
    domain = sector_domain(Q, d1, d2, 4.0 * n * max(h1, h2))
    ci, vertex = min(domain.singular_points(), key=lambda cv: np.hypot(*(cv[1].point - Q)))
    return mesh, domain, ci, vertex


def sector_pattern(alpha: float, beta: float, d1, d2, h1: float = 1.0, h2: float = 1.0,
                   max_growth: int = 2):
    """Build and verify the singular pattern of a straight sector (see
    :func:`sector_setup`).  Returns ``None`` if no candidate verifies."""
    mesh, domain, ci, vertex = sector_setup(alpha, beta, d1, d2, h1, h2, pad=max_growth + 3)
    host = mesh.locate(*vertex.point)
    res = build_singular_pattern(mesh, domain, host, vertex, ci, max_growth=max_growth)
    return res if isinstance(res, SingularPattern) else None
