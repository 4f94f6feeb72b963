"""Cartesian quadtree with 1-irregular closure.

A cell is the triple ``(level, i, j)``: the ``i``-th column and ``j``-th row of
the uniform grid obtained by refining the root grid ``level`` times.  All
geometric predicates are integer comparisons; coordinates are computed as
``x0 + hx * (i / 2**level)`` which is exact for the dyadic fractions involved,
so neighbouring cells share bit-identical corner coordinates.
"""
from __future__ import annotations

import math
from collections import defaultdict
from typing import Iterable, Iterator

import numpy as np

__all__ = ["QuadtreeMesh", "Cell", "WEST", "EAST", "SOUTH", "NORTH"]

Cell = tuple  # (level, i, j)

WEST, EAST, SOUTH, NORTH = 0, 1, 2, 3
_STEP = {WEST: (-1, 0), EAST: (1, 0), SOUTH: (0, -1), NORTH: (0, 1)}
_OPPOSITE = {WEST: EAST, EAST: WEST, SOUTH: NORTH, NORTH: SOUTH}


def _children(c: Cell) -> tuple:
    L, i, j = c
    return ((L + 1, 2 * i, 2 * j), (L + 1, 2 * i + 1, 2 * j),
            (L + 1, 2 * i, 2 * j + 1), (L + 1, 2 * i + 1, 2 * j + 1))


def _parent(c: Cell) -> Cell:
    L, i, j = c
    return (L - 1, i >> 1, j >> 1)


def _span(c: Cell, M: int):
    """Integer extent of ``c`` on the level-``M`` grid."""
    L, i, j = c
    s = 1 << (M - L)
    return i * s, (i + 1) * s, j * s, (j + 1) * s


def _closures_meet(a: Cell, b: Cell) -> bool:
    M = max(a[0], b[0])
    ax0, ax1, ay0, ay1 = _span(a, M)
    bx0, bx1, by0, by1 = _span(b, M)
    return ax0 <= bx1 and bx0 <= ax1 and ay0 <= by1 and by0 <= ay1


def _adjacent_to_side(child: Cell, side: int) -> bool:
    # is the child on the given side of its parent
    _, i, j = child
    if side == WEST:
        return i % 2 == 0
    if side == EAST:
        return i % 2 == 1
    if side == SOUTH:
        return j % 2 == 0
    return j % 2 == 1


class QuadtreeMesh:
    """Leaves of a forest of quadtrees over an ``nx`` by ``ny`` root grid."""

    def __init__(self, box=(0.0, 1.0, 0.0, 1.0), nx: int = 1, ny: int = 1, level: int = 0):
        x0, x1, y0, y1 = map(float, box)
        if not (x1 > x0 and y1 > y0) or nx < 1 or ny < 1:
            raise ValueError("empty root grid")
        self.box = (x0, x1, y0, y1)
        self.nx, self.ny = int(nx), int(ny)
        self.hx0 = (x1 - x0) / self.nx
        self.hy0 = (y1 - y0) / self.ny
        self.leaves: set = {(0, i, j) for i in range(self.nx) for j in range(self.ny)}
        self.version = 0
        self._topo = None
        if level:
            for _ in range(level):
                self.refine(list(self.leaves))

    # ------------------------------------------------------------------
    # basic cell data
    # ------------------------------------------------------------------
    def copy(self) -> "QuadtreeMesh":
        m = QuadtreeMesh.__new__(QuadtreeMesh)
        m.box, m.nx, m.ny, m.hx0, m.hy0 = self.box, self.nx, self.ny, self.hx0, self.hy0
        m.leaves = set(self.leaves)
        m.version = 0
        m._topo = None
        return m

    def __len__(self):
        return len(self.leaves)

    def __iter__(self) -> Iterator[Cell]:
        return iter(sorted(self.leaves))

    def inside_grid(self, c: Cell) -> bool:
        L, i, j = c
        return 0 <= i < (self.nx << L) and 0 <= j < (self.ny << L)

    def xcoord(self, L: int, i: int) -> float:
        return self.box[0] + self.hx0 * (i / (1 << L))

    def ycoord(self, L: int, j: int) -> float:
        return self.box[2] + self.hy0 * (j / (1 << L))

    def bounds(self, c: Cell) -> tuple[float, float, float, float]:
        L, i, j = c
        return (self.xcoord(L, i), self.xcoord(L, i + 1), self.ycoord(L, j), self.ycoord(L, j + 1))

    def corners(self, c: Cell):
        """Corners in counter-clockwise order starting south-west."""
        x0, x1, y0, y1 = self.bounds(c)
        return ((x0, y0), (x1, y0), (x1, y1), (x0, y1))

    def size(self, c: Cell) -> tuple[float, float]:
        L = c[0]
        return self.hx0 / (1 << L), self.hy0 / (1 << L)

    def h(self, c: Cell) -> float:
        return max(self.size(c))

    @staticmethod
    def level(c: Cell) -> int:
        return c[0]

    def area(self) -> float:
        return math.fsum(self.size(c)[0] * self.size(c)[1] for c in self.leaves)

    # paths ------------------------------------------------------------
    @staticmethod
    def path(c: Cell) -> tuple[tuple[int, int], str]:
        """Root index and quadrant digits (0 SW, 1 SE, 2 NW, 3 NE)."""
        L, i, j = c
        digits = []
        for _ in range(L):
            digits.append(str((i & 1) + 2 * (j & 1)))
            i >>= 1
            j >>= 1
        return (i, j), "".join(reversed(digits))

    @staticmethod
    def cell_from_path(root: tuple[int, int], digits: str) -> Cell:
        L, i, j = 0, root[0], root[1]
        for d in digits:
            q = int(d)
            L, i, j = L + 1, 2 * i + (q & 1), 2 * j + (q >> 1)
        return (L, i, j)

    # ------------------------------------------------------------------
    # tree search
    # ------------------------------------------------------------------
    def leaf_at_or_above(self, c: Cell):
        """The leaf equal to or containing the grid cell ``c``, else ``None``."""
        while c[0] >= 0:
            if c in self.leaves:
                return c
            if c[0] == 0:
                return None
            c = _parent(c)
        return None

    def descend(self, c: Cell, keep=None) -> list:
        """Leaves inside the grid cell ``c`` whose ancestors pass ``keep``."""
        out = []
        stack = [c]
        while stack:
            q = stack.pop()
            if q in self.leaves:
                out.append(q)
                continue
            if q[0] > 60:
                raise RuntimeError("quadtree deeper than 60 levels")
            for ch in _children(q):
                if keep is None or keep(ch):
                    stack.append(ch)
        return out

    def region_leaves(self, c: Cell) -> list:
        """Leaves overlapping the grid cell ``c`` (coarser or finer)."""
        a = self.leaf_at_or_above(c)
        return [a] if a is not None else self.descend(c)

    def side_neighbors(self, c: Cell, side: int) -> list:
        """Leaves sharing a piece of side ``side`` of ``c``, ordered along it."""
        di, dj = _STEP[side]
        L, i, j = c
        n = (L, i + di, j + dj)
        if not self.inside_grid(n):
            return []
        a = self.leaf_at_or_above(n)
        if a is not None:
            return [a]
        facing = _OPPOSITE[side]
        out = self.descend(n, keep=lambda ch: _adjacent_to_side(ch, facing))
        axis = 1 if side in (WEST, EAST) else 0
        M = max(q[0] for q in out)
        out.sort(key=lambda q: _span(q, M)[2 * axis])
        return out

    def touching(self, c: Cell) -> set:
        """Leaves whose closure meets the closure of ``c`` (excluding ``c``)."""
        L, i, j = c
        out = set()
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                if di == 0 and dj == 0:
                    continue
                n = (L, i + di, j + dj)
                if not self.inside_grid(n):
                    continue
                a = self.leaf_at_or_above(n)
                if a is not None:
                    out.add(a)
                else:
                    out.update(self.descend(n, keep=lambda ch: _closures_meet(ch, c)))
        out.discard(c)
        return out

    def locate(self, x: float, y: float) -> Cell:
        """Leaf containing the point; cells are half-open except on the top
        and right sides of the box."""
        x0, x1, y0, y1 = self.box
        if not (x0 <= x <= x1 and y0 <= y <= y1):
            raise ValueError(f"point ({x}, {y}) outside the mesh")
        i = min(int((x - x0) / self.hx0), self.nx - 1)
        j = min(int((y - y0) / self.hy0), self.ny - 1)
        c = (0, i, j)
        while c not in self.leaves:
            bx0, bx1, by0, by1 = self.bounds(c)
            xm, ym = self.xcoord(c[0] + 1, 2 * c[1] + 1), self.ycoord(c[0] + 1, 2 * c[2] + 1)
            ii = 2 * c[1] + (1 if x >= xm else 0)
            jj = 2 * c[2] + (1 if y >= ym else 0)
            c = (c[0] + 1, ii, jj)
            if c[0] > 60:
                raise RuntimeError("locate descended too deep")
        return c

    def locate_many(self, pts) -> list:
        """Leaves holding many points at once (``None`` outside the box)."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        x0, x1, y0, y1 = self.box
        leaves = list(self.leaves)
        levels = sorted({c[0] for c in leaves})
        code = lambda L, i, j: (np.asarray(L, np.int64) << 58) | (np.asarray(i, np.int64) << 29) | j
        keys = np.sort(np.array([code(*c) for c in leaves], dtype=np.int64))
        inside = (pts[:, 0] >= x0) & (pts[:, 0] <= x1) & (pts[:, 1] >= y0) & (pts[:, 1] <= y1)
        u = (pts[:, 0] - x0) / self.hx0
        v = (pts[:, 1] - y0) / self.hy0
        found = np.full(len(pts), -1, dtype=np.int64)
        for L in levels:
            i = np.clip(np.floor(u * (1 << L)), 0, (self.nx << L) - 1).astype(np.int64)
            j = np.clip(np.floor(v * (1 << L)), 0, (self.ny << L) - 1).astype(np.int64)
            k = code(L, i, j)
            pos = np.clip(np.searchsorted(keys, k), 0, len(keys) - 1)
            hit = (keys[pos] == k) & (found < 0) & inside
            found[hit] = k[hit]
        out = []
        mask = (1 << 29) - 1
        for k, ok in zip(found, inside):
            if not ok:
                out.append(None)
            elif k < 0:         # rounding at a cell boundary
                out.append(None)
            else:
                out.append((int(k >> 58), int((k >> 29) & mask), int(k & mask)))
        for n, c in enumerate(out):
            if c is None and inside[n]:
                out[n] = self.locate(*pts[n])
        return out

    # ------------------------------------------------------------------
    # refinement
    # ------------------------------------------------------------------
    def _split(self, c: Cell) -> tuple:
        self.leaves.remove(c)
        ch = _children(c)
        self.leaves.update(ch)
        return ch

    def refine(self, cells: Iterable[Cell]) -> "QuadtreeMesh":
        """Quad-refine ``cells`` and restore 1-irregularity across edges."""
        cells = list(dict.fromkeys(cells))
        for c in cells:
            if c not in self.leaves:
                raise ValueError(f"{c} is not a leaf")
        if not cells:
            return self
        queue = []
        for c in cells:
            queue.extend(self._split(c))
        while queue:
            c = queue.pop()
            if c not in self.leaves:
                continue
            L, i, j = c
            for side, (di, dj) in _STEP.items():
                n = (L, i + di, j + dj)
                if not self.inside_grid(n):
                    continue
                a = self.leaf_at_or_above(n)
                if a is not None and a[0] < L - 1:
                    queue.extend(self._split(a))
                    queue.append(c)
        self.version += 1
        self._topo = None
        return self

    def max_level_jump(self) -> int:
        jump = 0
        for c in self.leaves:
            for side in (EAST, NORTH):
                for n in self.side_neighbors(c, side):
                    jump = max(jump, abs(n[0] - c[0]))
        return jump

    # ------------------------------------------------------------------
    # layers and patches
    # ------------------------------------------------------------------
    def layer(self, c: Cell, j: int) -> set:
        if c not in self.leaves:
            raise ValueError(f"{c} is not a leaf")
        cur = {c}
        frontier = {c}
        for _ in range(j):
            nxt = set()
            for q in frontier:
                nxt |= self.touching(q)
            frontier = nxt - cur
            cur |= nxt
        return cur

    def _topology(self):
        if self._topo is not None:
            return self._topo
        incident = defaultdict(set)     # vertex -> leaves having it as a corner
        for c in self.leaves:
            for v in self.corners(c):
                incident[v].add(c)
        masters = {}
        for c in self.leaves:
            cs = self.corners(c)
            side_pts = {WEST: (cs[0], cs[3]), EAST: (cs[1], cs[2]),
                        SOUTH: (cs[0], cs[1]), NORTH: (cs[3], cs[2])}
            for side in (WEST, EAST, SOUTH, NORTH):
                nb = self.side_neighbors(c, side)
                if len(nb) <= 1 and (not nb or nb[0][0] <= c[0]):
                    continue
                a, b = side_pts[side]
                axis = 1 if side in (WEST, EAST) else 0
                lo, hi = a[axis], b[axis]
                for q in nb:
                    for v in self.corners(q):
                        if v[1 - axis] == a[1 - axis] and lo < v[axis] < hi:
                            masters[v] = (a, b)
        dependents = defaultdict(set)   # conforming node -> hanging nodes using it
        for hv in masters:
            for m in self._conforming_masters(hv, masters):
                dependents[m].add(hv)
        self._topo = (incident, masters, dependents)
        return self._topo

    def hanging_nodes(self) -> dict:
        """Hanging vertex -> endpoints of the coarse edge containing it."""
        return dict(self._topology()[1])

    def conforming_nodes(self) -> set:
        incident, masters, _ = self._topology()
        return {v for v in incident if v not in masters}

    def _conforming_masters(self, v, masters):
        if v not in masters:
            return {v}
        out = set()
        for m in masters[v]:
            out |= self._conforming_masters(m, masters)
        return out

    def node_support(self, v) -> set:
        """Leaves where the conforming bilinear basis function at ``v`` is
        nonzero (corner cells plus cells of hanging nodes constrained by v)."""
        incident, masters, dependents = self._topology()
        sup = set(incident.get(v, ()))
        for hv in dependents.get(v, ()):
            sup |= incident[hv]
        return sup

    def patch(self, c: Cell) -> set:
        """Union of supports of conforming nodal functions that live on ``c``."""
        if c not in self.leaves:
            raise ValueError(f"{c} is not a leaf")
        _, masters, _ = self._topology()
        nodes = set()
        for v in self.corners(c):
            nodes |= self._conforming_masters(v, masters)
        out = set()
        for v in nodes:
            out |= self.node_support(v)
        return out

    # ------------------------------------------------------------------
    # export
    # ------------------------------------------------------------------
    def dump_text(self) -> str:
        lines = []
        for c in sorted(self.leaves, key=lambda q: (self.path(q), q)):
            (ri, rj), digits = self.path(c)
            x0, x1, y0, y1 = self.bounds(c)
            lines.append(f"{ri},{rj}:{digits or '-'} {x0!r} {x1!r} {y0!r} {y1!r} {c[0]}")
        return "\n".join(lines) + "\n"

    def to_svg(self, curves=(), macros=(), size: int = 800, stroke: float = 0.5,
               show_leaves: bool = True) -> str:
        x0, x1, y0, y1 = self.box
        sc = size / max(x1 - x0, y1 - y0)

        def X(x):
            return (x - x0) * sc

        def Y(y):
            return (y1 - y) * sc

        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{X(x1):.1f}" height="{Y(y0):.1f}">']
        for c in sorted(self.leaves) if show_leaves else ():
            a, b, cc, d = self.bounds(c)
            out.append(f'<rect x="{X(a):.3f}" y="{Y(d):.3f}" width="{(b - a) * sc:.3f}" '
                       f'height="{(d - cc) * sc:.3f}" fill="none" stroke="#888" stroke-width="{stroke}"/>')
        for rect in macros:
            a, b, cc, d = rect
            out.append(f'<rect x="{X(a):.3f}" y="{Y(d):.3f}" width="{(b - a) * sc:.3f}" '
                       f'height="{(d - cc) * sc:.3f}" fill="none" stroke="#1565c0" stroke-width="{2 * stroke}"/>')
        for curve in curves:
            p = curve.polyline(128)
            if curve.closed:
                p = np.vstack([p, p[:1]])
            pts = " ".join(f"{X(u):.3f},{Y(v):.3f}" for u, v in p)
            out.append(f'<polyline points="{pts}" fill="none" stroke="#c62828" stroke-width="{2 * stroke}"/>')
        out.append("</svg>")
        return "\n".join(out) + "\n"


def uniform_mesh(box, n: int) -> QuadtreeMesh:
    """Uniform ``n`` by ``n`` mesh (``n`` a power of two) as one refined root."""
    L = int(round(math.log2(n)))
    if 1 << L != n:
        return QuadtreeMesh(box, n, n)
    return QuadtreeMesh(box, 1, 1, level=L)
