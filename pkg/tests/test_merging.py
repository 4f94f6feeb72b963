import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ufem.bench.fuzz import fuzz_merging
from ufem.geometry import (CurveSpec, DomainConfig, circle_curve, five_star_curve, lens_curve,
                           polygon_curve)
from ufem.merging import (Extents, MergeError, build_chains, check_admissible,
                          find_admissible_subchains, induce, lemma_extents, merge_smooth_subchain,
                          refine_singular_pattern, ring_positions, scan_ring, sector_pattern,
                          sector_setup, build_singular_pattern, strict_floor)
from ufem.mesh import QuadtreeMesh, uniform_mesh


def interface(curve, box=(-1, 1, -1, 1)):
    left = 1 if curve.counterclockwise else 2
    return DomainConfig(box, [CurveSpec(curve, left, 3 - left)], {1: 1.0, 2: 1.0}, background=2)


def sampled_cut(domain, rect, n=40):
    """Oracle: a cell is cut iff point labels sampled on it differ."""
    x0, x1, y0, y1 = rect
    t = (np.arange(n) + 0.5) / n
    X, Y = np.meshgrid(x0 + t * (x1 - x0), y0 + t * (y1 - y0))
    return len({domain.label(x, y) for x, y in zip(X.ravel(), Y.ravel())}) > 1


def test_strict_floor():
    assert strict_floor(3.0) == 2
    assert strict_floor(2.5) == 2
    assert strict_floor(0.0) == -1


def test_lemma_mixed_example():
    # L1 leaves east with slope -0.5, L2 leaves south with dx/dy = -0.5
    (e1, c1), (e2, c2) = lemma_extents((1.0, -0.5), (0.5, -1.0), 1.0, 1.0)
    assert e1.mn == (2, 3, 3, 2) and c1 == "mixed-middle"
    assert e2.mn == (2, 3, 3, 2)


def test_lemma_same_region_example():
    (e, case), = lemma_extents((-0.2, -1.0), (0.2, -1.0), 1.0, 1.0)
    assert case == "same"
    assert e.mn == (math.floor(9 * 0.2) + 3, math.floor(9 * 0.2) + 2, 8, 2)


@settings(max_examples=100, deadline=None)
@given(t1=st.floats(0, 2 * math.pi), t2=st.floats(0, 2 * math.pi), h1=st.floats(0.5, 2.0))
def test_lemma_reflection_symmetry(t1, t2, h1):
    gap = abs(math.remainder(t1 - t2, 2 * math.pi))
    if gap < 0.3 or abs(gap - math.pi) < 0.01:
        return
    d1 = np.array([math.cos(t1), math.sin(t1)])
    d2 = np.array([math.cos(t2), math.sin(t2)])
    flip = np.array([-1.0, 1.0])
    cand = lemma_extents(d1, d2, h1, 1.0)
    if cand[0][1] == "opposite":
        return      # the printed formula for opposite arms is not mirror symmetric
    a = [e for e, _ in cand]
    b = [e for e, _ in lemma_extents(d1 * flip, d2 * flip, h1, 1.0)]
    assert {Extents(e.right, e.left, e.down, e.up) for e in a} == set(b)


def test_ring_positions_cover_the_ring_once():
    e = Extents(1, 2, 3, 1)
    pos = ring_positions(e)
    assert len(pos) == len(set(pos)) == 2 * (4 + 5) + 4
    for (i0, j0), (i1, j1) in zip(pos, pos[1:] + pos[:1]):
        assert abs(i0 - i1) + abs(j0 - j1) == 1


def test_scan_ring_rejects_close_outlets():
    class Info:
        def __init__(self, cut, kind="T2"):
            self.is_cut, self.proper, self.cut_type = cut, True, kind
    e = Extents(0, 0, 0, 0)
    pos = ring_positions(e)
    far = {pos[0], pos[4]}
    near = {pos[0], pos[2]}
    assert scan_ring(e, lambda i, j: Info((i, j) in far)).ok
    res = scan_ring(e, lambda i, j: Info((i, j) in near))
    assert not res.ok and res.dist == 1


def test_sector_pattern_mixed_example_verifies():
    p = sector_pattern(0.5, 0.5, (1.0, -0.5), (0.5, -1.0))
    assert p is not None and p.extents.mn == (2, 3, 3, 2)
    # host cell (-0.5, 0.5) x (-0.5, 0.5): its lower right corner is (0.5, -0.5)
    assert p.rect == (0.5 - 2, 0.5 + 3, -0.5 - 3, -0.5 + 2)
    assert p.delta_tilde >= p.bound and p.delta >= p.bound
    assert all(len(o) in (1, 2) for o in p.outlets) and p.dist >= 2


def random_sector(rng):
    while True:
        t1, t2 = rng.uniform(0, 2 * math.pi, 2)
        gap = abs(math.remainder(t1 - t2, 2 * math.pi))
        if gap > 0.35 and abs(gap - math.pi) > 0.02:
            return (math.cos(t1), math.sin(t1)), (math.cos(t2), math.sin(t2))


def test_sector_patterns_verify_by_ring_scan():
    rng = np.random.default_rng(7)
    cases = set()
    for _ in range(60):
        a, b = rng.uniform(0.02, 0.98, 2)
        d1, d2 = random_sector(rng)
        cases.add(lemma_extents(d1, d2, 1.0, 1.0)[0][1].split("-")[0])
        p = sector_pattern(a, b, d1, d2)
        assert p is not None
        assert p.delta_tilde >= p.bound and p.dist >= 2
    assert cases == {"mixed", "same", "opposite"}


def test_nested_rebuild_is_contained_and_keeps_the_bound():
    rng = np.random.default_rng(3)
    for _ in range(40):
        a, b = rng.uniform(0.02, 0.98, 2)
        d1, d2 = random_sector(rng)
        mesh, domain, ci, v = sector_setup(a, b, d1, d2)
        p = build_singular_pattern(mesh, domain, mesh.locate(*v.point), v, ci)
        q, _ = refine_singular_pattern(mesh, domain, p, v, merge_remnants=False)
        r, s = p.rect, q.rect
        assert r[0] <= s[0] and s[1] <= r[1] and r[2] <= s[2] and s[3] <= r[3]
        assert q.level == p.level + 1 and q.delta_tilde >= q.bound


def test_circle_chain_matches_sampled_cut_cells():
    d = interface(circle_curve((0.05, -0.02), 0.63))
    m = uniform_mesh(d.box, 8)
    chains = build_chains(m, d)
    assert len(chains) == 1 and chains[0].closed
    cut = [c for c in m.leaves if sampled_cut(d, m.bounds(c))]
    assert sorted(chains[0].cells) == sorted(cut)


def test_two_circles_two_chains():
    c1, c2 = circle_curve((-0.5, 0.0), 0.3), circle_curve((0.5, 0.1), 0.3)
    d = DomainConfig((-1, 1, -1, 1), [CurveSpec(c1, 1, 2), CurveSpec(c2, 1, 2)], {1: 1.0, 2: 1.0},
                     background=2)
    assert len(build_chains(uniform_mesh(d.box, 16), d)) == 2


def test_admissibility_rules():
    d = interface(circle_curve((0.05, -0.02), 0.63))
    m = uniform_mesh(d.box, 16)
    chain, = build_chains(m, d)
    assert check_admissible(chain, m, d) == []
    K = chain.cells[5]
    m.refine([K])
    m.refine([c for c in m.leaves if c[0] == K[0] + 1 and m.bounds(c)[0] == m.bounds(K)[0]
              and m.bounds(c)[2] == m.bounds(K)[2]])
    chain, = build_chains(m, d)
    assert any(rule == 1 for rule, _ in check_admissible(chain, m, d))


def test_subchains_split_at_level_steps():
    d = interface(circle_curve((0.05, -0.02), 0.63))
    m = uniform_mesh(d.box, 16)
    chain, = build_chains(m, d)
    _, rows = find_admissible_subchains(chain, m, d)
    assert rows.tolist() == [[1, len(chain)]]
    m.refine([chain.cells[0]])
    chain, = build_chains(m, d)
    chain, rows = find_admissible_subchains(chain, m, d)
    assert len(rows) >= 2
    lv = chain.levels()
    assert all(abs(a - b) <= 2 for a, b in zip(lv, lv[1:]))
    assert rows[0][0] == 1 and rows[-1][1] == len(chain)


def test_near_straight_cells_stay_single():
    line = polygon_curve([(0.635, -1), (3, -1), (3, 2), (0.635, 2)])
    d = DomainConfig((0, 1, 0, 1), [CurveSpec(line, 1, 2)], {1: 1.0, 2: 1.0}, background=2)
    m = uniform_mesh(d.box, 4)
    cut = [c for c in m.leaves if d and m.bounds(c)[0] == 0.5]
    macros, failed = merge_smooth_subchain(m, d, cut, 0.2)
    assert not failed and all(len(mc.leaves) == 1 for mc in macros)


def test_thin_cell_merges_across_its_thin_side():
    line = polygon_curve([(0.26, -1), (3, -1), (3, 2), (0.26, 2)])
    d = DomainConfig((0, 1, 0, 1), [CurveSpec(line, 1, 2)], {1: 1.0, 2: 1.0}, background=2)
    m = uniform_mesh(d.box, 8)
    cut = [c for c in m.leaves if m.bounds(c)[0] == 0.25]
    macros, failed = merge_smooth_subchain(m, d, cut, 0.2)
    assert not failed and len(macros) == len(cut)
    for mc in macros:
        x0, x1, y0, y1 = mc.rect
        assert (x0, x1) == (0.125, 0.375) and y1 - y0 == 0.125
        # oracle: side fractions of the 2x1 block against the line x = 0.26
        assert mc.info.delta == pytest.approx(min(0.135, 0.115) / 0.25)


@pytest.mark.parametrize("curve,n_patterns", [
    (circle_curve((0.0, 0.0), 0.7), 0),
    (lens_curve(), 2),
    (five_star_curve(), 5),
])
def test_induced_meshes_satisfy_the_contract(curve, n_patterns):
    d = interface(curve, box=(-1.5, 1.5, -1.5, 1.5))
    ind = induce(uniform_mesh(d.box, 16), d)
    assert len(ind.patterns) == n_patterns
    assert ind.violations() == []
    d_s = min((min(p.delta, p.delta_tilde) for p in ind.patterns), default=1.0)
    assert ind.delta0 == min(0.2, d_s)
    svg = ind.to_svg()
    assert svg.count("<polyline") == 1 and svg.count("<rect") == len(ind)


def test_leaf_macro_map_is_a_function_and_dump():
    d = interface(lens_curve(), box=(-1.5, 1.5, -1.5, 1.5))
    m = QuadtreeMesh(d.box, 4, 4)
    ind = induce(m, d)
    seen = {}
    for k, mc in enumerate(ind.macros):
        for q in mc.leaves:
            assert q not in seen
            seen[q] = k
    lines = ind.dump_text().splitlines()
    assert len(lines) == len(m.leaves)
    assert {ln.split()[2] for ln in lines} <= {"regular", "large", "singular", "outside"}


def test_boundary_curve_leaves_outside_cells_unmapped():
    c = circle_curve((0.0, 0.0), 0.8)
    d = DomainConfig((-1, 1, -1, 1), [CurveSpec(c, 1, 0)], {1: 1.0}, background=0)
    ind = induce(uniform_mesh(d.box, 8), d)
    assert ind.violations() == []
    assert (2, 0, 0) not in ind.leaf_macro or ind.mesh.bounds((2, 0, 0))


def test_fuzz_small_batch():
    rep = fuzz_merging(seed=11, trials=8)
    assert rep.ok, rep.failures
