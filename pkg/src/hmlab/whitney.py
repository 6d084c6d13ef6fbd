"""Whitney decomposition and the region calculus.

The decomposition follows the classical recursion against the distance
function, then subdivides every accepted cube once more into cubes of side
1/8 as large, which normalizes the constants to

    4 diam(I) <= dist(4I, boundary) <= dist(I, boundary) <= 40 diam(I)

exactly (checked per cube, using exact box-to-boundary distances where the
oracle provides them).  All downstream regions -- the per-cube Whitney
families W_Q and their chain-augmented versions, their dilated unions U_Q,
Carleson boxes, discrete and geometric sawtooths, approximating domains --
are unions of dilated Whitney boxes represented exactly as BoxUnion objects.

Coordinates are dyadic throughout, so set operations never hit float ties.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.spatial import cKDTree

from .domains import BoundarySample, DomainOracle
from .dyadic import DyadicTree
from .geometry import Box, BoxUnion, boxes_point_distance

WHITNEY_INNER = 4.0    # 4 diam(I) <= dist(4I, boundary)
WHITNEY_OUTER = 40.0   # dist(I, boundary) <= 40 diam(I)
SUBDIVIDE = 8          # side ratio between accepted cubes and emitted cubes
ACCEPT_FACTOR = 0.75   # accept when dist >= ACCEPT_FACTOR * diam; any value in
                       # [11/16, 1] keeps the emitted cubes inside the 4/40 band


@dataclass
class RegionParams:
    """Tunable constants of the W_Q construction.

    c0 defaults to 1000 sqrt(n); desk fixtures usually pass something far
    smaller so that Carleson boxes stay inside the domain at their scale.
    k_star and K0 are measured outputs of the augmentation, not inputs.
    """

    c0: float | None = None
    m0: int = 4
    lam: float = 1.0 / 64.0
    tau: float = 7.0 / 8.0
    c0_escalations: int = 6

    def __post_init__(self):
        if not (0.5 < self.tau < 1.0):
            raise ValueError("tau must lie in (1/2, 1)")
        if not (0 < self.lam and self.lam * (1 + self.lam) < (1 - self.tau) / 4):
            raise ValueError("lam too large: need lam(1+lam) < (1-tau)/4")

    def default_c0(self, n: int) -> float:
        return self.c0 if self.c0 is not None else 1000.0 * math.sqrt(n)


class WhitneyDecomposition:
    """Final (post-subdivision) Whitney cubes as flat arrays."""

    def __init__(self, k: np.ndarray, idx: np.ndarray, dim: int,
                 collar_delta_max: float, ell_min: float, checks: dict):
        self.k = np.asarray(k, dtype=np.int64)
        self.idx = np.asarray(idx, dtype=np.int64)
        self.dim = dim
        self.collar_delta_max = collar_delta_max
        self.ell_min = ell_min
        self.checks = checks
        self.side = 2.0 ** (-self.k.astype(float))
        self.lo = self.idx * self.side[:, None]
        self.hi = (self.idx + 1) * self.side[:, None]
        self.center = 0.5 * (self.lo + self.hi)
        self.diam = self.side * math.sqrt(dim)
        self._levels = np.unique(self.k)
        self._level_maps: dict[int, dict[tuple, int]] = {}
        for lev in self._levels:
            rows = np.where(self.k == lev)[0]
            self._level_maps[int(lev)] = {tuple(self.idx[r]): int(r) for r in rows}
        self._trees: dict[int, tuple[cKDTree, np.ndarray]] = {}

    @property
    def n_cubes(self) -> int:
        return self.k.shape[0]

    def level_tree(self, lev: int) -> tuple[cKDTree, np.ndarray]:
        if lev not in self._trees:
            rows = np.where(self.k == lev)[0]
            self._trees[lev] = (cKDTree(self.center[rows]), rows)
        return self._trees[lev]

    def locate(self, x: np.ndarray) -> int:
        """Row of the cube containing x (half-open convention), or -1."""
        x = np.asarray(x, dtype=float)
        for lev in self._levels:
            side = 2.0 ** (-float(lev))
            key = tuple(np.floor(x / side).astype(np.int64))
            row = self._level_maps[int(lev)].get(key)
            if row is not None:
                return row
        return -1

    def locate_many(self, xs: np.ndarray) -> np.ndarray:
        xs = np.atleast_2d(xs)
        out = np.full(xs.shape[0], -1, dtype=np.int64)
        for lev in self._levels:
            side = 2.0 ** (-float(lev))
            keys = np.floor(xs / side).astype(np.int64)
            lm = self._level_maps[int(lev)]
            for i in np.where(out < 0)[0]:
                row = lm.get(tuple(keys[i]))
                if row is not None:
                    out[i] = row
        return out

    def touches(self, r1: int, r2: int) -> bool:
        return bool(np.all(self.lo[r1] <= self.hi[r2]) and
                    np.all(self.lo[r2] <= self.hi[r1]))

    def neighbors(self, row: int) -> list[int]:
        """Rows of cubes touching the given cube (closures intersect)."""
        out = []
        for lev in self._levels:
            tree, rows = self.level_tree(int(lev))
            r = 0.5 * (self.diam[row] + math.sqrt(self.dim) * 2.0 ** (-float(lev)))
            cand = tree.query_ball_point(self.center[row], r * (1 + 1e-12))
            for c in cand:
                rr = int(rows[c])
                if rr != row and self.touches(row, rr):
                    out.append(rr)
        return out

    def boxes(self, rows, dilate: float = 1.0) -> BoxUnion:
        rows = np.asarray(rows, dtype=np.int64)
        c = self.center[rows]
        h = 0.5 * dilate * self.side[rows][:, None]
        return BoxUnion(c - h, c + h)


def whitney_decompose(oracle: DomainOracle, box: Box | None = None,
                      ell_min: float = 2.0 ** -6) -> WhitneyDecomposition:
    """Recursive dyadic subdivision against the distance oracle.

    Cubes are accepted when dist(cube, boundary) >= diam(cube) (so the
    accepted maximal cubes satisfy the classical two-sided bounds), then each
    accepted cube is subdivided into side/8 children, which are the emitted
    Whitney cubes.  Cells finer than ell_min that still cross the boundary
    form the reported collar.
    """
    if ell_min <= 2.0 ** -48:
        raise ValueError("ell_min below dyadic float resolution")
    if box is None:
        box = oracle.bbox
    dim = oracle.dim
    k_stop = -int(math.floor(math.log2(ell_min * SUBDIVIDE)))  # stein stop level
    maxside = float(np.max(box.hi - box.lo))
    k_root = int(math.floor(-math.log2(maxside)))
    side_root = 2.0 ** (-k_root)

    lo_idx = np.floor(box.lo / side_root).astype(np.int64)
    hi_idx = np.floor((box.hi - 1e-12 * side_root) / side_root).astype(np.int64)
    queue = [(k_root, np.array(c, dtype=np.int64))
             for c in product(*[range(lo_idx[a], hi_idx[a] + 1) for a in range(dim)])]

    accepted: list[tuple[int, np.ndarray]] = []
    collar_delta = 0.0
    n_collar = 0
    while queue:
        k, idx = queue.pop()
        side = 2.0 ** (-k)
        lo = idx * side
        hi = (idx + 1) * side
        diam = side * math.sqrt(dim)
        d_lo, d_up = oracle.dist_box_to_boundary(lo, hi)
        center = 0.5 * (lo + hi)
        if d_lo > 0 and not bool(oracle.inside(center[None])[0]):
            continue  # entirely outside the domain
        if d_lo >= ACCEPT_FACTOR * diam and bool(oracle.inside(center[None])[0]):
            accepted.append((k, idx))
            continue
        if k >= k_stop:
            n_collar += 1
            collar_delta = max(collar_delta, d_up + diam)
            continue
        for off in product((0, 1), repeat=dim):
            queue.append((k + 1, 2 * idx + np.array(off, dtype=np.int64)))

    if not accepted:
        raise ValueError("no Whitney cubes: domain thinner than ell_min resolution")

    ks, idxs = [], []
    offs = np.array(list(product(range(SUBDIVIDE), repeat=dim)), dtype=np.int64)
    for k, idx in accepted:
        base = idx * SUBDIVIDE
        ks.append(np.full(offs.shape[0], k + 3, dtype=np.int64))
        idxs.append(base + offs)
    k_arr = np.concatenate(ks)
    idx_arr = np.vstack(idxs)

    checks = _verify_whitney_bounds(oracle, k_arr, idx_arr, dim)
    return WhitneyDecomposition(k_arr, idx_arr, dim, collar_delta,
                                ell_min, checks | {"collar_cells": n_collar})


def _verify_whitney_bounds(oracle, k_arr, idx_arr, dim) -> dict:
    """Check the 4/40 normalization for every emitted cube."""
    side = 2.0 ** (-k_arr.astype(float))
    lo = idx_arr * side[:, None]
    hi = (idx_arr + 1) * side[:, None]
    diam = side * math.sqrt(dim)
    c = 0.5 * (lo + hi)
    h4 = (2.0 * side)[:, None]
    d4_lo, _ = oracle.dist_box_to_boundary_many(c - h4, c + h4)
    _, d_up = oracle.dist_box_to_boundary_many(lo, hi)
    inner_ok = d4_lo >= WHITNEY_INNER * diam
    outer_ok = d_up <= WHITNEY_OUTER * diam
    bad = ~(inner_ok & outer_ok)
    violations = int(bad.sum()) if oracle.exact_box_dist else 0
    inconclusive = 0 if oracle.exact_box_dist else int(bad.sum())
    return {"violations": violations, "inconclusive": inconclusive,
            "min_dist4_over_diam": float(np.min(d4_lo / diam)),
            "max_dist_over_diam": float(np.max(d_up / diam))}


def usable_tree_range(decomp: WhitneyDecomposition) -> tuple[int, int]:
    """Dyadic-tree generations compatible with the decomposition's scales.

    The corkscrew band k(Q)-1 <= k_I <= k(Q) needs cubes at least as coarse
    as the tree generation, so k_min starts at the coarsest emitted level;
    the window cap k_I <= k(Q)+1 bounds k_max by the finest level minus one.
    """
    levels = np.unique(decomp.k)
    return int(levels.min()), int(levels.max()) - 1


# ---------------------------------------------------------------------------
# W_Q assignment
# ---------------------------------------------------------------------------

class AssignmentError(RuntimeError):
    pass


@dataclass
class RegionAssignment:
    decomp: WhitneyDecomposition
    tree: DyadicTree
    params: RegionParams
    oracle: DomainOracle
    wq: dict[int, np.ndarray] = field(default_factory=dict)
    wq_star: dict[int, np.ndarray] = field(default_factory=dict)
    xq_row: dict[int, int] = field(default_factory=dict)
    c0_used: float = 0.0
    k_star: int = 0
    K0: float = 0.0
    augmented_set: set = field(default_factory=set)

    def x_q(self, q: int) -> np.ndarray:
        return self.decomp.center[self.xq_row[q]]

    def family_rows(self, q: int) -> np.ndarray:
        self.ensure_augmented([q])
        return self.wq_star[q]

    def ensure_augmented(self, cubes) -> None:
        todo = [q for q in cubes if q not in self.augmented_set]
        if todo:
            augment_wq_star(self, cubes=todo)


def _dist_cube_to_atoms_within(decomp, rows, atom_pts, atom_tree, thresh):
    """Exact test dist(box, atom set) <= thresh per candidate row.

    The nearest-atom distance from the box center is an upper bound for the
    box distance and certifies acceptance; rejection is certified when it
    exceeds thresh by the half-diagonal.  Only the ambiguous band needs the
    exact per-box minimum.
    """
    if len(rows) == 0:
        return np.zeros(0, dtype=bool), np.zeros(0)
    centers = decomp.center[rows]
    halfd = 0.5 * decomp.diam[rows]
    dnn, _ = atom_tree.query(centers)
    dnn = np.atleast_1d(dnn)
    ok = dnn <= thresh
    dist = dnn.copy()
    band = ~ok & (dnn - halfd <= thresh)
    for j in np.where(band)[0]:
        r = rows[j]
        cand = atom_tree.query_ball_point(centers[j], dnn[j] + decomp.diam[r])
        pts = atom_pts[cand]
        d = np.maximum(np.maximum(decomp.lo[r] - pts, pts - decomp.hi[r]), 0.0)
        dmin = float(np.linalg.norm(d, axis=1).min()) if len(cand) else math.inf
        dist[j] = dmin
        ok[j] = dmin <= thresh
    return ok, dist


def assign_wq(decomp: WhitneyDecomposition, tree: DyadicTree,
              params: RegionParams, oracle: DomainOracle) -> RegionAssignment:
    """Per-cube Whitney family by the scale-window/distance rule.

    W_Q collects the cubes with k(Q)-m0 <= k_I <= k(Q)+1 within distance
    c0 2^{-k(Q)} of Q; c0 is doubled (a bounded number of times) whenever
    some W_Q would come out empty.  The corkscrew point X_Q is the center of
    a W_Q cube with k(Q)-1 <= k_I <= k(Q) when one exists.
    """
    n = tree.sample.n
    c0 = params.default_c0(n)
    pts = tree.sample.points
    levels = set(int(v) for v in np.unique(decomp.k))
    for k in range(tree.k_min, tree.k_max + 1):
        if not ({k - 1, k} & levels):
            lo, hi = usable_tree_range(decomp)
            raise AssignmentError(
                f"tree generation {k} has no Whitney cubes in its corkscrew "
                f"band; usable tree range for this decomposition is [{lo}, {hi}]")
    last_offender = None
    for attempt in range(params.c0_escalations + 1):
        asg = RegionAssignment(decomp, tree, params, oracle, c0_used=c0)
        ok = True
        for c in tree.cubes:
            q = c.id
            t = c0 * c.length
            atoms = tree.members(q)
            atom_pts = pts[atoms]
            atom_tree = cKDTree(atom_pts)
            rows_all = []
            dists_all = []
            for lev in range(c.k - params.m0, c.k + 2):
                if lev not in decomp._level_maps:
                    continue
                ltree, rows = decomp.level_tree(lev)
                halfd = 0.5 * math.sqrt(decomp.dim) * 2.0 ** (-lev)
                cand = ltree.query_ball_point(tree.center(q),
                                              t + c.outer_radius + halfd + 1e-12)
                cand_rows = rows[np.asarray(cand, dtype=int)] if len(cand) else \
                    np.zeros(0, dtype=np.int64)
                sel, dist = _dist_cube_to_atoms_within(
                    decomp, cand_rows, atom_pts, atom_tree, t)
                rows_all.append(cand_rows[sel])
                dists_all.append(dist[sel])
            wq_rows = (np.concatenate(rows_all) if rows_all
                       else np.zeros(0, dtype=np.int64))
            if wq_rows.size == 0:
                ok = False
                last_offender = q
                break
            order = np.argsort(wq_rows)
            wq_rows = wq_rows[order]
            wq_dist = np.concatenate(dists_all)[order]
            asg.wq[q] = wq_rows
            row, band_hit = _pick_corkscrew(decomp, wq_rows, wq_dist, c.k)
            asg.xq_row[q] = row
            if not band_hit and attempt < params.c0_escalations:
                # the corkscrew band k(Q)-1..k(Q) must be reachable, else the
                # child-corkscrew containment in U_Q can fail
                ok = False
                last_offender = q
                break
        if ok:
            asg.wq_star = {q: r.copy() for q, r in asg.wq.items()}
            return asg
        c0 *= 2.0
    raise AssignmentError(
        f"W_Q empty (or corkscrew band unreachable) for cube {last_offender} "
        f"even after escalating c0 to {c0}; increase c0 or deepen the tree "
        f"(k range vs Whitney scales)")


def _pick_corkscrew(decomp, rows, dists, kq) -> tuple[int, bool]:
    """Corkscrew cube: prefer k(Q)-1 <= k_I <= k(Q); otherwise the finest
    available coarser cube (coarser stays inside ancestors' scale windows)."""
    band = (decomp.k[rows] >= kq - 1) & (decomp.k[rows] <= kq)
    pool, pd = rows[band], dists[band]
    band_hit = pool.size > 0
    if not band_hit:
        coarse = decomp.k[rows] <= kq
        if np.any(coarse):
            pool, pd = rows[coarse], dists[coarse]
            kk = decomp.k[pool]
            best_k = kk.max()
            pool, pd = pool[kk == best_k], pd[kk == best_k]
        else:
            pool, pd = rows, dists
    return int(pool[np.argmin(pd)]), band_hit


# ---------------------------------------------------------------------------
# Harnack chains on the Whitney adjacency graph
# ---------------------------------------------------------------------------

def whitney_chain(decomp: WhitneyDecomposition, oracle: DomainOracle,
                  row_a: int, row_b: int, max_expand: int = 20000) -> list[int]:
    """Chain of pairwise-touching Whitney cubes from row_a to row_b.

    Tries the straight segment between the centers first (works in convex
    pieces); falls back to A* over the touching-cubes graph.
    """
    if row_a == row_b:
        return [row_a]
    chain = _segment_chain(decomp, row_a, row_b)
    if chain is not None:
        return chain
    return _astar_chain(decomp, row_a, row_b, max_expand)


def _segment_chain(decomp, row_a, row_b) -> list[int] | None:
    a, b = decomp.center[row_a], decomp.center[row_b]
    step = 0.25 * min(decomp.side[row_a], decomp.side[row_b])
    n = max(2, int(np.ceil(np.linalg.norm(b - a) / step)) + 1)
    ts = np.linspace(0.0, 1.0, n)
    pts = a[None] + ts[:, None] * (b - a)[None]
    rows = decomp.locate_many(pts)
    if rows[0] != row_a or rows[-1] != row_b or np.any(rows < 0):
        return None
    chain = [int(rows[0])]
    for i in range(1, len(rows)):
        r = int(rows[i])
        if r == chain[-1]:
            continue
        if decomp.touches(chain[-1], r):
            chain.append(r)
            continue
        # refine the gap between consecutive samples
        sub = _refine_gap(decomp, pts[i - 1], pts[i], chain[-1], r)
        if sub is None:
            return None
        chain.extend(sub)
    return chain


def _refine_gap(decomp, pa, pb, ra, rb, depth=0) -> list[int] | None:
    if depth > 24:
        return None
    mid = 0.5 * (pa + pb)
    rm = decomp.locate(mid)
    if rm < 0:
        return None
    out = []
    if rm != ra:
        if decomp.touches(ra, rm):
            out.append(int(rm))
        else:
            sub = _refine_gap(decomp, pa, mid, ra, rm, depth + 1)
            if sub is None:
                return None
            out.extend(sub)
    prev = out[-1] if out else ra
    if rm != rb and prev != rb:
        if decomp.touches(prev, rb):
            out.append(int(rb))
        else:
            sub = _refine_gap(decomp, mid, pb, prev, rb, depth + 1)
            if sub is None:
                return None
            out.extend(sub)
    elif prev != rb:
        out.append(int(rb)) if not out or out[-1] != rb else None
    if not out or out[-1] != rb:
        out.append(int(rb))
    return out


def _astar_chain(decomp, row_a, row_b, max_expand) -> list[int]:
    target = decomp.center[row_b]
    heap = [(float(np.linalg.norm(decomp.center[row_a] - target)), 0.0, row_a)]
    came: dict[int, int] = {row_a: -1}
    gbest = {row_a: 0.0}
    expanded = 0
    while heap:
        f, g, r = heapq.heappop(heap)
        if r == row_b:
            chain = [r]
            while came[chain[-1]] != -1:
                chain.append(came[chain[-1]])
            return chain[::-1]
        if g > gbest.get(r, math.inf):
            continue
        expanded += 1
        if expanded > max_expand:
            break
        for nb in decomp.neighbors(r):
            g2 = g + float(np.linalg.norm(decomp.center[nb] - decomp.center[r]))
            if g2 < gbest.get(nb, math.inf):
                gbest[nb] = g2
                came[nb] = r
                heapq.heappush(heap, (g2 + float(np.linalg.norm(
                    decomp.center[nb] - target)), g2, nb))
    raise AssignmentError(f"no Whitney chain from row {row_a} to {row_b}"
                          " (region disconnected at this resolution)")


def _pack_codes(idx: np.ndarray, lo_ref: np.ndarray, span: int) -> np.ndarray:
    code = np.zeros(idx.shape[0], dtype=np.int64)
    for a in range(idx.shape[1]):
        code = code * span + (idx[:, a] - lo_ref[a] + 1)
    return code


def _touching_components(decomp, rows: np.ndarray) -> list[np.ndarray]:
    """Connected components of the touching graph restricted to rows.

    Edges are enumerated level-pair by level-pair on the integer lattice:
    two dyadic cubes at levels k >= m touch exactly when the coarser index o
    satisfies, per axis, base-1 <= o <= base+1 with base = idx >> (k-m), the
    outer values allowed only when idx is at the matching edge of its block.
    """
    m_rows = len(rows)
    parent = np.arange(m_rows)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    levels = sorted(set(int(v) for v in decomp.k[rows]))
    by_level = {lev: np.where(decomp.k[rows] == lev)[0] for lev in levels}
    dim = decomp.dim
    edges: list[tuple[np.ndarray, np.ndarray]] = []
    for k in levels:
        fine_loc = by_level[k]
        fine_idx = decomp.idx[rows[fine_loc]]
        for m_lev in levels:
            if not (k - 2 <= m_lev <= k):
                continue
            coarse_loc = by_level[m_lev]
            coarse_idx = decomp.idx[rows[coarse_loc]]
            shift = k - m_lev
            span = int(max(coarse_idx.max() - coarse_idx.min() + 4, 4)) \
                if coarse_idx.size else 4
            lo_ref = coarse_idx.min(axis=0) if coarse_idx.size else np.zeros(dim)
            codes = _pack_codes(coarse_idx, lo_ref, span)
            order = np.argsort(codes)
            sc = codes[order]
            base = fine_idx >> shift if shift else fine_idx
            lo_edge = (fine_idx % (1 << shift) == 0) if shift else \
                np.ones_like(fine_idx, dtype=bool)
            hi_edge = ((fine_idx + 1) % (1 << shift) == 0) if shift else \
                np.ones_like(fine_idx, dtype=bool)
            for off in product((-1, 0, 1), repeat=dim):
                valid = np.ones(len(fine_loc), dtype=bool)
                probe = base + np.array(off)
                for a, oa in enumerate(off):
                    if oa == -1:
                        valid &= lo_edge[:, a]
                    elif oa == 1:
                        valid &= hi_edge[:, a]
                if not np.any(valid):
                    continue
                pc = _pack_codes(probe[valid], lo_ref, span)
                src = fine_loc[valid]
                pos = np.searchsorted(sc, pc)
                ok = (pos < len(sc))
                ok[ok] &= sc[pos[ok]] == pc[ok]
                for i, j in zip(src[ok], coarse_loc[order[pos[ok]]]):
                    if i != j:
                        ri, rj = find(i), find(j)
                        if ri != rj:
                            parent[ri] = rj
    comp: dict[int, list[int]] = {}
    for i in range(m_rows):
        comp.setdefault(find(i), []).append(int(rows[i]))
    return [np.array(sorted(v), dtype=np.int64) for v in comp.values()]


def augment_wq_star(asg: RegionAssignment, cubes=None,
                    chain_ball_factor: float = 0.5) -> RegionAssignment:
    """Augment W_Q so that every member chains to X_Q inside the union.

    One Harnack chain per touching-component of W_Q connects the component's
    closest member to the corkscrew cube (a deterministic choice; within a
    component the cubes already connect through shared boundary points).
    Every cube met by a chain ball -- centered at waypoint cube centers with
    radius delta(center)/2 -- joins the family.  Measured K0 and k* are
    recorded.  With `cubes` given, augments only those (lazily, on demand).
    """
    decomp, tree, oracle = asg.decomp, asg.tree, asg.oracle
    pts = tree.sample.points
    k_star, K0 = asg.k_star, asg.K0
    todo = [tree.cubes[q] for q in cubes] if cubes is not None else tree.cubes
    for c in todo:
        q = c.id
        if q in asg.augmented_set:
            continue
        rows = asg.wq[q]
        xrow = asg.xq_row[q]
        extra: set[int] = set()
        waypoints: set[int] = set()
        comps = _touching_components(decomp, rows)
        xq = decomp.center[xrow]
        for comp in comps:
            if xrow in comp:
                continue
            d = np.linalg.norm(decomp.center[comp] - xq, axis=1)
            rep = int(comp[np.argmin(d)])
            chain = whitney_chain(decomp, oracle, rep, xrow)
            waypoints.update(chain)
        for wp in waypoints:
            extra.add(wp)
            center = decomp.center[wp]
            rad = chain_ball_factor * float(oracle.delta(center[None])[0])
            for lev in decomp._levels:
                ltree, lrows = decomp.level_tree(int(lev))
                halfd = 0.5 * math.sqrt(decomp.dim) * 2.0 ** (-float(lev))
                cand = ltree.query_ball_point(center, rad + halfd + 1e-12)
                if not cand:
                    continue
                rr = lrows[np.asarray(cand, dtype=int)]
                d = boxes_point_distance(decomp.lo[rr], decomp.hi[rr], center)
                extra.update(int(x) for x in rr[d <= rad])
        all_rows = np.array(sorted(set(int(r) for r in rows) | extra),
                            dtype=np.int64)
        asg.wq_star[q] = all_rows
        asg.augmented_set.add(q)
        atoms = pts[tree.members(q)]
        at = cKDTree(atoms)
        k_star = max(k_star, int(np.abs(decomp.k[all_rows] - c.k).max()))
        dnn, _ = at.query(decomp.center[all_rows])
        K0 = max(K0, float(np.max(np.atleast_1d(dnn)) / c.length))
    asg.k_star, asg.K0 = k_star, K0
    return asg


# ---------------------------------------------------------------------------
# regions
# ---------------------------------------------------------------------------

def region_union(asg: RegionAssignment, q: int, fat: bool = False) -> BoxUnion:
    """U_Q (dilate 1+lam) or its fat version (dilate 4)."""
    dil = 4.0 if fat else 1.0 + asg.params.lam
    return asg.decomp.boxes(asg.family_rows(q), dilate=dil)


def _rows_for_cubes(asg: RegionAssignment, cubes) -> np.ndarray:
    rows = set()
    for q in cubes:
        rows.update(int(r) for r in asg.family_rows(q))
    return np.array(sorted(rows), dtype=np.int64)


def carleson_box(asg: RegionAssignment, q: int, fat: bool = False) -> BoxUnion:
    dil = 4.0 if fat else 1.0 + asg.params.lam
    return asg.decomp.boxes(_rows_for_cubes(asg, asg.tree.descendants(q)), dil)


def carleson_scale(r: float) -> int:
    """The unique k with 2^{-k-1} < 200 r <= 2^{-k}."""
    if r <= 0:
        raise ValueError("radius must be positive")
    k = int(math.floor(-math.log2(200.0 * r)))
    while 200.0 * r > 2.0 ** (-k):
        k -= 1
    while 200.0 * r <= 2.0 ** (-k - 1):
        k += 1
    return k


def carleson_box_delta(asg: RegionAssignment, x, r: float) -> tuple[BoxUnion, dict]:
    """Carleson box over a surface ball: union of T_Q over the generation-
    k(Delta) cubes meeting the doubled ball.  k(Delta) is clipped into the
    tree's generation range when needed (reported)."""
    tree = asg.tree
    k = carleson_scale(r)
    clipped = False
    if k < tree.k_min:
        k, clipped = tree.k_min, True
    if k > tree.k_max:
        k, clipped = tree.k_max, True
    x = np.asarray(x, dtype=float)
    sel = []
    for q in tree.generation_ids(k):
        atoms = tree.sample.points[tree.members(q)]
        if np.any(np.linalg.norm(atoms - x, axis=1) <= 2.0 * r):
            sel.append(q)
    cubes = set()
    for q in sel:
        cubes.update(tree.descendants(q))
    region = asg.decomp.boxes(_rows_for_cubes(asg, cubes), 1.0 + asg.params.lam)
    return region, {"k_delta": k, "clipped": clipped, "top_cubes": sel}


def discrete_sawtooth(tree: DyadicTree, family, q0: int | None = None) -> list[int]:
    """D_F or D_{F,Q0}: exact set difference on the tree."""
    fam = list(family)
    for i, a in enumerate(fam):
        for b in fam[i + 1:]:
            if tree.contains_cube(a, b) or tree.contains_cube(b, a):
                raise ValueError(f"sawtooth family not disjoint: {a}, {b}")
    removed = set()
    for qj in fam:
        removed.update(tree.descendants(qj))
    base = (tree.descendants(q0) if q0 is not None
            else [c.id for c in tree.cubes])
    return [q for q in base if q not in removed]


def sawtooth_region(asg: RegionAssignment, family, q0: int | None = None,
                    fat: bool = False) -> BoxUnion:
    cubes = discrete_sawtooth(asg.tree, family, q0)
    dil = 4.0 if fat else 1.0 + asg.params.lam
    return asg.decomp.boxes(_rows_for_cubes(asg, cubes), dil)


def augment_family_rho(tree: DyadicTree, family, rho: float) -> list[int]:
    """Maximal cubes of family union {Q : length(Q) <= rho}."""
    fam = list(family)
    out = [qj for qj in fam if tree.length(qj) > rho]
    under_big_f = set()
    for qj in out:
        under_big_f.update(tree.descendants(qj))
    k_rho = None
    for k in range(tree.k_min, tree.k_max + 1):
        if 2.0 ** (-k) <= rho:
            k_rho = k
            break
    if k_rho is None:
        return sorted(set(fam))
    for q in tree.generation_ids(k_rho):
        if q not in under_big_f:
            out.append(q)
    return sorted(set(out))


def approximating_domain(asg: RegionAssignment, n_scale: int,
                         fat: bool = False) -> BoxUnion:
    """Union of the U_Q over cubes coarser than 2^{-n_scale+1}."""
    cubes = [c.id for c in asg.tree.cubes if c.k <= n_scale - 1]
    if not cubes:
        raise ValueError("approximating scale below the coarsest generation")
    dil = 4.0 if fat else 1.0 + asg.params.lam
    return asg.decomp.boxes(_rows_for_cubes(asg, cubes), dil)


# ---------------------------------------------------------------------------
# sawtooth boundary sample
# ---------------------------------------------------------------------------

def sawtooth_boundary_sample(region: BoxUnion, oracle: DomainOracle,
                             asg: RegionAssignment, family, q0: int,
                             target_count: int = 2000) -> BoundarySample:
    """Boundary sample of a sawtooth region: exact face fragments plus the
    atoms of Q0 outside the family (the part shared with the true boundary).

    meta["face_mask"] marks face points; meta["atom_index"] maps the shared
    part back to atoms of the base sample.
    """
    tree = asg.tree
    area = region.boundary_area()
    spacing = math.sqrt(area / max(target_count, 1)) if region.dim == 3 else \
        area / max(target_count, 1)
    fpts, fw, _ = region.sample_boundary(spacing)
    removed = set()
    for qj in family:
        removed.update(tree.descendants(qj))
    atom_ids = []
    for leaf_atoms in [tree.members(q) for q in tree.descendants(q0)
                       if tree.is_leaf(q) and q not in removed]:
        atom_ids.extend(int(a) for a in leaf_atoms)
    atom_ids = np.array(sorted(set(atom_ids)), dtype=np.int64)
    apts = tree.sample.points[atom_ids]
    aw = tree.sample.weights[atom_ids]
    pts = np.vstack([fpts, apts]) if len(atom_ids) else fpts
    w = np.concatenate([fw, aw]) if len(atom_ids) else fw
    meta = {"face_mask": np.concatenate(
        [np.ones(len(fpts), dtype=bool), np.zeros(len(atom_ids), dtype=bool)]),
        "atom_index": atom_ids, "face_area": float(area)}
    return BoundarySample(points=pts, weights=w, n=oracle.boundary_dim, meta=meta)


# ---------------------------------------------------------------------------
# markers: interface faces, simultaneous corkscrews, sawtooth surface balls
# ---------------------------------------------------------------------------

@dataclass
class RectMarker:
    """Axis-aligned n-cube on a face of a dilated Whitney cube."""

    axis: int
    coord: float
    lo_t: np.ndarray
    hi_t: np.ndarray
    source_row: int

    @property
    def side(self) -> float:
        return float(np.min(self.hi_t - self.lo_t))

    def center(self, dim: int) -> np.ndarray:
        c = np.empty(dim)
        t = 0.5 * (self.lo_t + self.hi_t)
        k = 0
        for a in range(dim):
            if a == self.axis:
                c[a] = self.coord
            else:
                c[a] = t[k]
                k += 1
        return c

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        taxes = [a for a in range(x.shape[1]) if a != self.axis]
        on_plane = np.abs(x[:, self.axis] - self.coord) <= 1e-9
        inside = np.all((x[:, taxes] >= self.lo_t - 1e-12) &
                        (x[:, taxes] <= self.hi_t + 1e-12), axis=1)
        return on_plane & inside


@dataclass
class SawtoothMarkers:
    p_markers: dict[int, RectMarker]           # per family cube
    p_radius: dict[int, float]                 # r_j with closure(T_Qj) in B(xj*, rj)
    a_q: dict[int, np.ndarray]                 # simultaneous corkscrew points
    delta_star: dict[int, tuple[np.ndarray, float]]   # sawtooth surface balls
    b_prime: dict[int, tuple[np.ndarray, float]]      # B'_Q with B'_Q cap Omega in T_Q
    y_q: dict[int, tuple[np.ndarray, float]]          # (y_Q, r_hat_Q)


def find_markers(asg: RegionAssignment, family, q0: int,
                 region: BoxUnion | None = None,
                 m_split: float | None = None) -> SawtoothMarkers:
    """Locate the sawtooth boundary markers.

    P_j: an n-cube on a face of a dilated region cube against an excluded
    neighbor near Q_j, with side, distance to Q_j and distance to the true
    boundary all comparable to length(Q_j).  A_Q: center of a W_Q cube.
    Delta*_Q: a sawtooth surface ball near Q by the two-branch construction
    (large family cube present / absent).  B'_Q: a ball around the center of
    Q whose intersection with the domain stays inside the Carleson box.
    """
    tree, decomp = asg.tree, asg.decomp
    if region is None:
        region = sawtooth_region(asg, family, q0)
    cubes = discrete_sawtooth(asg.tree, family, q0)
    region_rows = set(int(r) for q in cubes for r in asg.family_rows(q))
    if m_split is None:
        m_split = max(16.0, 4.0 * asg.K0 ** 2 if asg.K0 else 64.0)

    p_markers, p_radius = {}, {}
    for qj in family:
        p_markers[qj] = _find_interface_marker(asg, region_rows, qj)
        tqj = carleson_box(asg, qj)
        xstar = p_markers[qj].center(decomp.dim)
        corners = np.vstack([tqj.lo, tqj.hi])
        p_radius[qj] = float(np.max(np.linalg.norm(corners - xstar, axis=1)))

    a_q, delta_star, b_prime, y_q = {}, {}, {}, {}
    frag_tree = None
    fpts, _, _ = region.sample_boundary(
        0.25 * float(np.min(decomp.side[list(region_rows)])) if region_rows else 0.1)
    if len(fpts):
        frag_tree = cKDTree(fpts)
    for q in cubes:
        a_q[q] = asg.x_q(q)
        if frag_tree is not None:
            d, j = frag_tree.query(a_q[q])
            y_q[q] = (fpts[j], float(d))
        b_prime[q] = _find_b_prime(asg, q)
        delta_star[q] = _find_delta_star(asg, family, q, p_markers, m_split)

    # r_hat per the simultaneous-corkscrew bookkeeping
    for q in cubes:
        if q not in y_q:
            continue
        y, _ = y_q[q]
        r_hat = max(np.linalg.norm(
            tree.sample.points[tree.members(q)] - y, axis=1).max(), 1e-12)
        for qj in family:
            if tree.contains_cube(q, qj):
                xs = p_markers[qj].center(decomp.dim)
                r_hat = max(r_hat, float(np.linalg.norm(xs - y)) + p_radius[qj])
        y_q[q] = (y, float(r_hat))
    return SawtoothMarkers(p_markers, p_radius, a_q, delta_star, b_prime, y_q)


def _find_interface_marker(asg: RegionAssignment, region_rows: set[int],
                           qj: int) -> RectMarker:
    tree, decomp = asg.tree, asg.decomp
    lam = asg.params.lam
    ell = tree.length(qj)
    atoms = tree.sample.points[tree.members(qj)]
    at = cKDTree(atoms)
    band = (asg.K0 if asg.K0 else asg.c0_used) * ell * 4.0
    cand = []
    for r in sorted(region_rows):
        if not (ell / 32 <= decomp.side[r] <= 32 * ell):
            continue
        d, _ = at.query(decomp.center[r])
        if d - 0.5 * decomp.diam[r] > band:
            continue
        for nb in decomp.neighbors(r):
            if nb in region_rows:
                continue
            face = _shared_face_marker(decomp, r, nb, lam)
            if face is None:
                continue
            dq, _ = at.query(face.center(decomp.dim))
            cand.append((dq + abs(math.log2(decomp.side[r] / ell)) * ell,
                         r, nb, face, dq))
    if not cand:
        raise AssignmentError(
            f"no interface face found near family cube {qj}; "
            f"the (lam, tau) parameters leave no exposed face at this scale")
    cand.sort(key=lambda t: (t[0], t[1], t[2]))
    return cand[0][3]


def _shared_face_marker(decomp, r, nb, lam) -> RectMarker | None:
    """Largest n-cube centered on the face of (1+lam)I lying inside nb."""
    dim = decomp.dim
    for axis in range(dim):
        if decomp.hi[r][axis] == decomp.lo[nb][axis]:
            side_dir, coord_in = 1, decomp.hi[r][axis]
        elif decomp.lo[r][axis] == decomp.hi[nb][axis]:
            side_dir, coord_in = -1, decomp.lo[r][axis]
        else:
            continue
        taxes = [a for a in range(dim) if a != axis]
        lo_t = np.maximum(decomp.lo[r][taxes], decomp.lo[nb][taxes])
        hi_t = np.minimum(decomp.hi[r][taxes], decomp.hi[nb][taxes])
        if np.any(hi_t <= lo_t):
            continue  # only edge/corner contact
        coord = coord_in + side_dir * 0.5 * lam * decomp.side[r]
        # center an n-cube inside the overlap rectangle
        ctr = 0.5 * (lo_t + hi_t)
        half = 0.5 * float(np.min(hi_t - lo_t)) * 0.5
        return RectMarker(axis, float(coord), ctr - half, ctr + half, int(r))
    return None


def _find_b_prime(asg: RegionAssignment, q: int,
                  n_check: int = 256) -> tuple[np.ndarray, float]:
    """Shrink s until B(x_Q, s) cap Omega is inside T_Q (sampled check)."""
    tree, oracle = asg.tree, asg.oracle
    x = tree.center(q)
    tq = carleson_box(asg, q)
    from .rng import substream
    rng = substream(0, "b_prime", int(q))
    s = 0.5 * tree.length(q)
    for _ in range(14):
        pts = x + (rng.random((n_check, oracle.dim)) * 2 - 1) * s
        pts = pts[np.linalg.norm(pts - x, axis=1) <= s]
        pts = pts[oracle.inside(pts)] if len(pts) else pts
        deep = pts[oracle.delta(pts) > asg.decomp.collar_delta_max] if len(pts) else pts
        if len(deep) == 0 or bool(np.all(tq.contains_closure(deep))):
            return x, float(s)
        s *= 0.5
    return x, float(s)


def _find_delta_star(asg, family, q, p_markers, m_split) -> tuple[np.ndarray, float]:
    tree = asg.tree
    ell = tree.length(q)
    big = [qj for qj in family if tree.contains_cube(q, qj)
           and tree.length(qj) >= ell / m_split]
    if big:
        qj = min(big, key=lambda j: (-tree.length(j), j))
        pj = p_markers[qj]
        return pj.center(asg.decomp.dim), 0.5 * pj.side
    x, s = _find_b_prime(asg, q)
    rad = s / (4.0 * math.sqrt(m_split))
    atoms = tree.sample.points
    meet = []
    for qj in family:
        if tree.contains_cube(q, qj):
            d = np.linalg.norm(atoms[tree.members(qj)] - x, axis=1).min()
            if d <= rad:
                meet.append(qj)
    if not meet:
        return x, float(rad)
    qj = min(meet, key=lambda j: (-tree.length(j), j))
    pj = p_markers[qj]
    return pj.center(asg.decomp.dim), float(s / (2.0 * math.sqrt(m_split)))


# ---------------------------------------------------------------------------
# region-as-domain adapter
# ---------------------------------------------------------------------------

class RegionOracle(DomainOracle):
    """Treat a box-union region as a domain for corkscrew/WoS machinery.

    delta uses exact distances to the boundary fragments (with a certified
    cloud lower bound for bulk queries).
    """

    def __init__(self, region: BoxUnion, base: DomainOracle | None = None,
                 cloud_spacing: float | None = None):
        self.region = region
        self.base = base
        self.dim = region.dim
        self.boundary_dim = region.dim - 1
        bb = region.bounding_box()
        self.bbox = bb
        self.diam_boundary = bb.diam
        if cloud_spacing is None:
            sides = region.hi - region.lo
            cloud_spacing = 0.25 * float(sides.min())
        self.cloud_spacing = cloud_spacing
        self.exact_box_dist = False

    def delta(self, x):
        return self.region.dist_to_boundary_exact(x)

    def walk_delta(self, x):
        return self.region.dist_to_boundary_lower(x, self.cloud_spacing)

    def inside(self, x):
        return self.region.contains(np.atleast_2d(x))

    def project_to_boundary(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty_like(x)
        frags = self.region.boundary_fragments()
        for i, p in enumerate(x):
            best, bp = math.inf, p
            for f in frags:
                taxes = [a for a in range(self.dim) if a != f.axis]
                t = np.clip(p[taxes], f.lo_t, f.hi_t)
                cand = np.empty(self.dim)
                cand[taxes] = t
                cand[f.axis] = f.coord
                d = float(np.linalg.norm(cand - p))
                if d < best:
                    best, bp = d, cand
            out[i] = bp
        return out
