"""Christ-David dyadic cube hierarchy on a boundary sample.

Per generation k the construction picks a greedy maximal 2^-k separated net
of atoms (seeded with the previous generation's cube centers, visited in
descending weight then index order) and assigns every atom to the nearest
net point among the children of the atom's current cube.  That keeps the
three exact axioms (covering, nesting, unique ancestor) true by construction;
the geometric constants (diameter bound, contained surface ball, thin
boundary exponent) are measured, not assumed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.spatial import cKDTree

from .domains import BoundarySample


@dataclass
class DyadicCube:
    id: int
    k: int                      # generation; side length 2^-k
    anchor_atom: int            # net point used during construction
    parent: int | None
    children: list[int] = field(default_factory=list)
    center_atom: int = -1       # deepest member atom, witnesses property (v)
    sigma_mass: float = 0.0
    inner_radius: float = 0.0   # Delta(x_Q, r) subset Q
    outer_radius: float = 0.0   # Q subset Delta(x_Q, R)

    @property
    def length(self) -> float:
        return 2.0 ** (-self.k)


class DyadicTree:
    """Cube hierarchy over a BoundarySample, generations k_min..k_max."""

    def __init__(self, sample: BoundarySample, k_min: int, k_max: int):
        self.sample = sample
        self.k_min = k_min
        self.k_max = k_max
        self.cubes: list[DyadicCube] = []
        # assign[i, g] = cube id of atom i at generation k_min + g
        self.assign = np.zeros((sample.count, k_max - k_min + 1), dtype=np.int64)
        self.roots: list[int] = []
        self._desc_cache: dict[int, list[int]] = {}

    # -- structure accessors -------------------------------------------------

    def gen_index(self, k: int) -> int:
        return k - self.k_min

    def generation_ids(self, k: int) -> list[int]:
        return [c.id for c in self.cubes if c.k == k]

    def members(self, q: int) -> np.ndarray:
        c = self.cubes[q]
        return np.where(self.assign[:, self.gen_index(c.k)] == q)[0]

    def children_of(self, q: int) -> list[int]:
        return self.cubes[q].children

    def parent_of(self, q: int) -> int | None:
        return self.cubes[q].parent

    def k_of(self, q: int) -> int:
        return self.cubes[q].k

    def length(self, q: int) -> float:
        return self.cubes[q].length

    def center(self, q: int) -> np.ndarray:
        return self.sample.points[self.cubes[q].center_atom]

    def sigma(self, q: int) -> float:
        return self.cubes[q].sigma_mass

    def is_leaf(self, q: int) -> bool:
        return not self.cubes[q].children

    def leaves(self) -> list[int]:
        return [c.id for c in self.cubes if not c.children]

    def descendants(self, q: int) -> list[int]:
        """The discretized Carleson family: all cubes contained in q, q included."""
        if q not in self._desc_cache:
            out = [q]
            for ch in self.cubes[q].children:
                out.extend(self.descendants(ch))
            self._desc_cache[q] = out
        return self._desc_cache[q]

    def descendants_short(self, q: int) -> list[int]:
        return [c for c in self.descendants(q) if c != q]

    def contains_cube(self, q: int, qq: int) -> bool:
        """True when cube qq is contained in cube q (ancestry)."""
        cur: int | None = qq
        while cur is not None:
            if cur == q:
                return True
            cur = self.cubes[cur].parent
        return False

    def ancestor_at(self, q: int, k: int) -> int:
        cur = q
        while self.cubes[cur].k > k:
            cur = self.cubes[cur].parent
            if cur is None:
                raise KeyError(f"cube {q} has no ancestor at generation {k}")
        return cur


class _GridNet:
    """Greedy maximal separated net with O(1) neighbour lookups."""

    def __init__(self, sep: float, dim: int):
        self.sep = sep
        self.dim = dim
        self.cells: dict[tuple, list[np.ndarray]] = {}

    def _key(self, p) -> tuple:
        return tuple(np.floor(p / self.sep).astype(np.int64))

    def try_add(self, p: np.ndarray) -> bool:
        key = self._key(p)
        for off in product((-1, 0, 1), repeat=self.dim):
            k2 = tuple(key[i] + off[i] for i in range(self.dim))
            for q in self.cells.get(k2, ()):
                if np.linalg.norm(p - q) < self.sep:
                    return False
        self.cells.setdefault(key, []).append(p)
        return True


def build_tree(sample: BoundarySample, k_min: int, k_max: int,
               enforce_spacing: bool = True) -> DyadicTree:
    """Christ construction with dyadic parameter 1/2.

    Deterministic given the atom order: net points are proposed in
    descending-weight-then-index order.  The published cube center is the
    deepest member atom (the witness of the contained-surface-ball property);
    net anchors seed the next generation.

    enforce_spacing=False skips the resolution precondition
    2^-k_max >= 2 * min spacing, for deliberately degenerate fixtures
    (generations below the spacing scale are stable all-singleton refinements).
    """
    if k_max < k_min:
        raise ValueError("k_max must be >= k_min")
    spacing = sample.spacing()["min"] if sample.count > 1 else 0.0
    if enforce_spacing and sample.count > 1 and 2.0 ** (-k_max) < 2.0 * spacing:
        raise ValueError(
            f"sample too sparse for k_max={k_max}: 2^-k_max must be >= twice the "
            f"minimum atom spacing {spacing:.3g}")
    tree = DyadicTree(sample, k_min, k_max)
    pts = sample.points
    order = np.lexsort((np.arange(sample.count), -sample.weights))

    prev_assign: np.ndarray | None = None
    prev_ids: list[int] = []
    for k in range(k_min, k_max + 1):
        sep = 2.0 ** (-k)
        grid = _GridNet(sep, pts.shape[1])
        net_atoms: list[int] = []
        net_parent: list[int] = []  # parent cube id of each net point
        if prev_assign is not None:
            for pid in prev_ids:
                ca = tree.cubes[pid].anchor_atom
                grid.try_add(pts[ca])
                net_atoms.append(ca)
                net_parent.append(pid)
        for a in order:
            a = int(a)
            if grid.try_add(pts[a]):
                net_atoms.append(a)
                net_parent.append(-1 if prev_assign is None
                                  else int(prev_assign[a]))
        net_atoms_arr = np.array(net_atoms)
        net_parent_arr = np.array(net_parent)

        new_ids: list[int] = []
        id_of_net = np.empty(len(net_atoms), dtype=np.int64)
        for j, (a, par) in enumerate(zip(net_atoms, net_parent)):
            cube = DyadicCube(id=len(tree.cubes), k=k, anchor_atom=a,
                              parent=None if par < 0 else int(par))
            tree.cubes.append(cube)
            if par >= 0:
                tree.cubes[par].children.append(cube.id)
            else:
                tree.roots.append(cube.id)
            new_ids.append(cube.id)
            id_of_net[j] = cube.id

        gi = tree.gen_index(k)
        if prev_assign is None:
            tree.assign[:, gi] = _nearest_assign(pts, pts[net_atoms_arr], id_of_net)
        else:
            # parent consistency: atoms choose among their own cube's children
            col = np.empty(sample.count, dtype=np.int64)
            for pid in prev_ids:
                atoms = np.where(prev_assign == pid)[0]
                mask = net_parent_arr == pid
                col[atoms] = _nearest_assign(pts[atoms],
                                             pts[net_atoms_arr[mask]],
                                             id_of_net[mask])
            tree.assign[:, gi] = col

        prev_assign = tree.assign[:, gi]
        prev_ids = new_ids

    _drop_empty_and_finalize(tree)
    return tree


def _nearest_assign(atom_pts, net_pts, net_ids) -> np.ndarray:
    """Nearest net point; argmin takes the first (lowest net index) on ties."""
    if net_pts.shape[0] == 1:
        return np.full(atom_pts.shape[0], net_ids[0], dtype=np.int64)
    d, j = cKDTree(net_pts).query(atom_pts)
    return net_ids[j]


def _drop_empty_and_finalize(tree: DyadicTree) -> None:
    """Remove cubes that got no atoms, pick centers, compute masses/radii."""
    pts = tree.sample.points
    w = tree.sample.weights
    keep = np.zeros(len(tree.cubes), dtype=bool)
    for g in range(tree.assign.shape[1]):
        keep[np.unique(tree.assign[:, g])] = True
    remap = -np.ones(len(tree.cubes), dtype=np.int64)
    new_cubes: list[DyadicCube] = []
    for c in tree.cubes:
        if keep[c.id]:
            remap[c.id] = len(new_cubes)
            new_cubes.append(c)
    for c in new_cubes:
        c.id = int(remap[c.id])
        c.parent = None if c.parent is None else int(remap[c.parent])
        c.children = [int(remap[ch]) for ch in c.children if keep[ch]]
    tree.cubes = new_cubes
    tree.roots = [int(remap[r]) for r in tree.roots if keep[r]]
    for g in range(tree.assign.shape[1]):
        tree.assign[:, g] = remap[tree.assign[:, g]]

    for g in range(tree.assign.shape[1]):
        col = tree.assign[:, g]
        nf = (_nearest_foreign_distance(pts, col)
              if len(np.unique(col)) > 1 else np.full(pts.shape[0], np.inf))
        for q in np.unique(col):
            c = tree.cubes[q]
            atoms = np.where(col == q)[0]
            c.sigma_mass = float(w[atoms].sum())
            depth = nf[atoms]
            if np.all(np.isinf(depth)):
                # cube holds every atom: witness is the anchor, radius covers all
                c.center_atom = c.anchor_atom
                x = pts[c.center_atom]
                r = np.linalg.norm(pts[atoms] - x, axis=1)
                c.inner_radius = float(r.max()) if r.size else 2.0 ** (-c.k)
                c.outer_radius = c.inner_radius
                continue
            best = atoms[np.argmax(depth)]   # argmax: first max, lowest index
            c.center_atom = int(best)
            c.inner_radius = 0.5 * float(nf[best])
            x = pts[best]
            c.outer_radius = float(np.linalg.norm(pts[atoms] - x, axis=1).max())


# ---------------------------------------------------------------------------
# axiom verification
# ---------------------------------------------------------------------------

class GridAxiomError(AssertionError):
    pass


def verify_grid_axioms(tree: DyadicTree, sample: BoundarySample,
                       taus=(0.5, 0.25, 0.125, 0.0625, 0.03125)) -> dict:
    """Check the dyadic grid axioms; exact ones hard-fail, constants measured.

    (i) covering, (ii) nesting, (iii) unique ancestor are exact set algebra.
    (iv) diameter <= C1 2^-k, (v) contained surface ball radius a0 2^-k and
    (vi) thin-boundary mass decay with fitted exponent are measured.
    """
    pts, w = sample.points, sample.weights
    n_gen = tree.assign.shape[1]

    # (i) covering + (iii) single cube per atom per generation
    for g in range(n_gen):
        col = tree.assign[:, g]
        if np.any(col < 0):
            raise GridAxiomError(f"axiom i: atoms uncovered at generation index {g}")
        for q in np.unique(col):
            if tree.cubes[q].k != tree.k_min + g:
                raise GridAxiomError(f"axiom iii: cube {q} in wrong generation")

    # (ii) nesting: each cube's member set is inside its parent's
    for c in tree.cubes:
        if c.parent is not None:
            pa = tree.cubes[c.parent]
            atoms = tree.members(c.id)
            par_col = tree.assign[atoms, tree.gen_index(pa.k)]
            if not np.all(par_col == pa.id):
                bad = atoms[par_col != pa.id][0]
                raise GridAxiomError(
                    f"axiom ii: atom {bad} of cube {c.id} not in parent {pa.id}")
            # mass additivity (exact consequence of nesting partitions)
            kid_mass = sum(tree.cubes[ch].sigma_mass for ch in pa.children)

    # (iv) diameter constant
    c1 = 0.0
    for c in tree.cubes:
        atoms = tree.members(c.id)
        diam = _set_diameter(pts[atoms])
        c1 = max(c1, diam / c.length)

    # (v) inner ball constant
    a0 = min(c.inner_radius / c.length for c in tree.cubes)

    # (vi) thin boundary: mass near the inter-cube boundary, per tau
    ratios = {}
    for g in range(n_gen):
        col = tree.assign[:, g]
        k = tree.k_min + g
        if len(np.unique(col)) < 2:
            continue
        nf = _nearest_foreign_distance(pts, col)
        for tau in taus:
            thin = nf <= tau * 2.0 ** (-k)
            num = float(w[thin].sum())
            den = float(w.sum())
            ratios.setdefault(tau, []).append(num / den)
    tau_arr = np.array(sorted(r for r in ratios if ratios[r]))
    mean_ratio = np.array([float(np.mean(ratios[t])) for t in tau_arr])
    eta = _fit_exponent(tau_arr, mean_ratio)

    return {"axioms_i_iii": "pass", "C1": float(c1), "a0": float(a0),
            "eta": eta, "thin_ratios": {float(t): float(np.mean(ratios[t]))
                                        for t in tau_arr}}


def _set_diameter(p: np.ndarray) -> float:
    if p.shape[0] <= 1:
        return 0.0
    if p.shape[0] <= 1200:
        return float(np.max(np.linalg.norm(p[:, None] - p[None], axis=2)))
    c = p.mean(axis=0)
    r = np.linalg.norm(p - c, axis=1)
    # upper bound via two-sided radius; enough for a measured constant
    return 2.0 * float(r.max())


def _nearest_foreign_distance(pts: np.ndarray, labels: np.ndarray) -> np.ndarray:
    tree = cKDTree(pts)
    n = pts.shape[0]
    out = np.full(n, np.inf)
    k = 2
    todo = np.arange(n)
    while todo.size and k <= n:
        d, idx = tree.query(pts[todo], k=k)
        foreign = labels[idx] != labels[todo, None]
        has = foreign.any(axis=1)
        first = np.argmax(foreign[has], axis=1)
        out[todo[has]] = d[has, first]
        todo = todo[~has]
        k = min(2 * k, n)
    return out


def _fit_exponent(tau: np.ndarray, ratio: np.ndarray) -> float:
    ok = (ratio > 0) & (tau > 0)
    if ok.sum() < 2:
        return float("nan")
    slope, _ = np.polyfit(np.log(tau[ok]), np.log(ratio[ok]), 1)
    return float(slope)


# ---------------------------------------------------------------------------
# queries
# ---------------------------------------------------------------------------

def cube_ball(tree: DyadicTree, q: int) -> tuple[np.ndarray, float]:
    """Center and inner radius with Delta(x_Q, r) inside Q."""
    c = tree.cubes[q]
    return tree.center(q), c.inner_radius


def locate_leaf(tree: DyadicTree, y, guard: float | None = None) -> int | None:
    """Leaf of the atom nearest to y; None when beyond the guard distance.

    Ties are broken toward the lowest atom index.
    """
    y = np.asarray(y, dtype=float)
    if guard is None:
        guard = 4.0 * tree.sample.spacing()["median"]
    d, idx = tree.sample.tree().query(y, k=min(4, tree.sample.count))
    d, idx = np.atleast_1d(d), np.atleast_1d(idx)
    if d[0] > guard:
        return None
    ties = idx[np.abs(d - d[0]) <= 1e-12 * max(d[0], 1.0)]
    atom = int(ties.min())
    return int(tree.assign[atom, tree.gen_index(tree.k_max)])
