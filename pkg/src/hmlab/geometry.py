"""Axis-aligned box primitives and exact box-union regions.

Whitney cubes and everything derived from them (Carleson boxes, sawtooths,
approximating domains) are finite unions of axis-aligned boxes with dyadic
corner coordinates.  Dyadic coordinates are exactly representable in float64,
so membership, face arithmetic and distances below are exact, not approximate.

Interior-of-union semantics: a point on a face shared by two member boxes is
a member, a point on an exposed face is boundary.  The membership test checks
that every one of the 2^d sign orthants around the query point is covered by
some box whose closure contains the point; this decides interior membership
exactly for finite box unions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.spatial import cKDTree


@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box [lo, hi]."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float))
        if np.any(self.hi < self.lo):
            raise ValueError("box with hi < lo")

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def sides(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def diam(self) -> float:
        return float(np.linalg.norm(self.sides))

    @property
    def volume(self) -> float:
        return float(np.prod(self.sides))

    def dilate(self, factor: float) -> "Box":
        """Concentric dilate by ``factor``."""
        c, h = self.center, 0.5 * factor * self.sides
        return Box(c - h, c + h)

    def contains(self, x: np.ndarray, closed: bool = True) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if closed:
            ok = np.all((x >= self.lo) & (x <= self.hi), axis=1)
        else:
            ok = np.all((x > self.lo) & (x < self.hi), axis=1)
        return ok if ok.shape[0] > 1 else ok[0] if x.shape[0] == 1 else ok

    def dist_point(self, x: np.ndarray) -> np.ndarray:
        """Euclidean distance from point(s) to this closed box."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        d = np.maximum(np.maximum(self.lo - x, x - self.hi), 0.0)
        out = np.linalg.norm(d, axis=1)
        return out if out.shape[0] > 1 else out[0]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.lo + rng.random((n, self.dim)) * self.sides


def box_box_distance(lo1, hi1, lo2, hi2) -> float:
    """Distance between two closed boxes."""
    g = np.maximum(np.asarray(lo2) - np.asarray(hi1), np.asarray(lo1) - np.asarray(hi2))
    return float(np.linalg.norm(np.maximum(g, 0.0)))


def boxes_point_distance(lo: np.ndarray, hi: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Distances from one point to many boxes, vectorized over boxes."""
    d = np.maximum(np.maximum(lo - x, x - hi), 0.0)
    return np.linalg.norm(d, axis=1)


_SIGNS = {d: np.array(list(product((-1, 1), repeat=d))) for d in (1, 2, 3)}


@dataclass
class Fragment:
    """Exposed piece of a box face: an (d-1)-rectangle in an axis plane."""

    axis: int
    side: int            # +1 outward along axis, -1 opposite
    coord: float         # plane coordinate on `axis`
    lo_t: np.ndarray     # transverse lower corner (d-1 coords, axes != axis)
    hi_t: np.ndarray
    source: int          # row of the source box

    @property
    def area(self) -> float:
        return float(np.prod(self.hi_t - self.lo_t))

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


class BoxUnion:
    """int(union of closed boxes), with exact membership and face geometry."""

    def __init__(self, lo: np.ndarray, hi: np.ndarray):
        self.lo = np.atleast_2d(np.asarray(lo, dtype=float))
        self.hi = np.atleast_2d(np.asarray(hi, dtype=float))
        if self.lo.shape != self.hi.shape:
            raise ValueError("lo/hi shape mismatch")
        self.dim = self.lo.shape[1]
        self._tree: cKDTree | None = None
        self._half_diag = 0.5 * np.linalg.norm(self.hi - self.lo, axis=1)
        self._fragments: list[Fragment] | None = None
        self._cloud: tuple[cKDTree, float, np.ndarray] | None = None
        self._overlaps = None
        self._frag_arrays = None

    # -- construction ------------------------------------------------------

    @classmethod
    def from_boxes(cls, boxes: list[Box]) -> "BoxUnion":
        return cls(np.array([b.lo for b in boxes]), np.array([b.hi for b in boxes]))

    def dedupe(self) -> "BoxUnion":
        rows = np.unique(np.hstack([self.lo, self.hi]), axis=0)
        d = self.dim
        return BoxUnion(rows[:, :d], rows[:, d:])

    @property
    def n_boxes(self) -> int:
        return self.lo.shape[0]

    def bounding_box(self) -> Box:
        return Box(self.lo.min(axis=0), self.hi.max(axis=0))

    def _center_tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(0.5 * (self.lo + self.hi))
        return self._tree

    # -- membership ----------------------------------------------------------

    def covering_rows(self, x: np.ndarray) -> np.ndarray:
        """Rows whose closure contains the single point x."""
        x = np.asarray(x, dtype=float)
        r = float(self._half_diag.max()) * (1 + 1e-12) if self.n_boxes else 0.0
        cand = self._center_tree().query_ball_point(x, r + 1e-300)
        cand = np.asarray(cand, dtype=int)
        if cand.size == 0:
            return cand
        ok = np.all((x >= self.lo[cand]) & (x <= self.hi[cand]), axis=1)
        return cand[ok]

    def contains_point(self, x: np.ndarray) -> bool:
        """Exact interior-of-union membership of a single point."""
        x = np.asarray(x, dtype=float)
        cand = self.covering_rows(x)
        if cand.size == 0:
            return False
        above = x > self.lo[cand]          # room on the -1 side
        below = x < self.hi[cand]          # room on the +1 side
        for s in _SIGNS[self.dim]:
            need = np.where(s > 0, below, above)
            if not np.any(np.all(need, axis=1)):
                return False
        return True

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.array([self.contains_point(p) for p in x])

    def contains_closure(self, x: np.ndarray, chunk: int = 4096) -> np.ndarray:
        """Vectorized closed-union membership for many points."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.zeros(x.shape[0], dtype=bool)
        for i in range(0, x.shape[0], chunk):
            xs = x[i : i + chunk]
            hit = np.zeros(xs.shape[0], dtype=bool)
            for j in range(0, self.n_boxes, 8192):
                lo, hi = self.lo[j : j + 8192], self.hi[j : j + 8192]
                inside = np.all(
                    (xs[:, None, :] >= lo[None]) & (xs[:, None, :] <= hi[None]), axis=2
                )
                hit |= inside.any(axis=1)
            out[i : i + chunk] = hit
        return out

    def count_covering(self, x: np.ndarray) -> np.ndarray:
        """Number of box closures containing each point."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.zeros(x.shape[0], dtype=np.int64)
        for j in range(0, self.n_boxes, 8192):
            lo, hi = self.lo[j : j + 8192], self.hi[j : j + 8192]
            inside = np.all(
                (x[:, None, :] >= lo[None]) & (x[:, None, :] <= hi[None]), axis=2
            )
            out += inside.sum(axis=1)
        return out

    def owner_rows(self, x: np.ndarray) -> np.ndarray:
        """Lowest covering row per point, -1 if uncovered (closed semantics)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        own = np.full(x.shape[0], -1, dtype=np.int64)
        for j in range(self.n_boxes - 1, -1, -1):
            inside = np.all((x >= self.lo[j]) & (x <= self.hi[j]), axis=1)
            own[inside] = j
        return own

    # -- integration ---------------------------------------------------------

    def volumes(self) -> np.ndarray:
        return np.prod(self.hi - self.lo, axis=1)

    def _overlap_lists(self) -> list[np.ndarray]:
        """Per box: rows of boxes whose closures intersect it (self included)."""
        if getattr(self, "_overlaps", None) is None:
            tree = self._center_tree()
            out = []
            rmax = float(self._half_diag.max()) if self.n_boxes else 0.0
            centers = 0.5 * (self.lo + self.hi)
            for i in range(self.n_boxes):
                cand = np.asarray(tree.query_ball_point(
                    centers[i], self._half_diag[i] + rmax + 1e-12), dtype=int)
                ok = np.all((self.lo[cand] <= self.hi[i]) &
                            (self.lo[i] <= self.hi[cand]), axis=1)
                out.append(np.sort(cand[ok]))
            self._overlaps = out
        return self._overlaps

    def mc_integral(self, f, n_total: int, rng: np.random.Generator,
                    min_per_box: int = 4):
        """Stratified MC of ``f`` over the union, overlap-corrected.

        Samples per box proportional to its volume (exact strata measures);
        a point sampled in box i contributes only when i is its lowest
        covering row (ownership decided against the boxes overlapping i),
        which makes the estimator unbiased on the union.
        Returns (integral, standard_error, n_used).
        """
        vols = self.volumes()
        vtot = float(vols.sum())
        if vtot == 0:
            return 0.0, 0.0, 0
        alloc = np.maximum(min_per_box, np.ceil(n_total * vols / vtot)).astype(int)
        overlaps = self._overlap_lists()
        total, var_acc, n_used = 0.0, 0.0, 0
        for i in range(self.n_boxes):
            n = int(alloc[i])
            pts = self.lo[i] + rng.random((n, self.dim)) * (self.hi[i] - self.lo[i])
            cand = overlaps[i]
            lower = cand[cand < i]
            if lower.size:
                covered = np.any(np.all(
                    (pts[:, None, :] >= self.lo[lower][None]) &
                    (pts[:, None, :] <= self.hi[lower][None]), axis=2), axis=1)
                w = ~covered
            else:
                w = np.ones(n, dtype=bool)
            vals = np.where(w, f(pts), 0.0) if np.any(w) else np.zeros(n)
            total += vols[i] * float(vals.mean())
            var_acc += (vols[i] ** 2) * float(vals.var(ddof=1) if n > 1 else 0.0) / n
            n_used += n
        return total, float(np.sqrt(var_acc)), n_used

    def mc_volume(self, n_total: int, rng: np.random.Generator):
        return self.mc_integral(lambda p: np.ones(p.shape[0]), n_total, rng)

    def exact_volume(self) -> float:
        """Union volume by sweep over compressed coordinates (small unions)."""
        if self.n_boxes == 0:
            return 0.0
        grids = [np.unique(np.concatenate([self.lo[:, a], self.hi[:, a]]))
                 for a in range(self.dim)]
        total = 0.0
        for idx in product(*[range(len(g) - 1) for g in grids]):
            lo = np.array([grids[a][idx[a]] for a in range(self.dim)])
            hi = np.array([grids[a][idx[a] + 1] for a in range(self.dim)])
            mid = 0.5 * (lo + hi)
            if np.any(np.all((mid >= self.lo) & (mid <= self.hi), axis=1)):
                total += float(np.prod(hi - lo))
        return total

    # -- boundary faces ------------------------------------------------------

    def boundary_fragments(self) -> list[Fragment]:
        """Exposed face fragments; their union is exactly the topological
        boundary of the open union (up to sets of zero surface measure)."""
        if self._fragments is None:
            self._fragments = self._compute_fragments()
        return self._fragments

    def _compute_fragments(self) -> list[Fragment]:
        frags: list[Fragment] = []
        d = self.dim
        tree = self._center_tree()
        search_r = 2.0 * float(self._half_diag.max()) if self.n_boxes else 0.0
        for i in range(self.n_boxes):
            near = np.asarray(
                tree.query_ball_point(0.5 * (self.lo[i] + self.hi[i]), search_r + 1e-300),
                dtype=int,
            )
            near = near[near != i]
            for axis in range(d):
                taxes = [a for a in range(d) if a != axis]
                for side in (-1, 1):
                    c = self.hi[i, axis] if side > 0 else self.lo[i, axis]
                    span_lo = self.lo[i][taxes]
                    span_hi = self.hi[i][taxes]
                    # boxes covering the outward side of the plane at c, plus
                    # lower-index boxes exposing the same oriented plane (the
                    # overlap is theirs: each boundary point counted once)
                    rects = []
                    if near.size:
                        if side > 0:
                            covers = (self.lo[near, axis] <= c) & (c < self.hi[near, axis])
                            same = (self.hi[near, axis] == c) & (near < i)
                        else:
                            covers = (self.lo[near, axis] < c) & (c <= self.hi[near, axis])
                            same = (self.lo[near, axis] == c) & (near < i)
                        for j in near[covers | same]:
                            rects.append((self.lo[j][taxes], self.hi[j][taxes]))
                    for flo, fhi in _rect_subtract(span_lo, span_hi, rects):
                        frags.append(Fragment(axis, side, float(c), flo, fhi, i))
        return frags

    def boundary_area(self) -> float:
        return float(sum(f.area for f in self.boundary_fragments()))

    def sample_boundary(self, spacing: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Quasi-uniform points on the exposed faces.

        Returns (points, weights, fragment_index); weights are exact per
        fragment (area divided by its point count).
        """
        pts, wts, src = [], [], []
        for fi, f in enumerate(self.boundary_fragments()):
            ext = f.hi_t - f.lo_t
            counts = np.maximum(1, np.round(ext / spacing).astype(int))
            axes_grids = [f.lo_t[k] + (np.arange(counts[k]) + 0.5) * ext[k] / counts[k]
                          for k in range(len(ext))]
            mesh = np.meshgrid(*axes_grids, indexing="ij") if len(ext) else []
            tpts = (np.stack([m.ravel() for m in mesh], axis=1)
                    if len(ext) else np.zeros((1, 0)))
            n = tpts.shape[0]
            full = np.empty((n, self.dim))
            k = 0
            for a in range(self.dim):
                if a == f.axis:
                    full[:, a] = f.coord
                else:
                    full[:, a] = tpts[:, k]
                    k += 1
            pts.append(full)
            wts.append(np.full(n, f.area / n))
            src.append(np.full(n, fi))
        if not pts:
            return np.zeros((0, self.dim)), np.zeros(0), np.zeros(0, dtype=int)
        return np.vstack(pts), np.concatenate(wts), np.concatenate(src)

    # -- distance to the boundary -------------------------------------------

    def _fragment_arrays(self):
        """Fragments grouped by axis as flat arrays for vectorized distances."""
        if getattr(self, "_frag_arrays", None) is None:
            groups = {}
            for f in self.boundary_fragments():
                groups.setdefault(f.axis, []).append(f)
            packed = {}
            for axis, fl in groups.items():
                packed[axis] = (np.array([f.coord for f in fl]),
                                np.array([f.lo_t for f in fl]),
                                np.array([f.hi_t for f in fl]))
            self._frag_arrays = packed
        return self._frag_arrays

    def dist_to_boundary_exact(self, x: np.ndarray, chunk: int = 512) -> np.ndarray:
        """Exact distance from point(s) to the union's boundary fragments."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.full(x.shape[0], np.inf)
        for axis, (coord, lo_t, hi_t) in self._fragment_arrays().items():
            taxes = [a for a in range(self.dim) if a != axis]
            for i0 in range(0, x.shape[0], chunk):
                xs = x[i0:i0 + chunk]
                t = xs[:, taxes]                        # (m, d-1)
                cl = np.clip(t[:, None, :], lo_t[None], hi_t[None])
                d2 = np.sum((t[:, None, :] - cl) ** 2, axis=2) + \
                    (xs[:, axis, None] - coord[None]) ** 2
                out[i0:i0 + chunk] = np.minimum(out[i0:i0 + chunk],
                                                np.sqrt(d2.min(axis=1)))
        return out

    def _boundary_cloud(self, spacing: float):
        if self._cloud is None or self._cloud[1] > spacing:
            pts, _, src = self.sample_boundary(spacing)
            self._cloud = (cKDTree(pts), spacing, src)
        return self._cloud

    def dist_to_boundary_lower(self, x: np.ndarray, spacing: float) -> np.ndarray:
        """Certified lower bound on the boundary distance.

        Uses a point cloud sampled on the fragments at the given spacing:
        any boundary point is within half a cloud-cell diagonal of some cloud
        point, so dist(x, cloud) - slack <= dist(x, boundary).
        """
        tree, sp, _ = self._boundary_cloud(spacing)
        d, _ = tree.query(np.atleast_2d(x))
        slack = 0.5 * sp * np.sqrt(self.dim - 1) if self.dim > 1 else 0.0
        return np.maximum(d - slack, 0.0)


def _rect_subtract(span_lo, span_hi, rects):
    """span \\ union(rects) as a list of (lo, hi) rectangles; exact.

    Works in 0, 1 or 2 transverse dimensions (ambient d = 1, 2, 3).
    """
    span_lo = np.asarray(span_lo, dtype=float)
    span_hi = np.asarray(span_hi, dtype=float)
    t = span_lo.shape[0]
    if np.any(span_hi <= span_lo) and t > 0:
        return []
    if t == 0:
        return [] if rects else [(span_lo, span_hi)]
    clipped = []
    for rlo, rhi in rects:
        clo = np.maximum(np.asarray(rlo, dtype=float), span_lo)
        chi = np.minimum(np.asarray(rhi, dtype=float), span_hi)
        if np.all(chi > clo):
            clipped.append((clo, chi))
    if not clipped:
        return [(span_lo.copy(), span_hi.copy())]
    grids = []
    for a in range(t):
        pts = {span_lo[a], span_hi[a]}
        for clo, chi in clipped:
            pts.add(clo[a])
            pts.add(chi[a])
        grids.append(np.array(sorted(pts)))
    out = []
    for idx in product(*[range(len(g) - 1) for g in grids]):
        lo = np.array([grids[a][idx[a]] for a in range(t)])
        hi = np.array([grids[a][idx[a] + 1] for a in range(t)])
        mid = 0.5 * (lo + hi)
        covered = any(np.all(mid >= clo) and np.all(mid <= chi) for clo, chi in clipped)
        if not covered:
            out.append((lo, hi))
    return out
