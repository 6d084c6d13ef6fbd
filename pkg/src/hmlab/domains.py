"""Test domains given by geometric oracles, and weighted boundary samples.

Each domain exposes a distance-to-boundary function delta (1-Lipschitz, exact
for piecewise-analytic variants), an inside predicate, a bounding box, and a
quasi-uniform weighted point cloud approximating the surface measure
sigma = H^n restricted to the boundary.

Unbounded domains carry a truncation ball B(x0, 2*R_trunc) centered at a
boundary point; Monte-Carlo hits on the artificial sphere are reported as
escape mass, never attributed to the real boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Box, box_box_distance
from .rng import substream

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


# ---------------------------------------------------------------------------
# specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DomainSpec:
    """Declarative description of a test domain (serializable to JSON)."""

    variant: str
    params: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "DomainSpec":
        d = dict(d)
        return cls(variant=d.pop("variant"), params=d)

    def to_dict(self) -> dict:
        return {"variant": self.variant, **self.params}


def ball(radius: float, dim: int = 3, center=None) -> DomainSpec:
    return DomainSpec("ball", {"radius": radius, "dim": dim,
                               "center": list(center) if center is not None else None})


def half_space_slab(height: float | None = None, truncation: float = 8.0,
                    dim: int = 3) -> DomainSpec:
    return DomainSpec("half_space_slab",
                      {"height": height, "truncation": truncation, "dim": dim})


def lipschitz_graph(profile: str, amplitude: float, frequency: float = 1.0,
                    window: float = 2.0, truncation: float | None = None) -> DomainSpec:
    return DomainSpec("lipschitz_graph",
                      {"profile": profile, "amplitude": amplitude,
                       "frequency": frequency, "window": window,
                       "truncation": truncation})


def cantor_cylinder(generation: int, height: float = 1.0,
                    truncation: float = 4.0) -> DomainSpec:
    return DomainSpec("cantor_cylinder", {"generation": generation,
                                          "height": height,
                                          "truncation": truncation})


def cantor_complement_2d(generation: int, truncation: float = 4.0) -> DomainSpec:
    return DomainSpec("cantor_complement_2d", {"generation": generation,
                                               "truncation": truncation})


def polygon(vertices) -> DomainSpec:
    return DomainSpec("polygon", {"vertices": [list(v) for v in vertices]})


# ---------------------------------------------------------------------------
# boundary samples
# ---------------------------------------------------------------------------

@dataclass
class BoundarySample:
    """Weighted point cloud approximating sigma on the boundary."""

    points: np.ndarray          # (N, d)
    weights: np.ndarray         # (N,), units length^n
    n: int                      # boundary dimension
    meta: dict = field(default_factory=dict)

    _tree: cKDTree | None = field(default=None, repr=False, compare=False)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def count(self) -> int:
        return self.points.shape[0]

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.points)
        return self._tree

    def spacing(self) -> dict:
        """Nearest-neighbour spacing statistics (cached)."""
        if "spacing" not in self.meta:
            d, _ = self.tree().query(self.points, k=2)
            nn = d[:, 1]
            self.meta["spacing"] = {"min": float(nn.min()),
                                    "median": float(np.median(nn)),
                                    "max": float(nn.max())}
        return self.meta["spacing"]


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

class DomainOracle:
    """Base oracle: delta, inside, bbox, and exact-where-possible box bounds."""

    dim: int
    boundary_dim: int
    diam_boundary: float                 # may be inf
    bbox: Box
    truncation_center: np.ndarray | None = None
    truncation_radius: float | None = None   # walks are confined to B(x0, 2R)
    exact_box_dist: bool = True
    delta_tolerance: float = 0.0

    def delta(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def inside(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def project_to_boundary(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def dist_box_to_boundary(self, lo, hi) -> tuple[float, float]:
        """(lower, upper) bounds on dist(box, boundary); equal when exact."""
        c = 0.5 * (np.asarray(lo) + np.asarray(hi))
        half_diag = 0.5 * float(np.linalg.norm(np.asarray(hi) - np.asarray(lo)))
        dc = float(self.delta(c[None])[0])
        return max(0.0, dc - half_diag - self.delta_tolerance), dc + self.delta_tolerance

    def dist_box_to_boundary_many(self, lo: np.ndarray,
                                  hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized (lower, upper) bounds for many boxes."""
        lo = np.atleast_2d(lo)
        hi = np.atleast_2d(hi)
        out_lo = np.empty(lo.shape[0])
        out_hi = np.empty(lo.shape[0])
        for i in range(lo.shape[0]):
            out_lo[i], out_hi[i] = self.dist_box_to_boundary(lo[i], hi[i])
        return out_lo, out_hi

    @property
    def truncated(self) -> bool:
        return self.truncation_radius is not None

    def escape_radius(self) -> float:
        return 2.0 * self.truncation_radius if self.truncated else math.inf

    def walk_delta(self, x: np.ndarray) -> np.ndarray:
        """delta for walk-on-spheres: distance to real boundary or to the
        truncation sphere, whichever is closer."""
        d = self.delta(x)
        if self.truncated:
            r = np.linalg.norm(np.atleast_2d(x) - self.truncation_center, axis=1)
            d = np.minimum(d, self.escape_radius() - r)
        return d

    def is_escape(self, x: np.ndarray, tol: float) -> np.ndarray:
        if not self.truncated:
            return np.zeros(np.atleast_2d(x).shape[0], dtype=bool)
        r = np.linalg.norm(np.atleast_2d(x) - self.truncation_center, axis=1)
        return r >= self.escape_radius() - tol


class BallOracle(DomainOracle):
    def __init__(self, radius: float, dim: int, center=None):
        if radius <= 0:
            raise ValueError("ball: radius must be positive")
        if dim not in (2, 3):
            raise ValueError("ball: dim must be 2 or 3")
        self.radius = float(radius)
        self.dim = dim
        self.boundary_dim = dim - 1
        self.center = np.zeros(dim) if center is None else np.asarray(center, float)
        self.diam_boundary = 2.0 * radius
        self.bbox = Box(self.center - radius, self.center + radius)

    def delta(self, x):
        r = np.linalg.norm(np.atleast_2d(x) - self.center, axis=1)
        return np.abs(self.radius - r)

    def inside(self, x):
        r = np.linalg.norm(np.atleast_2d(x) - self.center, axis=1)
        return r < self.radius

    def project_to_boundary(self, x):
        x = np.atleast_2d(x) - self.center
        r = np.linalg.norm(x, axis=1, keepdims=True)
        unit = np.where(r > 0, x / np.maximum(r, 1e-300), 0.0)
        unit[(r == 0).ravel(), 0] = 1.0
        return self.center + self.radius * unit

    def dist_box_to_boundary(self, lo, hi):
        dlo, dhi = self.dist_box_to_boundary_many(lo, hi)
        return float(dlo[0]), float(dhi[0])

    def dist_box_to_boundary_many(self, lo, hi):
        lo, hi = np.atleast_2d(np.asarray(lo, float)), np.atleast_2d(np.asarray(hi, float))
        gap = np.maximum(np.maximum(lo - self.center, self.center - hi), 0.0)
        dmin = np.linalg.norm(gap, axis=1)
        far = np.maximum(np.abs(lo - self.center), np.abs(hi - self.center))
        dmax = np.linalg.norm(far, axis=1)
        d = np.where(dmin > self.radius, dmin - self.radius,
                     np.where(dmax < self.radius, self.radius - dmax, 0.0))
        return d, d.copy()


class SlabOracle(DomainOracle):
    """Half-space {x_d > 0} or slab {0 < x_d < height}."""

    def __init__(self, height: float | None, truncation: float, dim: int):
        if height is not None and height <= 0:
            raise ValueError("half_space_slab: height must be positive or None")
        if truncation <= 0:
            raise ValueError("half_space_slab: truncation must be positive")
        self.height = height
        self.dim = dim
        self.boundary_dim = dim - 1
        self.diam_boundary = math.inf
        self.truncation_center = np.zeros(dim)
        self.truncation_radius = float(truncation)
        top = height if height is not None else 2 * truncation
        lo = np.full(dim, -2 * truncation)
        hi = np.full(dim, 2 * truncation)
        lo[-1], hi[-1] = 0.0, top
        self.bbox = Box(lo, hi)

    def delta(self, x):
        t = np.atleast_2d(x)[:, -1]
        d = np.abs(t)
        if self.height is not None:
            d = np.minimum(d, np.abs(self.height - t))
        return d

    def inside(self, x):
        t = np.atleast_2d(x)[:, -1]
        ok = t > 0
        if self.height is not None:
            ok &= t < self.height
        return ok

    def project_to_boundary(self, x):
        x = np.array(np.atleast_2d(x), dtype=float)
        t = x[:, -1]
        if self.height is None:
            x[:, -1] = 0.0
        else:
            x[:, -1] = np.where(np.abs(t) <= np.abs(self.height - t), 0.0, self.height)
        return x

    def dist_box_to_boundary(self, lo, hi):
        dlo, dhi = self.dist_box_to_boundary_many(lo, hi)
        return float(dlo[0]), float(dhi[0])

    def dist_box_to_boundary_many(self, lo, hi):
        lo_t = np.atleast_2d(np.asarray(lo, float))[:, -1]
        hi_t = np.atleast_2d(np.asarray(hi, float))[:, -1]
        d = np.where((lo_t <= 0.0) & (0.0 <= hi_t), 0.0,
                     np.minimum(np.abs(lo_t), np.abs(hi_t)))
        if self.height is not None:
            h = self.height
            d2 = np.where((lo_t <= h) & (h <= hi_t), 0.0,
                          np.minimum(np.abs(lo_t - h), np.abs(hi_t - h)))
            d = np.minimum(d, d2)
        return d, d.copy()


_PROFILES: dict[str, Callable] = {
    "flat": lambda u, a, f: np.zeros(u.shape[0]),
    "affine": lambda u, a, f: a * u[:, 0],
    "cone": lambda u, a, f: a * np.linalg.norm(u, axis=1),
    "sinusoid": lambda u, a, f: a * np.prod(np.sin(f * u), axis=1),
}

_PROFILE_LIP = {
    "flat": lambda a, f, k: 0.0,
    "affine": lambda a, f, k: abs(a),
    "cone": lambda a, f, k: abs(a),
    "sinusoid": lambda a, f, k: abs(a) * abs(f) * math.sqrt(k),
}


class LipschitzGraphOracle(DomainOracle):
    """Region above the graph of an L-Lipschitz profile, ambient dim 2 or 3.

    delta is the certified lower bound (vertical gap)/sqrt(1+L^2); the
    declared relative error is sqrt(1+L^2) - 1.
    """

    exact_box_dist = False

    def __init__(self, profile: str, amplitude: float, frequency: float,
                 window: float, truncation: float | None, dim: int = 3):
        if profile not in _PROFILES:
            raise ValueError(f"lipschitz_graph: unknown profile {profile!r}")
        if window <= 0:
            raise ValueError("lipschitz_graph: window must be positive")
        self.profile_name = profile
        self.amplitude = float(amplitude)
        self.frequency = float(frequency)
        self.window = float(window)
        self.dim = dim
        self.boundary_dim = dim - 1
        self.lip = _PROFILE_LIP[profile](amplitude, frequency, dim - 1)
        if self.lip < 0:
            raise ValueError("lipschitz_graph: Lipschitz constant must be >= 0")
        self.diam_boundary = math.inf
        self.truncation_center = np.zeros(dim)
        self.truncation_radius = float(truncation if truncation is not None else window)
        self._slope = math.sqrt(1.0 + self.lip ** 2)
        self.delta_tolerance = 0.0   # lower bound is certified; see rel_error
        self.rel_error = self._slope - 1.0
        w = self.window
        lo = np.full(dim, -2 * w)
        hi = np.full(dim, 2 * w)
        lo[-1] = -abs(amplitude) * 1.5
        hi[-1] = 2 * w
        self.bbox = Box(lo, hi)

    def _phi(self, u):
        return _PROFILES[self.profile_name](np.atleast_2d(u), self.amplitude,
                                            self.frequency)

    def delta(self, x):
        x = np.atleast_2d(x)
        gap = np.abs(x[:, -1] - self._phi(x[:, :-1]))
        return gap / self._slope

    def inside(self, x):
        x = np.atleast_2d(x)
        return x[:, -1] > self._phi(x[:, :-1])

    def project_to_boundary(self, x):
        x = np.array(np.atleast_2d(x), dtype=float)
        x[:, -1] = self._phi(x[:, :-1])
        return x


def _four_corners_squares(generation: int) -> np.ndarray:
    """Corner coordinates (m, 2, 2) of the Garnett four-corners squares."""
    if generation < 0:
        raise ValueError("generation must be >= 0")
    sq = np.array([[[0.0, 0.0], [1.0, 1.0]]])
    for _ in range(generation):
        side = (sq[0, 1, 0] - sq[0, 0, 0]) / 4.0
        offs = np.array([[0.0, 0.0], [3.0, 0.0], [0.0, 3.0], [3.0, 3.0]]) * side
        new = []
        for lo, _hi in sq:
            for o in offs:
                new.append([lo + o, lo + o + side])
        sq = np.array(new)
    return sq


def _dist_to_box_boundary_2d(xy: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Distance from points to the boundary of a 2D box, in or out."""
    out = np.maximum(np.maximum(lo - xy, xy - hi), 0.0)
    d_out = np.linalg.norm(out, axis=1)
    inside = np.all((xy >= lo) & (xy <= hi), axis=1)
    d_in = np.minimum((xy - lo).min(axis=1), (hi - xy).min(axis=1))
    return np.where(inside, d_in, d_out)


class CantorComplement2DOracle(DomainOracle):
    """Plane complement of the four-corners squares at finite generation."""

    def __init__(self, generation: int, truncation: float):
        self.generation = int(generation)
        self.squares = _four_corners_squares(self.generation)
        self.dim = 2
        self.boundary_dim = 1
        self.diam_boundary = math.sqrt(2.0)
        self.truncation_center = np.array([0.0, 0.0])
        self.truncation_radius = float(truncation)
        self.bbox = Box(self.truncation_center - 2 * truncation,
                        self.truncation_center + 2 * truncation)

    def delta(self, x):
        xy = np.atleast_2d(x)
        d = np.full(xy.shape[0], np.inf)
        for lo, hi in self.squares:
            d = np.minimum(d, _dist_to_box_boundary_2d(xy, lo, hi))
        return d

    def inside(self, x):
        xy = np.atleast_2d(x)
        occupied = np.zeros(xy.shape[0], dtype=bool)
        for lo, hi in self.squares:
            occupied |= np.all((xy >= lo) & (xy <= hi), axis=1)
        return ~occupied

    def project_to_boundary(self, x):
        xy = np.array(np.atleast_2d(x), dtype=float)
        best = np.full(xy.shape[0], np.inf)
        proj = xy.copy()
        for lo, hi in self.squares:
            p = _project_to_box_boundary_2d(xy, lo, hi)
            d = np.linalg.norm(p - xy, axis=1)
            take = d < best
            best = np.where(take, d, best)
            proj[take] = p[take]
        return proj

    def dist_box_to_boundary(self, lo, hi):
        dlo, dhi = self.dist_box_to_boundary_many(lo, hi)
        return float(dlo[0]), float(dhi[0])

    def dist_box_to_boundary_many(self, lo, hi):
        lo = np.atleast_2d(np.asarray(lo, float))[:, :2]
        hi = np.atleast_2d(np.asarray(hi, float))[:, :2]
        best = np.full(lo.shape[0], np.inf)
        for slo, shi in self.squares:
            contained = np.all(lo >= slo, axis=1) & np.all(hi <= shi, axis=1)
            d_in = np.minimum((lo - slo).min(axis=1), (shi - hi).min(axis=1))
            g = np.maximum(np.maximum(slo - hi, lo - shi), 0.0)
            d_out = np.linalg.norm(g, axis=1)
            best = np.minimum(best, np.where(contained, d_in, d_out))
        return best, best.copy()


def _project_to_box_boundary_2d(xy, lo, hi):
    p = np.clip(xy, lo, hi)
    inside = np.all((xy > lo) & (xy < hi), axis=1)
    if np.any(inside):
        q = p[inside]
        gaps = np.stack([q[:, 0] - lo[0], hi[0] - q[:, 0],
                         q[:, 1] - lo[1], hi[1] - q[:, 1]], axis=1)
        k = np.argmin(gaps, axis=1)
        q = q.copy()
        q[k == 0, 0] = lo[0]
        q[k == 1, 0] = hi[0]
        q[k == 2, 1] = lo[1]
        q[k == 3, 1] = hi[1]
        p[inside] = q
    return p


class CantorCylinderOracle(DomainOracle):
    """R^3 minus the four-corners squares extruded along the z axis."""

    def __init__(self, generation: int, height: float, truncation: float):
        self.generation = int(generation)
        self.height = float(height)
        self.squares = _four_corners_squares(self.generation)
        self.dim = 3
        self.boundary_dim = 2
        self.diam_boundary = math.inf
        self.truncation_center = np.array([0.0, 0.0, 0.0])
        self.truncation_radius = float(truncation)
        self.bbox = Box(self.truncation_center - 2 * truncation,
                        self.truncation_center + 2 * truncation)

    def delta(self, x):
        X = np.atleast_2d(x)
        xy = X[:, :2]
        d = np.full(xy.shape[0], np.inf)
        for lo, hi in self.squares:
            d = np.minimum(d, _dist_to_box_boundary_2d(xy, lo, hi))
        return d

    def inside(self, x):
        X = np.atleast_2d(x)
        xy = X[:, :2]
        occupied = np.zeros(xy.shape[0], dtype=bool)
        for lo, hi in self.squares:
            occupied |= np.all((xy >= lo) & (xy <= hi), axis=1)
        return ~occupied

    def project_to_boundary(self, x):
        X = np.array(np.atleast_2d(x), dtype=float)
        xy = X[:, :2]
        best = np.full(xy.shape[0], np.inf)
        proj = xy.copy()
        for lo, hi in self.squares:
            p = _project_to_box_boundary_2d(xy, lo, hi)
            d = np.linalg.norm(p - xy, axis=1)
            take = d < best
            best = np.where(take, d, best)
            proj[take] = p[take]
        X[:, :2] = proj
        return X

    def dist_box_to_boundary(self, lo, hi):
        dlo, dhi = self.dist_box_to_boundary_many(lo, hi)
        return float(dlo[0]), float(dhi[0])

    def dist_box_to_boundary_many(self, lo, hi):
        helper = CantorComplement2DOracle.__new__(CantorComplement2DOracle)
        helper.squares = self.squares
        return helper.dist_box_to_boundary_many(lo, hi)


class PolygonOracle(DomainOracle):
    """Simple (possibly non-convex) polygon in the plane."""

    def __init__(self, vertices):
        v = np.asarray(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise ValueError("polygon: vertices must be an (m>=3, 2) list")
        self.vertices = v
        self.dim = 2
        self.boundary_dim = 1
        self.a = v
        self.b = np.roll(v, -1, axis=0)
        self.diam_boundary = float(
            np.max(np.linalg.norm(v[:, None] - v[None], axis=2)))
        self.bbox = Box(v.min(axis=0), v.max(axis=0))

    def _seg_data(self, x):
        x = np.atleast_2d(x)
        ab = self.b - self.a                       # (m, 2)
        ap = x[:, None, :] - self.a[None]          # (k, m, 2)
        t = np.clip(np.einsum("kmd,md->km", ap, ab) /
                    np.maximum(np.einsum("md,md->m", ab, ab), 1e-300), 0.0, 1.0)
        proj = self.a[None] + t[..., None] * ab[None]
        d = np.linalg.norm(x[:, None, :] - proj, axis=2)
        return d, proj

    def delta(self, x):
        d, _ = self._seg_data(x)
        return d.min(axis=1)

    def inside(self, x):
        x = np.atleast_2d(x)
        # even-odd ray casting, robust for generic query points
        xa, ya = self.a[:, 0], self.a[:, 1]
        xb, yb = self.b[:, 0], self.b[:, 1]
        px, py = x[:, 0, None], x[:, 1, None]
        cond = (ya[None] > py) != (yb[None] > py)
        slope = (xb - xa)[None] / np.where((yb - ya)[None] == 0, 1e-300, (yb - ya)[None])
        xint = xa[None] + (py - ya[None]) * slope
        crossings = np.sum(cond & (px < xint), axis=1)
        return crossings % 2 == 1

    def project_to_boundary(self, x):
        d, proj = self._seg_data(x)
        k = np.argmin(d, axis=1)
        return proj[np.arange(proj.shape[0]), k]

    def dist_box_to_boundary(self, lo, hi):
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        corners = np.array([[lo[0], lo[1]], [hi[0], lo[1]],
                            [hi[0], hi[1]], [lo[0], hi[1]]])
        best = math.inf
        for a, b in zip(self.a, self.b):
            if _segment_hits_box(a, b, lo, hi):
                return 0.0, 0.0
            dc, _ = self._seg_data(corners)
            best = min(best, float(dc.min()))
            for p in (a, b):
                g = np.maximum(np.maximum(lo - p, p - hi), 0.0)
                best = min(best, float(np.linalg.norm(g)))
        return best, best


def _segment_hits_box(a, b, lo, hi) -> bool:
    """Liang-Barsky segment/box intersection test (closed box)."""
    d = b - a
    t0, t1 = 0.0, 1.0
    for axis in range(2):
        if d[axis] == 0:
            if a[axis] < lo[axis] or a[axis] > hi[axis]:
                return False
        else:
            ta = (lo[axis] - a[axis]) / d[axis]
            tb = (hi[axis] - a[axis]) / d[axis]
            ta, tb = min(ta, tb), max(ta, tb)
            t0, t1 = max(t0, ta), min(t1, tb)
            if t0 > t1:
                return False
    return True


# ---------------------------------------------------------------------------
# build + sample
# ---------------------------------------------------------------------------

def build_domain(spec: DomainSpec) -> DomainOracle:
    """Construct the oracle for a domain spec; exact delta where possible."""
    p = spec.params
    try:
        if spec.variant == "ball":
            return BallOracle(p["radius"], p.get("dim", 3), p.get("center"))
        if spec.variant == "half_space_slab":
            return SlabOracle(p.get("height"), p.get("truncation", 8.0),
                              p.get("dim", 3))
        if spec.variant == "lipschitz_graph":
            return LipschitzGraphOracle(p["profile"], p["amplitude"],
                                        p.get("frequency", 1.0),
                                        p.get("window", 2.0),
                                        p.get("truncation"),
                                        p.get("dim", 3))
        if spec.variant == "cantor_cylinder":
            return CantorCylinderOracle(p["generation"], p.get("height", 1.0),
                                        p.get("truncation", 4.0))
        if spec.variant == "cantor_complement_2d":
            return CantorComplement2DOracle(p["generation"], p.get("truncation", 4.0))
        if spec.variant == "polygon":
            return PolygonOracle(p["vertices"])
    except KeyError as e:
        raise ValueError(f"{spec.variant}: missing parameter {e.args[0]!r}") from None
    raise ValueError(f"unknown domain variant {spec.variant!r}")


def _fibonacci_sphere(n: int, radius: float, center, phase: float) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    th = GOLDEN_ANGLE * i + phase
    pts = np.stack([r * np.cos(th), r * np.sin(th), z], axis=1)
    return center + radius * pts


def _sunflower_disk(n: int, radius: float, phase: float) -> np.ndarray:
    i = np.arange(n) + 0.5
    r = radius * np.sqrt(i / n)
    th = GOLDEN_ANGLE * i + phase
    return np.stack([r * np.cos(th), r * np.sin(th)], axis=1)


def sample_boundary(oracle: DomainOracle, spec: DomainSpec, target_count: int,
                    seed: int = 0) -> BoundarySample:
    """Quasi-uniform weighted sample of sigma; deterministic given seed."""
    if target_count < 1:
        raise ValueError("target_count must be >= 1")
    if math.isinf(oracle.diam_boundary) and not oracle.truncated:
        raise ValueError("unbounded boundary requires a truncation radius")
    rng = substream(seed, "sample_boundary", spec.variant)
    phase = float(rng.random()) * 2 * math.pi
    v, p = spec.variant, spec.params

    if v == "ball":
        R, dim = p["radius"], p.get("dim", 3)
        c = np.asarray(p.get("center") or np.zeros(dim), dtype=float)
        if dim == 3:
            pts = _fibonacci_sphere(target_count, R, c, phase)
            w = np.full(target_count, 4.0 * math.pi * R * R / target_count)
        else:
            th = phase + 2 * math.pi * (np.arange(target_count) + 0.5) / target_count
            pts = c + R * np.stack([np.cos(th), np.sin(th)], axis=1)
            w = np.full(target_count, 2.0 * math.pi * R / target_count)
        meta = {"variant": v}

    elif v == "half_space_slab":
        dim = p.get("dim", 3)
        R = p.get("truncation", 8.0)
        planes = [0.0] + ([p["height"]] if p.get("height") else [])
        per = max(1, target_count // len(planes))
        pts_list, w_list = [], []
        for h in planes:
            if dim == 3:
                uv = _sunflower_disk(per, R, phase)
                pp = np.column_stack([uv, np.full(per, h)])
                ww = np.full(per, math.pi * R * R / per)
            else:
                u = -R + (np.arange(per) + 0.5) * 2 * R / per
                pp = np.column_stack([u, np.full(per, h)])
                ww = np.full(per, 2.0 * R / per)
            pts_list.append(pp)
            w_list.append(ww)
        pts, w = np.vstack(pts_list), np.concatenate(w_list)
        meta = {"variant": v, "truncation": R}

    elif v == "lipschitz_graph":
        dim = p.get("dim", 3)
        W = p["window"]
        orc: LipschitzGraphOracle = oracle  # type: ignore[assignment]
        if dim == 3:
            m = max(2, int(round(math.sqrt(target_count))))
            g = -W + (np.arange(m) + 0.5) * 2 * W / m
            U = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
            cell = (2 * W / m) ** 2
        else:
            m = target_count
            U = (-W + (np.arange(m) + 0.5) * 2 * W / m)[:, None]
            cell = 2 * W / m
        z = orc._phi(U)
        h = 1e-6 * W
        grads = []
        for k in range(U.shape[1]):
            Up = U.copy()
            Up[:, k] += h
            grads.append((orc._phi(Up) - z) / h)
        jac = np.sqrt(1.0 + sum(g * g for g in grads))
        pts = np.column_stack([U, z])
        w = cell * jac
        meta = {"variant": v, "surface_element": "numeric, declared error O(h)"}

    elif v in ("cantor_complement_2d", "cantor_cylinder"):
        squares = _four_corners_squares(p["generation"])
        m = len(squares)
        side = float(squares[0, 1, 0] - squares[0, 0, 0])
        if v == "cantor_complement_2d":
            per_sq = max(4, target_count // m)
            per_edge = max(1, per_sq // 4)
            pts_list, w_list = [], []
            for lo, hi in squares:
                for (a, b) in (((lo[0], lo[1]), (hi[0], lo[1])),
                               ((hi[0], lo[1]), (hi[0], hi[1])),
                               ((hi[0], hi[1]), (lo[0], hi[1])),
                               ((lo[0], hi[1]), (lo[0], lo[1]))):
                    t = (np.arange(per_edge) + 0.5) / per_edge
                    a, b = np.asarray(a), np.asarray(b)
                    pts_list.append(a + t[:, None] * (b - a))
                    w_list.append(np.full(per_edge, side / per_edge))
            pts, w = np.vstack(pts_list), np.concatenate(w_list)
        else:
            H = p.get("height", 1.0)
            per_face = max(1, target_count // (4 * m))
            nz = max(1, int(round(math.sqrt(per_face * 2 * H / side))))
            nu = max(1, per_face // nz)
            zg = -H + (np.arange(nz) + 0.5) * 2 * H / nz
            pts_list, w_list = [], []
            for lo, hi in squares:
                edges = (((lo[0], lo[1]), (hi[0], lo[1])),
                         ((hi[0], lo[1]), (hi[0], hi[1])),
                         ((hi[0], hi[1]), (lo[0], hi[1])),
                         ((lo[0], hi[1]), (lo[0], lo[1])))
                for a, b in edges:
                    t = (np.arange(nu) + 0.5) / nu
                    a, b = np.asarray(a), np.asarray(b)
                    base = a + t[:, None] * (b - a)
                    grid = np.repeat(base, nz, axis=0)
                    zz = np.tile(zg, nu)
                    pts_list.append(np.column_stack([grid, zz]))
                    w_list.append(np.full(nu * nz, side * 2 * H / (nu * nz)))
            pts, w = np.vstack(pts_list), np.concatenate(w_list)
        meta = {"variant": v, "generation": p["generation"]}

    elif v == "polygon":
        verts = np.asarray(p["vertices"], dtype=float)
        nxt = np.roll(verts, -1, axis=0)
        lens = np.linalg.norm(nxt - verts, axis=1)
        total = float(lens.sum())
        pts_list, w_list = [], []
        for a, b, L in zip(verts, nxt, lens):
            ne = max(1, int(round(target_count * L / total)))
            t = (np.arange(ne) + 0.5) / ne
            pts_list.append(a + t[:, None] * (b - a))
            w_list.append(np.full(ne, L / ne))
        pts, w = np.vstack(pts_list), np.concatenate(w_list)
        meta = {"variant": v}

    else:
        raise ValueError(f"unknown domain variant {v!r}")

    return BoundarySample(points=pts, weights=w, n=oracle.boundary_dim, meta=meta)


# ---------------------------------------------------------------------------
# surface-ball mass and ADR profile
# ---------------------------------------------------------------------------

def surface_ball_mass(sample: BoundarySample, x, r: float) -> float:
    """Total weight of sample atoms within distance r of x."""
    if r <= 0:
        raise ValueError("r must be positive")
    idx = sample.tree().query_ball_point(np.asarray(x, dtype=float), r)
    return float(sample.weights[idx].sum())


def adr_profile(sample: BoundarySample, probe_centers, radii) -> dict:
    """inf/sup of surface-ball mass over r^n across probes and radii.

    Reports the best ADR constant C = max(C_upper, 1/C_lower) for the
    normalization mass ~ r^n.
    """
    probe_centers = np.atleast_2d(np.asarray(probe_centers, dtype=float))
    if probe_centers.shape[0] == 0:
        raise ValueError("adr_profile: empty probe set")
    radii = np.asarray(radii, dtype=float)
    lo_r = 10.0 * sample.spacing()["min"]
    hi_r = sample.meta.get("diam", None)
    ratios = []
    table = []
    for x in probe_centers:
        for r in radii:
            if r < lo_r or (hi_r is not None and r > hi_r):
                continue
            mass = surface_ball_mass(sample, x, float(r))
            ratio = mass / r ** sample.n
            ratios.append(ratio)
            table.append({"x": [float(c) for c in x], "r": float(r),
                          "mass": mass, "ratio": ratio})
    if not ratios:
        raise ValueError("adr_profile: no radius inside the admissible range")
    c_lower, c_upper = float(min(ratios)), float(max(ratios))
    best = max(c_upper, 1.0 / c_lower) if c_lower > 0 else math.inf
    return {"C_lower": c_lower, "C_upper": c_upper, "C": best, "table": table}
