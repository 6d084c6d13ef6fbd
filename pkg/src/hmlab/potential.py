"""Fundamental solution, single layer potential, beta numbers, and the
Carleson functionals driving the flatness diagnostics.

The kernel is normalized so that E(X) = c_n |X|^{1-n} is the fundamental
solution of the Laplacian in R^{n+1} (positive); the planar case n = 1 uses
the logarithmic kernel and is flagged as outside the theory's dimension
range, but is handy for cheap experiments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .domains import BoundarySample, DomainOracle
from .rng import substream


def kernel_constant(n: int) -> float:
    """c_n with E = c_n |X|^{1-n} the fundamental solution in R^{n+1}."""
    if n < 1:
        raise ValueError("boundary dimension must be >= 1")
    if n == 1:
        return 1.0 / (2.0 * math.pi)   # logarithmic kernel coefficient
    d = n + 1
    omega = 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)  # area of S^{d-1}
    return 1.0 / ((n - 1) * omega)


@dataclass
class KernelConfig:
    n: int
    near_field_factor: float = 3.0   # exclusion radius in local spacings

    def __post_init__(self):
        self.c_n = kernel_constant(self.n)
        self.log_kernel = self.n == 1


def fundamental_solution(x: np.ndarray, n: int) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    r = np.linalg.norm(x, axis=1)
    if np.any(r == 0):
        raise ZeroDivisionError("fundamental solution evaluated at the pole")
    c = kernel_constant(n)
    if n == 1:
        return -c * np.log(r)
    return c * r ** (1 - n)


def fundamental_gradient(x: np.ndarray, n: int) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    r = np.linalg.norm(x, axis=1, keepdims=True)
    c = kernel_constant(n)
    if n == 1:
        return -c * x / r ** 2
    return c * (1 - n) * x * r ** (-n - 1)


def fundamental_hessian(x: np.ndarray, n: int) -> np.ndarray:
    """(m, d, d) Hessians of E at the given points; analytic, trace-free."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    m, d = x.shape
    r = np.linalg.norm(x, axis=1)
    c = kernel_constant(n)
    eye = np.eye(d)[None]
    outer = x[:, :, None] * x[:, None, :]
    if n == 1:
        return -c * (eye / r[:, None, None] ** 2 -
                     2.0 * outer / r[:, None, None] ** 4)
    return c * (1 - n) * (eye * r[:, None, None] ** (-n - 1) -
                          (n + 1) * outer * r[:, None, None] ** (-n - 3))


# ---------------------------------------------------------------------------
# single layer potential
# ---------------------------------------------------------------------------

def single_layer(sample: BoundarySample, x, f=None,
                 config: KernelConfig | None = None) -> np.ndarray:
    """Weighted quadrature of the single layer potential at points x."""
    cfg = config or KernelConfig(sample.n)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    f = np.ones(sample.count) if f is None else np.asarray(f, dtype=float)
    out = np.empty(x.shape[0])
    for i, xi in enumerate(x):
        diff = xi - sample.points
        r = np.linalg.norm(diff, axis=1)
        if np.any(r == 0):
            raise ZeroDivisionError("single layer evaluated on an atom")
        if cfg.log_kernel:
            ker = -cfg.c_n * np.log(r)
        else:
            ker = cfg.c_n * r ** (1 - cfg.n)
        out[i] = float(np.sum(sample.weights * ker * f))
    return out


def hessian_single_layer(sample: BoundarySample, x,
                         config: KernelConfig | None = None) -> np.ndarray:
    """Analytic Hessian of S1 at points x; near field must be excluded.

    Raises when a point is within near_field_factor local spacings of an
    atom (the kernel quadrature error blows up below the spacing scale).
    """
    cfg = config or KernelConfig(sample.n)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    guard = cfg.near_field_factor * sample.spacing()["median"]
    d, _ = sample.tree().query(x)
    d = np.atleast_1d(d)
    if np.any(d < guard):
        j = int(np.argmin(d))
        raise ValueError(f"near-field Hessian request: point {j} at distance "
                         f"{d[j]:.3g} < {guard:.3g} from the sample")
    dim = sample.dim
    out = np.zeros((x.shape[0], dim, dim))
    chunk = max(1, 2_000_000 // max(sample.count, 1))
    for i0 in range(0, x.shape[0], chunk):
        xs = x[i0:i0 + chunk]
        diff = xs[:, None, :] - sample.points[None]      # (m, N, d)
        m, N, _ = diff.shape
        hess = fundamental_hessian(diff.reshape(-1, dim), cfg.n).reshape(m, N, dim, dim)
        out[i0:i0 + chunk] = np.einsum("j,mjab->mab", sample.weights, hess)
    return out


def hessian_norm(sample: BoundarySample, x,
                 config: KernelConfig | None = None) -> np.ndarray:
    h = hessian_single_layer(sample, x, config)
    return np.linalg.norm(h, axis=(1, 2))


# ---------------------------------------------------------------------------
# beta numbers
# ---------------------------------------------------------------------------

def beta2(sample: BoundarySample, x, t: float) -> float | None:
    """Scale-normalized L2 distance to the best affine n-plane in B(x,t).

    Exact via weighted total least squares: the minimizing plane passes
    through the weighted centroid with normal the smallest-eigenvalue
    direction of the weighted scatter matrix.  Returns None when fewer than
    n+1 atoms fall in the ball.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    x = np.asarray(x, dtype=float)
    idx = sample.tree().query_ball_point(x, t)
    if len(idx) < sample.n + 1:
        return None
    pts = sample.points[idx]
    w = sample.weights[idx]
    c = np.average(pts, axis=0, weights=w)
    diff = pts - c
    scatter = np.einsum("j,ja,jb->ab", w, diff, diff)
    lam_min = float(np.linalg.eigvalsh(scatter)[0])
    return math.sqrt(max(lam_min, 0.0) / t ** (sample.n + 2))


def beta2_fixed_plane(sample: BoundarySample, x, t: float, normal,
                      offset: float) -> float:
    """The beta functional against one fixed plane {y: normal.y = offset}."""
    x = np.asarray(x, dtype=float)
    idx = sample.tree().query_ball_point(x, t)
    normal = np.asarray(normal, dtype=float)
    normal = normal / np.linalg.norm(normal)
    d = np.abs(sample.points[idx] @ normal - offset)
    return math.sqrt(float(np.sum(sample.weights[idx] * d * d)) /
                     t ** (sample.n + 2))


def ur_carleson_sum(sample: BoundarySample, x0, r: float,
                    min_scale: float | None = None) -> dict:
    """Discrete flatness sum: sum over dyadic t <= r of the in-ball weighted
    beta2^2, log-uniform in scale, normalized by r^n."""
    x0 = np.asarray(x0, dtype=float)
    if min_scale is None:
        min_scale = 4.0 * sample.spacing()["median"]
    scales = []
    t = r
    while t >= min_scale:
        scales.append(t)
        t /= 2.0
    total = 0.0
    per_scale = []
    for t in scales:
        idx = sample.tree().query_ball_point(x0, t)
        acc = 0.0
        for j in idx:
            b = beta2(sample, sample.points[j], t)
            if b is not None:
                acc += float(sample.weights[j]) * b * b
        total += math.log(2.0) * acc
        per_scale.append({"t": t, "sum": acc})
    return {"value": total / r ** sample.n, "scales": per_scale}


# ---------------------------------------------------------------------------
# volume Carleson functionals
# ---------------------------------------------------------------------------

def sf_carleson_integral(sample: BoundarySample, oracle: DomainOracle, x0,
                         r: float, n_mc: int = 4000, seed: int = 0,
                         config: KernelConfig | None = None) -> dict:
    """Monte-Carlo of |Hess S1|^2 dist(X, boundary) over B(x0,r) cap domain,
    collar-excluded, normalized by r^n."""
    cfg = config or KernelConfig(sample.n)
    x0 = np.asarray(x0, dtype=float)
    rng = substream(seed, "sf_carleson")
    guard = cfg.near_field_factor * sample.spacing()["median"]
    dim = oracle.dim
    vol_box = (2 * r) ** dim
    pts = x0 + (rng.random((n_mc, dim)) * 2 - 1) * r
    keep = (np.linalg.norm(pts - x0, axis=1) <= r) & oracle.inside(pts)
    keep &= oracle.delta(pts) > guard
    pts = pts[keep]
    if len(pts) == 0:
        return {"value": 0.0, "se": 0.0, "excluded_fraction": 1.0}
    vals = hessian_norm(sample, pts, cfg) ** 2 * oracle.delta(pts)
    integral = vol_box * float(np.sum(vals)) / n_mc
    se = vol_box * float(np.std(vals, ddof=1)) * math.sqrt(len(vals)) / n_mc
    return {"value": integral / r ** sample.n, "se": se / r ** sample.n,
            "n_used": int(len(pts)), "collar": guard}


def alpha_q_measure(asg, sample: BoundarySample, n_mc_per_q: int = 600,
                    seed: int = 0, config: KernelConfig | None = None):
    """Geometric Carleson coefficients: alpha_Q = int over the fat region of
    |Hess S1|^2 dist(X, boundary), by per-box stratified MC with deterministic
    per-Q substreams.  Returns a DiscreteCarlesonMeasure."""
    from .corona import DiscreteCarlesonMeasure
    from .whitney import region_union
    cfg = config or KernelConfig(sample.n)
    guard = cfg.near_field_factor * sample.spacing()["median"]
    oracle = asg.oracle
    alpha: dict[int, Fraction] = {}
    for c in asg.tree.cubes:
        q = c.id
        region = region_union(asg, q, fat=True)
        rng = substream(seed, "alpha_q", int(q))

        def integrand(pts):
            out = np.zeros(pts.shape[0])
            ok = oracle.inside(pts) & (oracle.delta(pts) > guard)
            if np.any(ok):
                out[ok] = hessian_norm(sample, pts[ok], cfg) ** 2 * \
                    oracle.delta(pts[ok])
            return out

        val, _, _ = region.mc_integral(integrand, n_mc_per_q, rng)
        alpha[q] = Fraction(max(float(val), 0.0))
    return DiscreteCarlesonMeasure(asg.tree, alpha)
