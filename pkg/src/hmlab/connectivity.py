"""Corkscrew search, Harnack chains, exterior corkscrew detection, and the
Poincare-inequality numerical test."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .geometry import BoxUnion
from .rng import substream
from .whitney import RegionOracle, WhitneyDecomposition, whitney_chain


@dataclass
class CorkscrewResult:
    point: np.ndarray
    c: float                 # achieved constant: ball B(X, c r) in B(x,r) cap domain
    side: str                # "interior" | "exterior"
    n_candidates: int

    @property
    def found(self) -> bool:
        return self.c > 0


@dataclass
class HarnackChain:
    centers: np.ndarray      # (N, d) waypoint ball centers
    radii: np.ndarray
    endpoints: tuple[np.ndarray, np.ndarray]
    lam: float               # |X - X'| / min(delta(X), delta(X'))

    @property
    def length(self) -> int:
        return len(self.radii)

    def to_dict(self) -> dict:
        return {"centers": self.centers.tolist(), "radii": self.radii.tolist(),
                "lambda": self.lam}


def _low_discrepancy_ball(x, r, dim, n, seed=0) -> np.ndarray:
    """Deterministic low-discrepancy points in B(x, r)."""
    eng = qmc.Sobol(d=dim, scramble=False, seed=seed)
    u = eng.random(2 * n)
    pts = x + (2.0 * u - 1.0) * r
    pts = pts[np.linalg.norm(pts - x, axis=1) <= r]
    return pts[:n]


def find_corkscrew(oracle, x, r: float, n_points: int = 4096,
                   decomp: WhitneyDecomposition | None = None) -> CorkscrewResult:
    """Deepest point of B(x,r) relative to both the boundary and the sphere.

    Maximizes min(delta(X), r - |X - x|) over a deterministic low-discrepancy
    set plus Whitney cube centers inside the ball; the achieved ratio c
    certifies B(X, c r) inside B(x,r) cap domain.
    """
    if r <= 0:
        raise ValueError("r must be positive")
    x = np.asarray(x, dtype=float)
    cand = _low_discrepancy_ball(x, r, oracle.dim, n_points)
    if decomp is not None:
        inside_rows = np.linalg.norm(decomp.center - x, axis=1) <= r
        if np.any(inside_rows):
            cand = np.vstack([cand, decomp.center[inside_rows]])
    if len(cand) == 0:
        return CorkscrewResult(x, 0.0, "interior", 0)
    ok = oracle.inside(cand)
    cand = cand[ok]
    if len(cand) == 0:
        return CorkscrewResult(x, 0.0, "interior", 0)

    def score_of(pts):
        sc = np.minimum(oracle.delta(pts), r - np.linalg.norm(pts - x, axis=1))
        sc[~oracle.inside(pts)] = -np.inf
        return sc

    score = score_of(cand)
    j = int(np.argmax(score))
    best, best_score = cand[j], float(score[j])
    # deterministic local refinement around the best candidate
    radius = r / 4
    for level in range(4):
        local = _low_discrepancy_ball(best, radius, oracle.dim, 256,
                                      seed=level + 1)
        if len(local):
            sc = score_of(local)
            jj = int(np.argmax(sc))
            if sc[jj] > best_score:
                best, best_score = local[jj], float(sc[jj])
        radius /= 4
    c = max(best_score / r, 0.0)
    return CorkscrewResult(best, c, "interior", len(cand))


def boundary_strip_volume(oracle, x, r: float, rho: float, n_mc: int = 20000,
                          seed: int = 0) -> float:
    """Monte-Carlo |{X in B(x,r): dist(X, boundary) < rho}| (strip bound)."""
    rng = substream(seed, "strip", float(rho))
    x = np.asarray(x, dtype=float)
    pts = x + (rng.random((n_mc, oracle.dim)) * 2 - 1) * r
    pts = pts[np.linalg.norm(pts - x, axis=1) <= r]
    vol_ball = _ball_volume(oracle.dim, r)
    frac_ball = len(pts) / n_mc / (vol_ball / (2 * r) ** oracle.dim)
    in_strip = oracle.delta(pts) < rho
    return vol_ball * float(in_strip.mean()) if len(pts) else 0.0


def _ball_volume(d, r):
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * r ** d


def find_exterior_corkscrew(region: BoxUnion | None, oracle, x, r: float,
                            a: float, n_mc: int = 20000,
                            seed: int = 0) -> dict:
    """Exterior corkscrew from the volume hypothesis.

    Checks |B cap complement| >= a r^(d) by Monte Carlo, measures the strip
    constant |Sigma_rho cap B| <= C rho r^(d-1), then returns a sampled point
    of the complement at depth >= a r/(4C), i.e. c1 = a/(4C).
    """
    x = np.asarray(x, dtype=float)
    rng = substream(seed, "ext_cork")
    dim = oracle.dim if region is None else region.dim
    target = RegionOracle(region) if region is not None else oracle
    pts = x + (rng.random((n_mc, dim)) * 2 - 1) * r
    pts = pts[np.linalg.norm(pts - x, axis=1) <= r]
    outside = ~target.inside(pts)
    if region is not None:
        outside &= ~target.region.contains_closure(pts)
    vol_ball = _ball_volume(dim, r)
    vol_out = vol_ball * float(outside.mean())
    report = {"volume_fraction": vol_out / r ** dim, "hypothesis_met":
              vol_out >= a * r ** dim}
    if not report["hypothesis_met"]:
        report["result"] = CorkscrewResult(x, 0.0, "exterior", len(pts))
        return report

    # measured strip constant for the target boundary
    strip_c = 0.0
    for rho in (r / 8, r / 16, r / 32):
        vol = _strip_volume_points(target, pts, rho, vol_ball)
        strip_c = max(strip_c, vol / (rho * r ** (dim - 1)))
    strip_c = max(strip_c, 1.0)
    report["strip_constant"] = strip_c

    rho = a * r / (2 * strip_c)
    depth = target.delta(pts[outside])
    good = depth >= rho / 2
    if not np.any(good):
        report["result"] = CorkscrewResult(x, 0.0, "exterior", len(pts))
        return report
    j = int(np.argmax(depth))
    report["result"] = CorkscrewResult(pts[outside][good][0],
                                       a / (4 * strip_c), "exterior", len(pts))
    report["best_depth_over_r"] = float(depth.max() / r)
    return report


def _strip_volume_points(target, pts, rho, vol_ball):
    d = target.delta(pts)
    return vol_ball * float((d < rho).mean())


def harnack_chain(oracle, decomp: WhitneyDecomposition, x_from, x_to,
                  ball_factor: float = 0.5) -> HarnackChain:
    """Chain of balls along the Whitney adjacency graph.

    Waypoints are cube centers with ball radius delta/2, so every ball lies
    in the domain and has diameter comparable to its boundary distance with
    constant 2 by construction.
    """
    x_from = np.asarray(x_from, dtype=float)
    x_to = np.asarray(x_to, dtype=float)
    d_from = float(oracle.delta(x_from[None])[0])
    d_to = float(oracle.delta(x_to[None])[0])
    if d_from <= 0 or d_to <= 0:
        raise ValueError("harnack_chain endpoints must be interior")
    lam = float(np.linalg.norm(x_from - x_to)) / min(d_from, d_to)
    if np.allclose(x_from, x_to):
        return HarnackChain(x_from[None], np.array([ball_factor * d_from]),
                            (x_from, x_to), 0.0)
    ra, rb = decomp.locate(x_from), decomp.locate(x_to)
    if ra < 0 or rb < 0:
        raise ValueError("endpoints outside the decomposed region")
    rows = whitney_chain(decomp, oracle, ra, rb)
    centers = [x_from] + [decomp.center[r] for r in rows] + [x_to]
    centers = np.array(centers)
    radii = ball_factor * oracle.delta(centers)
    return HarnackChain(centers, radii, (x_from, x_to), lam)


def poincare_ratio(region: BoxUnion, fat_region: BoxUnion, f, grad_f,
                   r: float, p: float = 2.0, n_mc: int = 100000,
                   seed: int = 0) -> dict:
    """(int |f - mean|^p over region) / (r^p int |grad f|^p over fat region).

    Both integrals by ownership-corrected stratified Monte Carlo with exact
    box volumes.
    """
    # mean over the region: same substream for numerator and volume so a
    # constant field yields c == f to the last bit
    mean_val, _, _ = region.mc_integral(f, n_mc, substream(seed, "poincare_mean"))
    vol, _, _ = region.mc_volume(n_mc, substream(seed, "poincare_mean"))
    if vol <= 0:
        raise ValueError("empty region")
    c = mean_val / vol
    num, num_se, _ = region.mc_integral(
        lambda pts: np.abs(f(pts) - c) ** p, n_mc, substream(seed, "poincare_num"))
    den, den_se, _ = fat_region.mc_integral(
        lambda pts: np.linalg.norm(grad_f(pts), axis=1) ** p, n_mc,
        substream(seed, "poincare_den"))
    if den <= 0:
        ratio = 0.0 if num <= 1e-10 * max(vol, 1.0) else math.inf
        return {"ratio": ratio, "num": num, "den": den, "mean": c}
    return {"ratio": num / (r ** p * den), "num": num, "den": den, "mean": c,
            "num_se": num_se, "den_se": den_se}
