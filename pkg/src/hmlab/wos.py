"""Walk-on-spheres harmonic measure and Green function, with the quantitative
boundary-behavior diagnostics built on them.

Walks jump uniformly on the sphere of radius shrink * delta(X) and absorb
within eps_abs of the boundary.  Randomness is per-walk counter-based: walk i
draws from a Philox stream keyed by (seed, stream, i), so estimates are
bit-identical regardless of batching or scheduling.  In truncated domains,
hits on the artificial sphere count as escape mass, never boundary mass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .connectivity import find_corkscrew
from .domains import BoundarySample, DomainOracle
from .dyadic import DyadicTree
from .potential import fundamental_solution
from .rng import walk_generator
from .treemeasure import Frac, TreeMeasure

HIT, ESCAPE, LIMIT = 0, 1, 2


@dataclass
class WoSConfig:
    n_walks: int = 20000
    eps_abs: float | None = None     # default: spacing/4 of the routing sample
    max_steps: int = 4000
    seed: int = 0
    shrink: float = 1.0
    stream: str = "wos"
    block: int = 64                  # random numbers drawn per walk per block

    def resolve_eps(self, sample: BoundarySample | None) -> float:
        if self.eps_abs is not None:
            return self.eps_abs
        if sample is None:
            raise ValueError("eps_abs not set and no sample to derive it from")
        return 0.25 * sample.spacing()["median"]


def _directions(u: np.ndarray, dim: int) -> np.ndarray:
    if dim == 2:
        th = 2.0 * math.pi * u[:, 0]
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    z = 2.0 * u[:, 0] - 1.0
    th = 2.0 * math.pi * u[:, 1]
    s = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    return np.stack([s * np.cos(th), s * np.sin(th), z], axis=1)


def run_walks(oracle: DomainOracle, x0, cfg: WoSConfig, eps_abs: float,
              batch: int = 20000) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Run cfg.n_walks walks from x0; returns (end_points, status, steps)."""
    x0 = np.asarray(x0, dtype=float)
    dim = oracle.dim
    n_u = 1 if dim == 2 else 2
    ends = np.empty((cfg.n_walks, dim))
    status = np.full(cfg.n_walks, LIMIT, dtype=np.int8)
    steps_out = np.zeros(cfg.n_walks, dtype=np.int32)
    for b0 in range(0, cfg.n_walks, batch):
        b1 = min(b0 + batch, cfg.n_walks)
        nb = b1 - b0
        gens = [walk_generator(cfg.seed, cfg.stream, w) for w in range(b0, b1)]
        pos = np.tile(x0, (nb, 1))
        alive = np.arange(nb)
        step = 0
        buf = np.stack([g.random((cfg.block, n_u)) for g in gens])
        buf_at = 0
        while alive.size and step < cfg.max_steps:
            if buf_at == cfg.block:
                buf = np.stack([gens[i].random((cfg.block, n_u)) for i in alive])
                buf = _expand_buf(buf, alive, nb, cfg.block, n_u)
                buf_at = 0
            d = oracle.walk_delta(pos[alive])
            absorbed = d < eps_abs
            if np.any(absorbed):
                done = alive[absorbed]
                esc = oracle.is_escape(pos[done], 2 * eps_abs)
                proj = oracle.project_to_boundary(pos[done])
                ends[b0 + done] = np.where(esc[:, None], pos[done], proj)
                status[b0 + done] = np.where(esc, ESCAPE, HIT)
                steps_out[b0 + done] = step
            move = alive[~absorbed]
            if move.size:
                u = buf[move, buf_at, :]
                dirs = _directions(u, dim)
                pos[move] += (cfg.shrink * d[~absorbed])[:, None] * dirs
            buf_at += 1
            alive = move
            step += 1
        if alive.size:
            ends[b0 + alive] = pos[alive]
            steps_out[b0 + alive] = cfg.max_steps
    return ends, status, steps_out


def _expand_buf(buf, alive, nb, block, n_u):
    full = np.zeros((nb, block, n_u))
    full[alive] = buf
    return full


# ---------------------------------------------------------------------------
# estimates
# ---------------------------------------------------------------------------

@dataclass
class HarmonicMeasureEstimate:
    """Leaf-resolved hit frequencies plus escape/unresolved/step-limit mass."""

    pole: np.ndarray
    n_walks: int
    leaf_counts: dict[int, int]
    escape: int
    unresolved: int
    step_limited: int
    hit_points: np.ndarray | None = None
    hit_leaves: np.ndarray | None = None
    eps_abs: float = 0.0

    def leaf_masses(self) -> dict[int, Fraction]:
        return {q: Frac(c, self.n_walks) for q, c in self.leaf_counts.items()}

    def as_tree_measure(self, tree: DyadicTree) -> TreeMeasure:
        masses = {q: Frac(0) for q in tree.leaves()}
        masses.update(self.leaf_masses())
        return TreeMeasure(tree, masses)

    def total_check(self) -> Fraction:
        s = sum(self.leaf_counts.values()) + self.escape + self.unresolved \
            + self.step_limited
        return Frac(s, self.n_walks)

    def se(self, p: float) -> float:
        return math.sqrt(max(p * (1 - p), 0.0) / self.n_walks)

    def mass_in_ball(self, x, r: float) -> tuple[float, float]:
        """Geometric hit mass within distance r of x, with its SE."""
        if self.hit_points is None:
            raise ValueError("estimate was built without keep_hits")
        ok = np.linalg.norm(self.hit_points - np.asarray(x, float), axis=1) <= r
        p = float(ok.sum()) / self.n_walks
        return p, self.se(p)


def _route_hits(sample: BoundarySample, tree: DyadicTree | None, hits,
                guard: float):
    """Vectorized nearest-atom leaf routing with the lowest-index tie rule."""
    if len(hits) == 0:
        return np.zeros(0, dtype=np.int64), 0
    kq = min(4, sample.count)
    d, idx = sample.tree().query(hits, k=kq)
    d = d.reshape(len(hits), -1)
    idx = idx.reshape(len(hits), -1)
    tie = np.abs(d - d[:, :1]) <= 1e-12 * np.maximum(d[:, :1], 1.0)
    atom = np.where(tie, idx, np.iinfo(np.int64).max).min(axis=1)
    unresolved = d[:, 0] > guard
    if tree is None:
        leaves = atom
    else:
        leaves = tree.assign[atom, tree.gen_index(tree.k_max)]
    leaves = np.where(unresolved, -1, leaves)
    return leaves, int(unresolved.sum())


def estimate_omega(oracle: DomainOracle, sample: BoundarySample,
                   x0, cfg: WoSConfig, tree: DyadicTree | None = None,
                   keep_hits: bool = True) -> HarmonicMeasureEstimate:
    """Harmonic measure estimate at leaf (or atom) resolution."""
    x0 = np.asarray(x0, dtype=float)
    eps = cfg.resolve_eps(sample)
    if float(oracle.delta(x0[None])[0]) <= eps:
        raise ValueError("pole too close to the boundary for this eps_abs")
    ends, status, _ = run_walks(oracle, x0, cfg, eps)
    hits = ends[status == HIT]
    guard = 4.0 * sample.spacing()["median"]
    leaves, unresolved = _route_hits(sample, tree, hits, guard)
    counts: dict[int, int] = {}
    for leaf in leaves[leaves >= 0]:
        counts[int(leaf)] = counts.get(int(leaf), 0) + 1
    return HarmonicMeasureEstimate(
        pole=x0, n_walks=cfg.n_walks, leaf_counts=counts,
        escape=int((status == ESCAPE).sum()), unresolved=unresolved,
        step_limited=int((status == LIMIT).sum()),
        hit_points=hits if keep_hits else None,
        hit_leaves=leaves if keep_hits else None, eps_abs=eps)


@dataclass
class RegionHarmonicMeasure:
    """Harmonic measure of a sawtooth-type region, split into the part on the
    true boundary (routed to tree leaves) and the part on region faces."""

    pole: np.ndarray
    n_walks: int
    leaf_masses: dict[int, Fraction]
    face_points: np.ndarray
    escape: int
    unresolved: int
    step_limited: int

    def mass_in_rect(self, marker) -> Fraction:
        if len(self.face_points) == 0:
            return Frac(0)
        return Frac(int(marker.contains(self.face_points).sum()), self.n_walks)

    def mass_in_ball_faces(self, x, r: float) -> Fraction:
        if len(self.face_points) == 0:
            return Frac(0)
        ok = np.linalg.norm(self.face_points - np.asarray(x, float), axis=1) <= r
        return Frac(int(ok.sum()), self.n_walks)


def estimate_omega_region(region_oracle, base_oracle: DomainOracle,
                          sample: BoundarySample, tree: DyadicTree,
                          x0, cfg: WoSConfig, boundary_collar: float,
                          exclude_leaves=None) -> RegionHarmonicMeasure:
    """Harmonic measure for a box-union region.

    A hit closer than boundary_collar to the true boundary is attributed to
    the nearest atom's leaf (the shared part of the two boundaries); other
    hits stay as raw face points.  Leaves in exclude_leaves (typically those
    under the removed family, where the region floor hovers near the true
    boundary but is not part of it) always count as face mass.
    """
    x0 = np.asarray(x0, dtype=float)
    eps = cfg.resolve_eps(sample)
    ends, status, _ = run_walks(region_oracle, x0, cfg, eps)
    hits = ends[status == HIT]
    near = base_oracle.delta(hits) <= boundary_collar if len(hits) else \
        np.zeros(0, dtype=bool)
    guard = 4.0 * sample.spacing()["median"] + boundary_collar
    leaves, unresolved = _route_hits(sample, tree, hits[near], guard)
    if exclude_leaves:
        excl = np.array([int(l) in exclude_leaves for l in leaves])
        near_idx = np.where(near)[0]
        near[near_idx[excl]] = False
        leaves = leaves[~excl]
    counts: dict[int, int] = {}
    for leaf in leaves[leaves >= 0]:
        counts[int(leaf)] = counts.get(int(leaf), 0) + 1
    masses = {q: Frac(c, cfg.n_walks) for q, c in counts.items()}
    return RegionHarmonicMeasure(
        pole=x0, n_walks=cfg.n_walks, leaf_masses=masses,
        face_points=hits[~near], escape=int((status == ESCAPE).sum()),
        unresolved=unresolved, step_limited=int((status == LIMIT).sum()))


def estimate_green(oracle: DomainOracle, sample: BoundarySample, x, y,
                   cfg: WoSConfig,
                   hits_from_y: np.ndarray | None = None) -> dict:
    """G(x,y) = E(x-y) - average of E(x - z) over the exit points z of walks
    from y.  Reuses a provided hit set when available."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.allclose(x, y):
        raise ValueError("Green function pole collision")
    n = sample.n
    if hits_from_y is None:
        eps = cfg.resolve_eps(sample)
        ends, status, _ = run_walks(oracle, y, cfg, eps)
        hits_from_y = ends[status != LIMIT]
    vals = fundamental_solution(x[None] - hits_from_y, n)
    g = float(fundamental_solution((x - y)[None], n)[0]) - float(vals.mean())
    se = float(vals.std(ddof=1)) / math.sqrt(len(vals))
    return {"value": g, "se": se, "n_hits": int(len(vals))}


# ---------------------------------------------------------------------------
# boundary-behavior diagnostics
# ---------------------------------------------------------------------------

def bourgain_doubling_check(oracle, sample, probes, cfg: WoSConfig,
                            c_factor: float = 0.1) -> dict:
    """Lower bounds omega^Y(Delta(x,r)) for Y near x, and doubling ratios
    omega^X(2 Delta)/omega^X(Delta) for X outside 4B."""
    bourgain = []
    doubling = []
    for i, probe in enumerate(probes):
        x, r = np.asarray(probe["x"], float), float(probe["r"])
        pcfg = replace(cfg, stream=f"{cfg.stream}/bourgain{i}")
        if "Y" in probe:
            est = estimate_omega(oracle, sample, probe["Y"], pcfg)
            p, se = est.mass_in_ball(x, r)
            bourgain.append({"x": x.tolist(), "r": r, "omega": p, "se": se})
        if "X" in probe:
            est = estimate_omega(oracle, sample, probe["X"], pcfg)
            p1, se1 = est.mass_in_ball(x, r)
            p2, se2 = est.mass_in_ball(x, 2 * r)
            if p1 > 0:
                doubling.append({"x": x.tolist(), "r": r, "ratio": p2 / p1,
                                 "se": (se1 + se2) / max(p1, 1e-12)})
    rep = {"bourgain": bourgain, "doubling": doubling, "c_factor": c_factor}
    if bourgain:
        rep["bourgain_inf"] = min(b["omega"] for b in bourgain)
    if doubling:
        rep["doubling_sup"] = max(d["ratio"] for d in doubling)
    return rep


def cfms_upsilon_check(oracle, sample, x0, r0, pole, ball_probes,
                       cfg: WoSConfig) -> dict:
    """Two-sided comparisons r^{n-1} G(X_Delta, X) vs omega^X(Delta) over
    probe balls with 2B inside B(x0, r0), for one exterior pole X."""
    pole = np.asarray(pole, dtype=float)
    est = estimate_omega(oracle, sample, pole, cfg)
    hits = est.hit_points
    n = sample.n
    rows = []
    for x, r in ball_probes:
        x = np.asarray(x, dtype=float)
        if np.linalg.norm(x - x0) + 2 * r > r0:
            continue
        cork = find_corkscrew(oracle, x, r)
        if not cork.found:
            continue
        g = estimate_green(oracle, sample, cork.point, pole, cfg,
                           hits_from_y=hits)
        p, se = est.mass_in_ball(x, r)
        if p <= 0 or g["value"] <= 0:
            rows.append({"x": x.tolist(), "r": r, "skipped": True})
            continue
        ratio = r ** (n - 1) * g["value"] / p
        rows.append({"x": x.tolist(), "r": r, "ratio": ratio,
                     "omega": p, "green": g["value"],
                     "rel_se": g["se"] / g["value"] + se / p})
    ratios = [row["ratio"] for row in rows if "ratio" in row]
    if not ratios:
        raise ValueError("no conclusive CFMS probes")
    return {"rows": rows, "upsilon_sup": max(ratios),
            "inv_inf": min(ratios), "band": (min(ratios), max(ratios))}


def comparison_poles_check(oracle, sample, x, r, pole_x, pole_y, z_probes,
                           delta_primes, cfg: WoSConfig,
                           kappa0: float | None = None) -> dict:
    """Green quotient stability over interior points of B_Delta and the
    poles comparison omega^{X_Delta}(D') vs omega^X(D')/omega^X(Delta)."""
    x = np.asarray(x, dtype=float)
    cork = find_corkscrew(oracle, x, r)
    ex, _, _ = run_walks(oracle, np.asarray(pole_x, float),
                         replace(cfg, stream=cfg.stream + "/px"),
                         cfg.resolve_eps(sample))
    ey, _, _ = run_walks(oracle, np.asarray(pole_y, float),
                         replace(cfg, stream=cfg.stream + "/py"),
                         cfg.resolve_eps(sample))
    gref_x = estimate_green(oracle, sample, cork.point, pole_x, cfg, ex)
    gref_y = estimate_green(oracle, sample, cork.point, pole_y, cfg, ey)
    ref = gref_x["value"] / gref_y["value"]
    rows = []
    for z in z_probes:
        gx = estimate_green(oracle, sample, z, pole_x, cfg, ex)
        gy = estimate_green(oracle, sample, z, pole_y, cfg, ey)
        if gy["value"] <= 0 or gx["value"] <= 0:
            rows.append({"z": list(map(float, z)), "skipped": True})
            continue
        rel = (gx["se"] / gx["value"] + gy["se"] / gy["value"] +
               gref_x["se"] / gref_x["value"] + gref_y["se"] / gref_y["value"])
        rows.append({"z": list(map(float, z)),
                     "quotient_over_ref": (gx["value"] / gy["value"]) / ref,
                     "rel_se": rel, "inconclusive": rel > 0.5})
    est_x = estimate_omega(oracle, sample, pole_x,
                           replace(cfg, stream=cfg.stream + "/wx"))
    est_c = estimate_omega(oracle, sample, cork.point,
                           replace(cfg, stream=cfg.stream + "/wc"))
    pole_rows = []
    base, base_se = est_x.mass_in_ball(x, r)
    for (xp, rp) in delta_primes:
        p_num, se_n = est_x.mass_in_ball(xp, rp)
        p_c, se_c = est_c.mass_in_ball(xp, rp)
        if base <= 0 or p_c <= 0:
            pole_rows.append({"x": list(map(float, xp)), "r": rp,
                              "skipped": True})
            continue
        ratio = (p_num / base) / p_c
        rel = se_n / max(p_num, 1e-12) + se_c / p_c + base_se / base
        pole_rows.append({"x": list(map(float, xp)), "r": rp, "ratio": ratio,
                          "rel_se": rel, "inconclusive": rel > 0.5})
    out = {"green_rows": rows, "poles_rows": pole_rows, "kappa0": kappa0,
           "corkscrew": cork.point.tolist()}
    qs = [r["quotient_over_ref"] for r in rows if "quotient_over_ref" in r]
    ps = [r["ratio"] for r in pole_rows if "ratio" in r]
    if qs:
        out["green_band"] = (min(qs), max(qs))
    if ps:
        out["poles_band"] = (min(ps), max(ps))
    return out


def annulus_partition(sample: BoundarySample, z, s: float, eps: float) -> dict:
    """Atom partition into annuli (5/4 + eps k) s <= |y-z| < (5/4 + eps(k+1)) s
    and the matching sphere shells, 0 <= k <= 1/(4 eps) - 1."""
    if not (0 < eps <= 0.25):
        raise ValueError("eps must lie in (0, 1/4]")
    z = np.asarray(z, dtype=float)
    d = np.linalg.norm(sample.points - z, axis=1)
    n_ann = max(1, int(math.floor(1.0 / (4.0 * eps) + 1e-12)))
    annuli = []
    shells = []
    for k in range(n_ann):
        lo = (1.25 + eps * k) * s
        hi = (1.25 + eps * (k + 1)) * s
        annuli.append(np.where((d >= lo) & (d < hi))[0])
        shells.append((1.25 + eps * (k + 0.5)) * s)
    return {"U": annuli, "S_radii": shells, "n": n_ann}


def weak_ainfty_diagnostics(oracle, sample, tree, x, r, cfg: WoSConfig,
                            depth: int = 2, eta_grid=(0.5, 0.7, 0.9),
                            eps_list=(0.1, 0.01), q_list=(1.5, 2.0, 3.0),
                            pole=None) -> dict:
    """The (eta, c0) table, the annulus-criterion constant, and normalized
    reverse-Holder functionals of the estimated density on Delta(x, r)."""
    x = np.asarray(x, dtype=float)
    if pole is None:
        cork = find_corkscrew(oracle, x, r)
        if not cork.found:
            raise ValueError("no corkscrew pole for the diagnostic ball")
        pole = cork.point
    est = estimate_omega(oracle, sample, pole, cfg, tree=tree)

    # cells: generation-k cubes meeting Delta; masses over whole cells
    in_ball = np.where(np.linalg.norm(sample.points - x, axis=1) <= r)[0]
    k_cell = min(tree.k_max,
                 max(tree.k_min,
                     -int(math.floor(math.log2(max(r, 1e-12)))) + depth))
    gi = tree.gen_index(k_cell)
    cells = np.unique(tree.assign[in_ball, gi])
    sig = np.array([tree.sigma(int(c)) for c in cells])
    sigma_d = float(sig.sum())
    hits_w = _hit_mass_per_cell(est, tree, cells, k_cell)

    c0_table = {}
    for eta in eta_grid:
        c0_table[float(eta)] = _greedy_min_mass(sig, hits_w, eta * sigma_d)

    # annulus criterion: smallest C_eps with
    # omega(D') <= eps omega(2D') + C_eps omega(A)
    ann = {}
    if est.hit_points is not None:
        for eps in eps_list:
            worst = 0.0
            for frac in (0.25, 0.4):
                s = frac * r / 2
                z = x
                p1, _ = est.mass_in_ball(z, s)
                p2, _ = est.mass_in_ball(z, 2 * s)
                in2 = np.where(np.linalg.norm(sample.points - z, axis=1)
                               <= 2 * s)[0]
                if len(in2) == 0:
                    continue
                cl2 = np.unique(tree.assign[in2, gi])
                s2 = np.array([tree.sigma(int(c)) for c in cl2])
                w2 = _hit_mass_per_cell(est, tree, cl2, k_cell)
                a_mass = _greedy_min_mass(s2, w2, 0.9 * s2.sum())
                if a_mass and a_mass["upper"] > 0:
                    need = max(p1 - eps * p2, 0.0) / a_mass["upper"]
                    worst = max(worst, need)
            ann[float(eps)] = worst
    rh = {}
    for q in q_list:
        dens = hits_w / np.maximum(sig, 1e-300)
        rh[float(q)] = float(sigma_d ** (q - 1) * np.sum(sig * dens ** q))
    return {"pole": list(map(float, pole)), "c0_table": c0_table,
            "annulus_C": ann, "rh": rh, "sigma_delta": sigma_d,
            "escape_mass": est.escape / est.n_walks,
            "n_cells": int(len(cells)), "cell_generation": k_cell,
            "estimate": est}


def _hit_mass_per_cell(est, tree, cells, k_cell) -> np.ndarray:
    """Estimated measure of each generation-k_cell cube (leaf roll-up)."""
    out = np.zeros(len(cells))
    cell_of = {int(c): i for i, c in enumerate(cells)}
    for leaf, m in est.leaf_masses().items():
        i = cell_of.get(int(tree.ancestor_at(leaf, k_cell)))
        if i is not None:
            out[i] += float(m)
    return out


def _greedy_min_mass(sig, w, threshold) -> dict | None:
    """Bracketed min of sum(w) over cell unions with sum(sig) >= threshold."""
    if sig.sum() < threshold or len(sig) == 0:
        return None
    order = np.argsort(np.where(sig > 0, w / np.maximum(sig, 1e-300), np.inf))
    acc_s = 0.0
    upper = 0.0
    lower = 0.0
    for i in order:
        if acc_s >= threshold:
            break
        take = min(sig[i], threshold - acc_s)
        lower += w[i] * (take / sig[i] if sig[i] > 0 else 0.0)
        upper += w[i]
        acc_s += sig[i]
    return {"lower": float(lower), "upper": float(upper)}
