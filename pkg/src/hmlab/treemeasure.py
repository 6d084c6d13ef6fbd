"""Measures on dyadic trees: projections, doubling, CZ decomposition, and
dyadic A-infinity diagnostics with constructive exponent extraction.

Masses are stored as exact rationals (floats convert exactly, Monte-Carlo
counts are integers over the walk total), so every identity the algorithms
promise -- projection idempotence, mass preservation, CZ average bounds,
corona bookkeeping -- holds exactly, not to roundoff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

Frac = Fraction


def as_frac(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    return Fraction(float(x))


class TreeMeasure:
    """Additive nonnegative measure on the leaves of a cube tree."""

    def __init__(self, tree, leaf_masses: dict[int, Fraction]):
        self.tree = tree
        self.leaf = {int(q): as_frac(m) for q, m in leaf_masses.items()}
        if any(m < 0 for m in self.leaf.values()):
            raise ValueError("negative leaf mass")
        self._cube: dict[int, Fraction] = {}

    @classmethod
    def from_leaf_array(cls, tree, masses) -> "TreeMeasure":
        leaves = tree.leaves()
        if len(masses) != len(leaves):
            raise ValueError("mass array length != number of leaves")
        return cls(tree, {q: as_frac(m) for q, m in zip(leaves, masses)})

    def mass(self, q: int) -> Fraction:
        q = int(q)
        if q in self._cube:
            return self._cube[q]
        ch = self.tree.children_of(q)
        m = self.leaf.get(q, Frac(0)) if not ch else sum(
            (self.mass(c) for c in ch), Frac(0))
        self._cube[q] = m
        return m

    def set_mass(self, F) -> Fraction:
        """Mass of a union of leaves (or disjoint cubes)."""
        return sum((self.mass(q) for q in F), Frac(0))

    def total(self) -> Fraction:
        return sum((self.mass(r) for r in getattr(self.tree, "roots")), Frac(0))

    def as_float(self, q: int) -> float:
        return float(self.mass(q))

    def copy_with(self, leaf_masses: dict[int, Fraction]) -> "TreeMeasure":
        return TreeMeasure(self.tree, leaf_masses)


def leaves_under(tree, q: int) -> list[int]:
    cache = getattr(tree, "_leaves_cache", None)
    if cache is None:
        cache = {}
        tree._leaves_cache = cache
    if q not in cache:
        cache[q] = [c for c in tree.descendants(q) if tree.is_leaf(c)]
    return cache[q]


def check_disjoint(tree, family) -> None:
    fam = list(family)
    for i, a in enumerate(fam):
        for b in fam[i + 1:]:
            if tree.contains_cube(a, b) or tree.contains_cube(b, a):
                raise ValueError(f"family cubes {a} and {b} are nested")


# ---------------------------------------------------------------------------
# projection operator
# ---------------------------------------------------------------------------

def project_pf(mu: TreeMeasure, sigma: TreeMeasure, family) -> TreeMeasure:
    """Projection adapted to a disjoint family: outside the family nothing
    changes; inside each family cube the mass is redistributed
    sigma-proportionally.  Exact at leaf level."""
    tree = mu.tree
    check_disjoint(tree, family)
    new = dict(mu.leaf)
    for qj in family:
        sq = sigma.mass(qj)
        if sq == 0:
            raise ValueError(f"sigma vanishes on family cube {qj}")
        mq = mu.mass(qj)
        for leaf in leaves_under(tree, qj):
            new[leaf] = sigma.mass(leaf) * mq / sq
    return mu.copy_with(new)


# ---------------------------------------------------------------------------
# doubling
# ---------------------------------------------------------------------------

@dataclass
class DoublingReport:
    constant: float
    location: tuple[int, int] | None
    finite: bool

    def as_fraction(self) -> Fraction | None:
        return self._frac

    _frac: Fraction | None = field(default=None, repr=False)


def doubling_constant(mu: TreeMeasure, tree, q0: int) -> DoublingReport:
    """Exact sup over parent/child pairs in the Carleson family of q0."""
    best: Fraction | None = None
    loc = None
    for q in tree.descendants(q0):
        for ch in tree.children_of(q):
            mc = mu.mass(ch)
            if mc == 0:
                return DoublingReport(math.inf, (q, ch), False)
            r = mu.mass(q) / mc
            if best is None or r > best:
                best, loc = r, (q, ch)
    if best is None:
        return DoublingReport(1.0, None, True, _frac=Frac(1))
    return DoublingReport(float(best), loc, True, _frac=best)


# ---------------------------------------------------------------------------
# dyadic maximal / Calderon-Zygmund decomposition
# ---------------------------------------------------------------------------

def _average(f: dict[int, Fraction], omega: TreeMeasure, tree, q: int) -> Fraction:
    num = sum((f[l] * omega.mass(l) for l in leaves_under(tree, q)), Frac(0))
    den = omega.mass(q)
    if den == 0:
        return Frac(0)
    return num / den


def dyadic_maximal_cz(f: dict[int, Fraction], omega: TreeMeasure, tree,
                      q0: int, lam) -> tuple[list[int], dict]:
    """Maximal dyadic cubes in q0 with omega-average of f above lam.

    Requires lam >= average over q0.  Returns the stopping family and a
    report verifying the decomposition properties exactly.
    """
    lam = as_frac(lam)
    f = {int(k): as_frac(v) for k, v in f.items()}
    avg0 = _average(f, omega, tree, q0)
    if lam < avg0:
        raise ValueError(f"lambda {float(lam):.6g} below the q0 average "
                         f"{float(avg0):.6g}")
    family: list[int] = []

    def descend(q):
        for ch in tree.children_of(q):
            if omega.mass(ch) == 0:
                continue
            if _average(f, omega, tree, ch) > lam:
                family.append(ch)
            else:
                descend(ch)

    descend(q0)

    # exact verification
    selected_leaves = set()
    for qj in family:
        selected_leaves.update(leaves_under(tree, qj))
    out_ok = all(f[l] <= lam for l in leaves_under(tree, q0)
                 if l not in selected_leaves and omega.mass(l) > 0)
    cw = doubling_constant(omega, tree, q0)
    aver_ok = True
    for qj in family:
        a = _average(f, omega, tree, qj)
        if not (a > lam):
            aver_ok = False
        if cw.finite and cw.as_fraction() is not None:
            if a > cw.as_fraction() * lam:
                aver_ok = False
    maximal_ok = all(
        _average(f, omega, tree, tree.parent_of(qj)) <= lam
        for qj in family if tree.parent_of(qj) is not None and qj != q0)
    report = {"out_ok": bool(out_ok), "aver_ok": bool(aver_ok),
              "maximal_ok": bool(maximal_ok), "C_omega": cw.constant}
    return family, report


# ---------------------------------------------------------------------------
# A-infinity profile
# ---------------------------------------------------------------------------

def _frontier_at_depth(tree, q: int, depth: int) -> list[int]:
    """Descendants exactly `depth` generations below q; earlier leaves stand
    in for their missing subtrees."""
    out, stack = [], [(q, 0)]
    while stack:
        node, d = stack.pop()
        ch = tree.children_of(node)
        if d == depth or not ch:
            out.append(node)
        else:
            stack.extend((c, d + 1) for c in ch)
    return sorted(out)


def ainfty_profile(w1: TreeMeasure, w2: TreeMeasure, tree, q: int, depth: int,
                   eps_grid, brute_limit: int = 12) -> list[dict]:
    """For each eps: min of w1(F)/w1(q) over unions F of depth-`depth` cells
    with w2(F) >= (1-eps) w2(q).

    Exact subset minimization is knapsack-hard; beyond `brute_limit` cells the
    result is a bracket: greedy prefix (upper bound, a feasible F) and the
    fractional-relaxation value (lower bound).
    """
    cells = _frontier_at_depth(tree, q, depth)
    a1 = [w1.mass(c) for c in cells]
    a2 = [w2.mass(c) for c in cells]
    t1, t2 = w1.mass(q), w2.mass(q)
    if t1 == 0 or t2 == 0:
        raise ValueError("both measures must be positive on q")
    order = sorted(range(len(cells)),
                   key=lambda i: (a1[i] / a2[i] if a2[i] > 0 else Frac(10 ** 18), i))
    out = []
    for eps in eps_grid:
        thr = (Frac(1) - as_frac(eps)) * t2
        # fractional relaxation: exact lower bound
        acc2, acc1 = Frac(0), Frac(0)
        lower = Frac(0)
        for i in order:
            if acc2 >= thr:
                break
            take2 = min(a2[i], thr - acc2)
            frac = take2 / a2[i] if a2[i] > 0 else Frac(0)
            acc1 += a1[i] * frac
            acc2 += take2
        lower = acc1 / t1
        # greedy prefix: feasible, upper bound
        acc2, acc1 = Frac(0), Frac(0)
        for i in order:
            if acc2 >= thr:
                break
            acc1 += a1[i]
            acc2 += a2[i]
        upper = acc1 / t1
        entry = {"eps": float(eps), "lower": float(lower), "upper": float(upper),
                 "lower_frac": lower, "upper_frac": upper, "exact": None}
        if len(cells) <= brute_limit:
            entry["exact"] = float(_brute_min(a1, a2, t1, thr))
        out.append(entry)
    return out


def _brute_min(a1, a2, t1, thr) -> Fraction:
    n = len(a1)
    best: Fraction | None = None
    for mask in range(1 << n):
        s2 = Frac(0)
        s1 = Frac(0)
        m = mask
        i = 0
        while m:
            if m & 1:
                s1 += a1[i]
                s2 += a2[i]
            m >>= 1
            i += 1
        if s2 >= thr and (best is None or s1 < best):
            best = s1
    return (best if best is not None else Frac(0)) / t1


# ---------------------------------------------------------------------------
# constructive A-infinity exponents (Coifman-Fefferman, dyadic local form)
# ---------------------------------------------------------------------------

def cf_dyadic_exponents(w1: TreeMeasure, w2: TreeMeasure, tree, q0: int,
                        alpha: float, c0: float = 2.0, theta0: float = 1.0,
                        n_samples: int = 200, seed: int = 0) -> dict:
    """Extract a reverse-Holder exponent for h = dw1/dw2 constructively.

    From the comparison hypothesis w2(F)/w2(Q) <= c0 (w1(F)/w1(Q))^theta0 the
    weak implication holds with beta = 1 - ((1-alpha)/c0)^(1/theta0); the CZ
    iteration at levels tau^k lambda0 (tau = C_{w2}/alpha) then yields the
    reverse-Holder estimate with any eps < -log(beta)/log(tau), hence the
    comparability exponent theta1 = eps/(1+eps).
    """
    alpha = float(alpha)
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0,1)")
    beta = 1.0 - ((1.0 - alpha) / c0) ** (1.0 / theta0)
    cw2 = doubling_constant(w2, tree, q0)
    if not cw2.finite:
        raise ValueError("w2 is not dyadically doubling on q0")
    tau = cw2.as_fraction() / as_frac(alpha)

    rng = np.random.default_rng(seed)
    descendants = tree.descendants(q0)

    def random_pair():
        q = int(descendants[rng.integers(len(descendants))])
        ls = leaves_under(tree, q)
        mask = rng.random(len(ls)) < rng.random()
        F = [l for l, m in zip(ls, mask) if m]
        return q, F

    # empirical check of the weak implication
    witness = None
    for _ in range(n_samples):
        q, F = random_pair()
        if w2.mass(q) == 0 or w1.mass(q) == 0:
            continue
        r2 = w2.set_mass(F) / w2.mass(q)
        r1 = w1.set_mass(F) / w1.mass(q)
        if r2 < as_frac(alpha) and not r1 < as_frac(beta):
            witness = {"Q": q, "F": F, "r1": float(r1), "r2": float(r2)}
            break

    # CZ iteration on the density h = dw1/dw2
    excluded_mass = Frac(0)
    h = {}
    for l in leaves_under(tree, q0):
        m2 = w2.mass(l)
        if m2 == 0:
            excluded_mass += w1.mass(l)
            h[l] = Frac(0)
        else:
            h[l] = w1.mass(l) / m2
    lam0 = w1.mass(q0) / w2.mass(q0)
    levels = []
    level_ok = True
    prev_w1 = w1.mass(q0)
    prev_w2 = w2.mass(q0)
    lam = lam0
    for k in range(24):
        fam, _rep = dyadic_maximal_cz(h, w2, tree, q0, lam)
        e_w1 = sum((w1.mass(qj) for qj in fam), Frac(0))
        e_w2 = sum((w2.mass(qj) for qj in fam), Frac(0))
        levels.append({"k": k, "lambda": float(lam), "w1_Ek": float(e_w1),
                       "w2_Ek": float(e_w2)})
        if k > 0:
            if not (e_w1 < as_frac(beta) * prev_w1 or prev_w1 == 0):
                level_ok = False
            if not (e_w2 < as_frac(alpha) * prev_w2 or prev_w2 == 0):
                level_ok = False
        if e_w2 == 0:
            break
        prev_w1, prev_w2 = e_w1, e_w2
        lam = lam * tau

    eps_max = -math.log(beta) / math.log(float(tau))
    eps = 0.5 * eps_max
    te = float(tau) ** eps
    c1 = (1.0 + te / (1.0 - te * beta)) ** (1.0 / (1.0 + eps))
    theta1 = eps / (1.0 + eps)

    # validate the comparability conclusion on fresh samples
    violations = []
    for _ in range(n_samples):
        q, F = random_pair()
        if w1.mass(q) == 0 or w2.mass(q) == 0:
            continue
        r1 = float(w1.set_mass(F) / w1.mass(q))
        r2 = float(w2.set_mass(F) / w2.mass(q))
        if r1 > c1 * r2 ** theta1 + 1e-12:
            violations.append({"Q": q, "r1": r1, "r2": r2})

    return {"beta": beta, "tau": float(tau), "tau_frac": tau, "eps": eps,
            "eps_max": eps_max, "C1": c1, "theta1": theta1,
            "implication_witness": witness, "cz_levels": levels,
            "cz_decay_ok": level_ok, "violations": violations,
            "excluded_w1_mass": float(excluded_mass)}


# ---------------------------------------------------------------------------
# sawtooth measure nu and the projection comparison
# ---------------------------------------------------------------------------

def build_nu(omega: TreeMeasure, omega_star, markers, family, q0: int,
             sigma: TreeMeasure | None = None) -> tuple[TreeMeasure, dict]:
    """Comparison measure on the tree of the base domain.

    omega_star is a region harmonic-measure estimate carrying (a) masses on
    the tree leaves for hits on the true boundary and (b) raw hit points on
    the region faces.  Outside the family the measure is the boundary part of
    omega_star; inside a family cube it is omega-proportional with total mass
    omega_star(P_j), the face marker of that cube.
    """
    tree = omega.tree
    check_disjoint(tree, family)
    star_leaf = {int(k): as_frac(v) for k, v in omega_star.leaf_masses.items()}
    new: dict[int, Fraction] = {}
    for leaf in leaves_under(tree, q0):
        new[leaf] = star_leaf.get(leaf, Frac(0))
    pj_mass: dict[int, Fraction] = {}
    for qj in family:
        if qj not in markers.p_markers:
            raise ValueError(f"no face marker for family cube {qj}")
        pj = markers.p_markers[qj]
        pj_mass[qj] = omega_star.mass_in_rect(pj)
        wq = omega.mass(qj)
        if wq == 0:
            raise ValueError(f"omega vanishes on family cube {qj}")
        for leaf in leaves_under(tree, qj):
            new[leaf] = omega.mass(leaf) * pj_mass[qj] / wq
    nu = TreeMeasure(tree, new)

    # the projection of nu must agree with its omega-free closed form
    report = {"pj_mass": {int(k): float(v) for k, v in pj_mass.items()}}
    if sigma is not None:
        proj = project_pf(nu, sigma, family)
        ok = True
        for qj in family:
            for leaf in leaves_under(tree, qj):
                direct = sigma.mass(leaf) * pj_mass[qj] / sigma.mass(qj)
                if proj.leaf.get(leaf, Frac(0)) != direct:
                    ok = False
        report["projection_identity_exact"] = ok
    return nu, report


def sawtooth_lemma_check(omega: TreeMeasure, nu: TreeMeasure,
                         sigma: TreeMeasure, family, q0: int,
                         pairs) -> dict:
    """Evaluate both comparison chains between the projected measures.

    pairs: iterable of (Q, F) with F a list of leaves under Q.  Reports the
    smallest admissible exponent theta and constant making
    (P_F omega ratio)^theta <= C * (P_F nu ratio) and the reverse one-sided
    bound hold on every conclusive pair; Case-1 pairs (Q inside a family
    cube) are verified as exact equalities.
    """
    tree = omega.tree
    p_omega = project_pf(omega, sigma, family)
    p_nu = project_pf(nu, sigma, family)
    case1_exact = True
    ratios = []
    inconclusive = 0
    for q, F in pairs:
        lw, ln_ = p_omega.mass(q), p_nu.mass(q)
        if lw == 0 or ln_ == 0:
            inconclusive += 1
            continue
        L = p_omega.set_mass(F) / lw
        R = p_nu.set_mass(F) / ln_
        in_family = any(tree.contains_cube(qj, q) for qj in family)
        if in_family:
            expect = sigma.set_mass(F) / sigma.mass(q)
            if L != expect or R != expect:
                case1_exact = False
        if (L == 0) != (R == 0):
            inconclusive += 1
            continue
        if L > 0 and R > 0:
            ratios.append((float(L), float(R)))
    if not ratios:
        raise ValueError("no conclusive pairs")
    c_right = max(r / l for l, r in ratios)
    theta = 0.0
    for l, r in ratios:
        if l < 1.0:
            bound = math.log(min(c_right * r, 1.0)) / math.log(l)
            theta = max(theta, bound)
    theta = max(theta, 1e-9)
    both_hold = all(l ** theta <= c_right * r * (1 + 1e-12) and
                    r <= c_right * l * (1 + 1e-12) for l, r in ratios)
    return {"theta": theta, "C": c_right, "case1_exact": case1_exact,
            "n_pairs": len(ratios), "inconclusive": inconclusive,
            "both_hold": both_hold}
