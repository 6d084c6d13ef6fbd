"""Tree random walk, corona stopping time, and the extrapolation induction.

The downward random walk moves from a cube to each of its children with equal
probability.  The potential beta(Q') sums alpha_Q along ancestors weighted by
arrival probabilities; the corona family collects the maximal cubes where
beta exceeds twice the bookkeeping threshold.  Everything is exact rational
arithmetic on trees up to depth 12 (stopping-rule ties must be reproducible);
deeper trees fall back to floats with a reported error allowance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .treemeasure import Frac, TreeMeasure, as_frac, leaves_under

RATIONAL_DEPTH_LIMIT = 12


def tree_depth(tree, q0: int) -> int:
    return max(tree.k_of(q) for q in tree.descendants(q0)) - tree.k_of(q0)


def walk_probability(tree, q: int, qq: int) -> Fraction:
    """Probability that the downward walk from q arrives at qq."""
    if q == qq:
        return Frac(1)
    if not tree.contains_cube(q, qq):
        return Frac(0)
    p = Frac(1)
    cur = qq
    while cur != q:
        parent = tree.parent_of(cur)
        p /= len(tree.children_of(parent))
        cur = parent
    return p


@dataclass
class DiscreteCarlesonMeasure:
    """Nonnegative coefficients alpha_Q with lazily cached subtree sums."""

    tree: object
    alpha: dict[int, Fraction]
    _subtree: dict[int, Fraction] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.alpha = {int(q): as_frac(a) for q, a in self.alpha.items()}
        if any(a < 0 for a in self.alpha.values()):
            raise ValueError("alpha coefficients must be nonnegative")

    def a(self, q: int) -> Fraction:
        return self.alpha.get(int(q), Frac(0))

    def mass_subtree(self, q: int) -> Fraction:
        """m(D_Q), computed bottom-up and cached (additivity exact)."""
        q = int(q)
        if q not in self._subtree:
            self._subtree[q] = self.a(q) + sum(
                (self.mass_subtree(c) for c in self.tree.children_of(q)), Frac(0))
        return self._subtree[q]

    def mass(self, cubes) -> Fraction:
        return sum((self.a(q) for q in cubes), Frac(0))

    def carleson_norm(self, sigma: TreeMeasure, q0: int) -> Fraction:
        best = Frac(0)
        for q in self.tree.descendants(q0):
            s = sigma.mass(q)
            if s > 0:
                best = max(best, self.mass_subtree(q) / s)
        return best

    def restrict_to_sawtooth(self, family) -> "DiscreteCarlesonMeasure":
        """m_F: drop every coefficient inside the family cubes."""
        removed = set()
        for qj in family:
            removed.update(self.tree.descendants(qj))
        alpha = {q: a for q, a in self.alpha.items() if q not in removed}
        return DiscreteCarlesonMeasure(self.tree, alpha)


def beta_potential(tree, m: DiscreteCarlesonMeasure, q0: int) -> dict[int, Fraction]:
    """beta(Q') = sum over q0 >= Q >= Q' of P(Q,Q') alpha_Q, by the top-down
    recursion beta(child) = alpha(child) + beta(Q)/#children(Q)."""
    beta: dict[int, Fraction] = {q0: m.a(q0)}
    stack = [q0]
    while stack:
        q = stack.pop()
        ch = tree.children_of(q)
        if not ch:
            continue
        share = beta[q] / len(ch)
        for c in ch:
            beta[c] = m.a(c) + share
            stack.append(c)
    return beta


def beta_potential_pathsum(tree, m: DiscreteCarlesonMeasure, q0: int,
                           q: int) -> Fraction:
    """Independent evaluation of beta by explicit ancestor path sums."""
    total = Frac(0)
    cur = q
    while True:
        total += walk_probability(tree, cur, q) * m.a(cur)
        if cur == q0:
            break
        cur = tree.parent_of(cur)
    return total


@dataclass
class CoronaResult:
    family: list[int]
    bad: list[int]
    sawtooth_norm: Fraction
    bad_fraction: Fraction
    sigma_q0: Fraction
    trivial_branch: bool


def corona_decompose(tree, m: DiscreteCarlesonMeasure, sigma: TreeMeasure,
                     q0: int, a, b) -> CoronaResult:
    """Stopping-time corona decomposition below q0.

    Requires m(D_q0) <= (a+b) sigma(q0).  Selects the maximal cubes with
    beta(Q) > 2 b sigma(Q) (strict: ties are not selected); the bad set
    collects the selected cubes whose short subtree mass exceeds a sigma(Q).
    """
    a, b = as_frac(a), as_frac(b)
    if b <= 0:
        raise ValueError("b must be positive")
    s0 = sigma.mass(q0)
    if m.mass_subtree(q0) > (a + b) * s0:
        raise ValueError("corona precondition m(D_q0) <= (a+b) sigma(q0) fails")

    if m.a(q0) > b * s0:
        # trivial branch: the top coefficient alone carries the excess
        res = CoronaResult([q0], [], Frac(0), Frac(0), s0, True)
        return res

    beta = beta_potential(tree, m, q0)
    family: list[int] = []

    def select(q):
        if beta[q] > 2 * b * sigma.mass(q):
            family.append(q)
            return
        for c in tree.children_of(q):
            select(c)

    select(q0)

    bad = [qj for qj in family
           if m.mass(tree.descendants_short(qj)) > a * sigma.mass(qj)]
    bad_sigma = sum((sigma.mass(qj) for qj in bad), Frac(0))
    mf = m.restrict_to_sawtooth(family)
    norm = mf.carleson_norm(sigma, q0)
    return CoronaResult(family, bad, norm, bad_sigma / s0, s0, False)


def selection_split(tree, sigma: TreeMeasure, family, q: int, fset,
                    eta_tilde, m0, b) -> dict:
    """Split of q into out-of-family mass and well-covered family cubes.

    fset is a set of leaves under q with sigma(fset) >= (1-eta) sigma(q) for
    some eta <= eta1 = eta_tilde/2 * (1 - (m0+b)/(m0+2b)).  Returns E0 (the
    leaves outside the family), the subfamily F1 of cubes with
    sigma(fset inside) >= (1-eta_tilde) sigma, and the exact check of the
    guarantee sigma(E0 union G1) >= eta1 sigma(q).
    """
    eta_tilde, m0, b = as_frac(eta_tilde), as_frac(m0), as_frac(b)
    theta0 = (m0 + b) / (m0 + 2 * b)
    eta1 = eta_tilde / 2 * (1 - theta0)
    sq = sigma.mass(q)
    fset = set(fset)
    s_f = sigma.set_mass(fset)
    if s_f < (1 - eta1) * sq:
        raise ValueError("selection precondition sigma(F) >= (1-eta1) sigma(Q) fails")
    fam_in_q = [qj for qj in family if tree.contains_cube(q, qj)]
    covered = set()
    for qj in fam_in_q:
        covered.update(leaves_under(tree, qj))
    e0 = [l for l in leaves_under(tree, q) if l not in covered]
    f1, b1 = [], []
    for qj in fam_in_q:
        inside = [l for l in leaves_under(tree, qj) if l in fset]
        if sigma.set_mass(inside) >= (1 - eta_tilde) * sigma.mass(qj):
            f1.append(qj)
        else:
            b1.append(qj)
    lhs = sigma.set_mass(e0) + sum((sigma.mass(qj) for qj in f1), Frac(0))
    return {"E0": e0, "F1": f1, "B1": b1, "eta1": eta1,
            "theta0": theta0, "guarantee_holds": bool(lhs >= eta1 * sq),
            "lhs_over_sigma": lhs / sq if sq > 0 else Frac(0)}


def pigeonhole_child(tree, m: DiscreteCarlesonMeasure, sigma: TreeMeasure,
                     qj: int, a) -> int:
    """First child (by index) with m(D_child) <= a sigma(child).

    Exists whenever m(D_qj \\ {qj}) <= a sigma(qj); a missing child flags a
    data bug, not a boundary case.
    """
    a = as_frac(a)
    for ch in tree.children_of(qj):
        if m.mass_subtree(ch) <= a * sigma.mass(ch):
            return ch
    raise AssertionError(
        f"pigeonhole failed below cube {qj}: short mass "
        f"{float(m.mass(tree.descendants_short(qj))):.6g} vs "
        f"a*sigma = {float(a * sigma.mass(qj)):.6g}")


# ---------------------------------------------------------------------------
# extrapolation induction
# ---------------------------------------------------------------------------

@dataclass
class LedgerLevel:
    a: float
    eta_a: float
    C_a: float
    status: str
    n_checked: int
    witnesses: list = field(default_factory=list)


@dataclass
class InductionLedger:
    levels: list[LedgerLevel]
    b: float
    k: int
    M0: float
    gamma: float
    depth: int

    def all_pass(self) -> bool:
        return all(l.status == "pass" for l in self.levels)

    def to_dict(self) -> dict:
        return {"b": self.b, "k": self.k, "M0": self.M0, "gamma": self.gamma,
                "depth": self.depth,
                "levels": [{"a": l.a, "eta_a": l.eta_a, "C_a": l.C_a,
                            "status": l.status, "n_checked": l.n_checked,
                            "witnesses": l.witnesses} for l in self.levels]}


class _WorstFTable:
    """Per-cube sorted cells with prefix sums: the omega/sigma order never
    changes across induction levels, only the mass threshold does."""

    def __init__(self, omega: TreeMeasure, sigma: TreeMeasure, tree, q0: int,
                 depth: int):
        from .treemeasure import _frontier_at_depth
        self.data = {}
        for q in tree.descendants(q0):
            cells = _frontier_at_depth(tree, q, depth)
            s = [sigma.mass(c) for c in cells]
            w = [omega.mass(c) for c in cells]
            sq, wq = sigma.mass(q), omega.mass(q)
            if sq == 0 or wq == 0:
                self.data[q] = None
                continue
            order = sorted(range(len(cells)),
                           key=lambda i: (w[i] / s[i] if s[i] > 0
                                          else Frac(10 ** 18), i))
            cum_s, cum_w = [Frac(0)], [Frac(0)]
            for i in order:
                cum_s.append(cum_s[-1] + s[i])
                cum_w.append(cum_w[-1] + w[i])
            self.data[q] = (cells, order, s, w, cum_s, cum_w, sq, wq)

    def worst(self, q: int, eta: Fraction):
        """Bracketed min of omega(F)/omega(Q) over cell unions with
        sigma(F) >= (1-eta) sigma(Q): (lower, upper, witness_cells)."""
        entry = self.data.get(q)
        if entry is None:
            return None
        cells, order, s, w, cum_s, cum_w, sq, wq = entry
        thr = (1 - eta) * sq
        # first prefix reaching the threshold
        lo_i, hi_i = 0, len(order)
        while lo_i < hi_i:
            mid = (lo_i + hi_i) // 2
            if cum_s[mid] >= thr:
                hi_i = mid
            else:
                lo_i = mid + 1
        j = lo_i
        upper = cum_w[j] / wq
        if j == 0:
            lower = Frac(0)
        else:
            i_last = order[j - 1]
            short = thr - cum_s[j - 1]
            frac = short / s[i_last] if s[i_last] > 0 else Frac(0)
            lower = (cum_w[j - 1] + w[i_last] * frac) / wq
        chosen = [cells[i] for i in order[:j]]
        return lower, upper, chosen


def extrapolation_verify(tree, m: DiscreteCarlesonMeasure, sigma: TreeMeasure,
                         omega: TreeMeasure, m0_norm, gamma, depth: int = 3,
                         q0: int | None = None, base_oracle=None,
                         eta0: float = 0.5,
                         mechanics_per_level: int = 8) -> InductionLedger:
    """Run the induction schedule a = 0, b, 2b, ..., kb empirically.

    b is chosen so that the corona sawtooth bound C*b equals gamma, with
    C = 2 (1 + C_sigma) from the stopping-time proof.  At each level the
    driver checks H(a) on every cube with m(D_Q) <= a sigma(Q): it evaluates
    the worst admissible F at the given cell depth (bracketed), and exercises
    the proof mechanics (corona + selection + pigeonhole + base oracle on the
    resulting sawtooth) on a deterministic per-level subsample of cubes.
    The base oracle receives (Q, family, fset, eps) and must return the
    measured projected ratio; when omitted, the driver computes the projected
    ratio from the supplied measures directly.
    """
    if q0 is None:
        q0 = tree.roots[0] if hasattr(tree, "roots") else 0
    m0_norm, gamma = as_frac(m0_norm), as_frac(gamma)
    if m.carleson_norm(sigma, q0) > m0_norm:
        raise ValueError("Carleson norm exceeds the stated M0")
    cs = _dyadic_doubling_fraction(sigma, tree, q0)
    c_corona = 2 * (1 + cs)
    b = gamma / c_corona
    k = int(math.ceil(m0_norm / b))

    if base_oracle is None:
        def base_oracle(q, family, fset, eps):
            from .treemeasure import project_pf
            pw = project_pf(omega, sigma, family) if family else omega
            if pw.mass(q) == 0:
                return Frac(0)
            return pw.set_mass(fset) / pw.mass(q)

    table = _WorstFTable(omega, sigma, tree, q0, depth)
    fine_table = _WorstFTable(omega, sigma, tree, q0, 10 ** 6)
    theta0 = (m0_norm + b) / (m0_norm + 2 * b)
    levels: list[LedgerLevel] = []
    eta_prev = as_frac(eta0)
    c_prev: Fraction | None = None

    for step in range(k + 1):
        a = step * b
        if step == 0:
            eta_a = eta_prev
        else:
            # eta_{a+b} = eta_a (1-theta0) / (4 C_sigma^2), by the selection
            # and pigeonhole bookkeeping
            eta_a = eta_prev * (1 - theta0) / (4 * cs * cs)
        witnesses = []
        worst_upper = Frac(0)
        n_checked = 0
        n_mech = 0
        status = "pass"
        for q in tree.descendants(q0):
            if m.mass_subtree(q) > a * sigma.mass(q):
                continue
            got = table.worst(q, eta_a)
            if got is None:
                continue
            lower, upper, fcells = got
            n_checked += 1
            if lower <= 0:
                status = "fail"
                witnesses.append({"Q": int(q), "reason": "zero worst-F ratio",
                                  "F_cells": [int(c) for c in fcells]})
                continue
            worst_upper = max(worst_upper, 1 / lower)
            if step > 0 and n_mech < mechanics_per_level:
                n_mech += 1
                ok, why = _check_step_mechanics(
                    tree, m, sigma, omega, q, a - b, b, eta_a, m0_norm,
                    base_oracle, c_prev, fine_table)
                if not ok:
                    status = "fail"
                    witnesses.append({"Q": int(q), "reason": why})
        c_a = worst_upper if worst_upper > 0 else Frac(1)
        levels.append(LedgerLevel(a=float(a), eta_a=float(eta_a),
                                  C_a=float(c_a), status=status,
                                  n_checked=n_checked, witnesses=witnesses))
        eta_prev, c_prev = eta_a, c_a
    return InductionLedger(levels=levels, b=float(b), k=k, M0=float(m0_norm),
                           gamma=float(gamma), depth=depth)


def _check_step_mechanics(tree, m, sigma, omega, q, a, b, eta, m0_norm,
                          base_oracle, c_prev, fine_table) -> tuple[bool, str]:
    """One H(a) -> H(a+b) step at cube q, following the proof verbatim."""
    res = corona_decompose(tree, m, sigma, q, a, b)
    cs = _dyadic_doubling_fraction(sigma, tree, q)
    if res.sawtooth_norm > 2 * (1 + cs) * as_frac(b):
        return False, "sawtooth Carleson norm exceeds the proof constant"
    got = fine_table.worst(q, eta)
    if got is None:
        return True, ""
    _, _, fcells = got
    fset = set()
    for c in fcells:
        fset.update(leaves_under(tree, c))
    good = [qj for qj in res.family if qj not in set(res.bad)]
    split = selection_split(tree, sigma, good, q, fset,
                            eta_tilde=Frac(1, 2), m0=m0_norm, b=b)
    if not split["guarantee_holds"]:
        return False, "selection guarantee failed"
    for qj in split["F1"]:
        if tree.is_leaf(qj):
            # finite-tree base case: no children to pigeonhole into; the
            # leaf's own H(a) bound is checked at the level sweep
            continue
        ch = pigeonhole_child(tree, m, sigma, qj, a if a > 0 else Frac(0))
        if m.mass_subtree(ch) > as_frac(a) * sigma.mass(ch):
            return False, f"pigeonhole child {ch} violates the level bound"
    ratio = base_oracle(q, res.family, fset & set(leaves_under(tree, q)), float(eta))
    if ratio is not None and as_frac(ratio) <= 0:
        return False, "base oracle returned a zero projected ratio"
    return True, ""


def _dyadic_doubling_fraction(sigma: TreeMeasure, tree, q0: int) -> Fraction:
    best = Frac(1)
    for q in tree.descendants(q0):
        for ch in tree.children_of(q):
            mc = sigma.mass(ch)
            if mc == 0:
                raise ValueError("sigma vanishes on a cube; doubling undefined")
            best = max(best, sigma.mass(q) / mc)
    return best
