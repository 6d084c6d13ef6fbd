from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmlab.corona import (DiscreteCarlesonMeasure, beta_potential,
                          beta_potential_pathsum, corona_decompose,
                          extrapolation_verify, pigeonhole_child,
                          selection_split, walk_probability)
from hmlab.treemeasure import TreeMeasure, leaves_under
from hmlab.trees import SyntheticTree, random_tree


def chain_tree(branchings):
    """Path tree where level i branches into branchings[i] children and the
    walk continues through the first child."""
    parents = [None]
    cur = 0
    for b in branchings:
        first = None
        for _ in range(b):
            parents.append(cur)
            if first is None:
                first = len(parents) - 1
        cur = first
    return SyntheticTree(parents), cur


def test_walk_probability_identities():
    t, tip = chain_tree([2, 3, 4])
    assert walk_probability(t, 0, 0) == 1
    assert walk_probability(t, 0, tip) == F(1, 24)
    sib = t.children_of(0)[1]
    assert walk_probability(t, sib, tip) == 0      # disjoint cubes
    assert walk_probability(t, tip, 0) == 0        # strictly above


@given(st.integers(0, 10 ** 6))
@settings(max_examples=60, deadline=None)
def test_walk_sum_over_disjoint_family(seed):
    rng = np.random.default_rng(seed)
    t = random_tree(rng, 4)
    # family of all cubes at depth 2 under the root: a full cover
    fam_cover = [q for q in t.descendants(0)
                 if t.k_of(q) == 2 or (t.is_leaf(q) and t.k_of(q) < 2)]
    total = sum(walk_probability(t, 0, qj) for qj in fam_cover)
    assert total == 1
    # strict subfamily: strictly below one
    if len(fam_cover) > 1:
        total2 = sum(walk_probability(t, 0, qj) for qj in fam_cover[:-1])
        assert total2 < 1


def _random_instance(seed, depth=5, max_alpha=4):
    rng = np.random.default_rng(seed)
    t = random_tree(rng, depth)
    sigma = TreeMeasure(t, {l: F(int(rng.integers(1, 9)))
                            for l in t.leaves()})
    alpha = {q: F(int(rng.integers(0, max_alpha + 1)), 8)
             for q in t.descendants(0)}
    return t, DiscreteCarlesonMeasure(t, alpha), sigma, rng


def test_beta_recursion_equals_path_sum():
    t, m, sigma, _ = _random_instance(0, depth=4)
    beta = beta_potential(t, m, 0)
    for q in t.descendants(0):
        assert beta[q] == beta_potential_pathsum(t, m, 0, q)


def test_corona_identity_short_mass_plus_beta():
    # m(D_short) + beta(Q) = m(D_Q) + sum over strict ancestors of P alpha
    t, m, sigma, _ = _random_instance(1, depth=4)
    beta = beta_potential(t, m, 0)
    for q in t.descendants(0):
        lhs = m.mass(t.descendants_short(q)) + beta[q]
        anc = 0
        rhs = m.mass_subtree(q)
        cur = q
        while t.parent_of(cur) is not None:
            cur = t.parent_of(cur)
            rhs += walk_probability(t, cur, q) * m.a(cur)
        assert lhs == rhs


def test_corona_zero_alpha_gives_empty_family():
    t, _, sigma, _ = _random_instance(2)
    m = DiscreteCarlesonMeasure(t, {})
    res = corona_decompose(t, m, sigma, 0, F(1), F(1))
    assert res.family == [] and res.bad == []
    assert res.sawtooth_norm == 0


def test_corona_trivial_branch():
    t = SyntheticTree([None, 0, 0])
    sigma = TreeMeasure(t, {1: F(1), 2: F(1)})
    m = DiscreteCarlesonMeasure(t, {0: F(3)})   # alpha_Q0 = 3 > b sigma = 2
    res = corona_decompose(t, m, sigma, 0, F(1), F(1))
    assert res.trivial_branch and res.family == [0] and res.bad == []


def test_corona_tie_not_selected():
    # beta(child) == 2 b sigma(child) exactly: must not be selected
    t = SyntheticTree([None, 0, 0])
    sigma = TreeMeasure(t, {1: F(1), 2: F(1)})
    # alpha chosen so beta(1) = alpha_1 + alpha_0/2 = 2b with b = 1/4
    m = DiscreteCarlesonMeasure(t, {0: F(1, 2), 1: F(1, 4)})
    res = corona_decompose(t, m, sigma, 0, F(1, 4), F(1, 4))
    beta = beta_potential(t, m, 0)
    assert beta[1] == F(1, 2) == 2 * F(1, 4) * sigma.mass(1)
    assert 1 not in res.family


def test_corona_bound_example_two_thirds():
    assert (F(1) + F(1)) / (F(1) + 2 * F(1)) == F(2, 3)


@pytest.mark.parametrize("seed", range(40))
def test_corona_bounds_random(seed):
    t, m, sigma, rng = _random_instance(seed, depth=5)
    a = F(int(rng.integers(0, 3)), 2)
    norm = m.carleson_norm(sigma, 0)
    b = norm + F(1, 7) if norm > a else max(norm - a, F(0)) + F(1, 7)
    res = corona_decompose(t, m, sigma, 0, a, b)
    assert res.bad_fraction <= (a + b) / (a + 2 * b)
    beta = beta_potential(t, m, 0)
    for qj in res.family:
        if res.trivial_branch:
            continue
        assert beta[qj] > 2 * b * sigma.mass(qj)
        cur = t.parent_of(qj)
        while cur is not None:
            assert not beta[cur] > 2 * b * sigma.mass(cur)
            cur = t.parent_of(cur)
    # sawtooth norm against the proof constant 2 (1 + C_sigma)
    from hmlab.corona import _dyadic_doubling_fraction
    cs = _dyadic_doubling_fraction(sigma, t, 0)
    assert res.sawtooth_norm <= 2 * (1 + cs) * b


def test_corona_precondition_error():
    t, m, sigma, _ = _random_instance(3)
    with pytest.raises(ValueError, match="precondition"):
        corona_decompose(t, m, sigma, 0, F(0), F(1, 10 ** 6))


# -- selection lemma ---------------------------------------------------------

def test_selection_eta1_arithmetic():
    # M0 = 1, b = 1, eta_tilde = 0.3: theta0 = 2/3, eta1 = 0.05
    t = SyntheticTree([None, 0, 0])
    sigma = TreeMeasure(t, {1: F(1), 2: F(1)})
    out = selection_split(t, sigma, [], 0, set(t.leaves()),
                          eta_tilde=F(3, 10), m0=F(1), b=F(1))
    assert out["theta0"] == F(2, 3)
    assert out["eta1"] == F(3, 10) / 2 * F(1, 3) == F(1, 20)
    assert out["guarantee_holds"]


def test_selection_empty_family_trivial():
    t, _, sigma, _ = _random_instance(4)
    fset = set(t.leaves())
    out = selection_split(t, sigma, [], 0, fset, F(1, 2), F(1), F(1))
    assert out["E0"] == sorted(t.leaves()) or set(out["E0"]) == set(t.leaves())
    assert out["guarantee_holds"]


@pytest.mark.parametrize("seed", range(50))
def test_selection_conclusion_random(seed):
    rng = np.random.default_rng(seed + 1000)
    t = random_tree(rng, 4)
    sigma = TreeMeasure(t, {l: F(int(rng.integers(1, 5))) for l in t.leaves()})
    fam = [q for q in t.children_of(0) if rng.random() < 0.5]
    m0, b = F(1), F(1, 3)
    eta_tilde = F(int(rng.integers(1, 9)), 10)
    theta0 = (m0 + b) / (m0 + 2 * b)
    eta1 = eta_tilde / 2 * (1 - theta0)
    # build an fset violating at most eta1 of the sigma mass
    leaves = t.leaves()
    fset = set(leaves)
    budget = eta1 * sigma.mass(0)
    for l in leaves:
        if sigma.mass(l) <= budget and rng.random() < 0.3:
            fset.discard(l)
            budget -= sigma.mass(l)
    out = selection_split(t, sigma, fam, 0, fset, eta_tilde, m0, b)
    assert out["guarantee_holds"]


def test_selection_precondition_error():
    t, _, sigma, _ = _random_instance(5)
    with pytest.raises(ValueError, match="precondition"):
        selection_split(t, sigma, [], 0, set(), F(1, 2), F(1), F(1))


# -- pigeonhole ----------------------------------------------------------------

def test_pigeonhole_first_on_ties():
    t = SyntheticTree([None, 0, 0, 0])
    sigma = TreeMeasure(t, {1: F(1), 2: F(1), 3: F(1)})
    m = DiscreteCarlesonMeasure(t, {1: F(1, 2), 2: F(1, 2), 3: F(1, 2)})
    assert pigeonhole_child(t, m, sigma, 0, F(1, 2)) == 1


def test_pigeonhole_avoids_heavy_child():
    t = SyntheticTree([None, 0, 0])
    sigma = TreeMeasure(t, {1: F(1), 2: F(1)})
    m = DiscreteCarlesonMeasure(t, {1: F(5), 2: F(0)})
    assert pigeonhole_child(t, m, sigma, 0, F(1)) == 2


@pytest.mark.parametrize("seed", range(30))
def test_pigeonhole_random_always_valid(seed):
    t, m, sigma, rng = _random_instance(seed + 2000, depth=4)
    for qj in t.descendants(0):
        if t.is_leaf(qj):
            continue
        short = m.mass(t.descendants_short(qj))
        a = short / sigma.mass(qj) + F(1, 100)
        ch = pigeonhole_child(t, m, sigma, qj, a)
        assert m.mass_subtree(ch) <= a * sigma.mass(ch)


# -- extrapolation -------------------------------------------------------------

def _synthetic_ainfty(seed, depth=6):
    rng = np.random.default_rng(seed)
    t = random_tree(rng, depth, max_children=3)
    leaves = t.leaves()
    sigma = TreeMeasure(t, {l: F(int(rng.integers(1, 4))) for l in leaves})
    omega = TreeMeasure(t, {l: sigma.leaf[l] * (F(2, 3) + F(int(
        rng.integers(0, 6)), 6)) for l in leaves})
    alpha = {}
    for q in t.descendants(0):
        alpha[q] = F(int(rng.integers(0, 2)), 32) * sigma.mass(q)
    m = DiscreteCarlesonMeasure(t, alpha)
    norm = m.carleson_norm(sigma, 0)
    if norm > 1:
        alpha = {q: a / norm for q, a in alpha.items()}
        m = DiscreteCarlesonMeasure(t, alpha)
    return t, m, sigma, omega


def test_extrapolation_zero_measure_reduces_to_base():
    t = SyntheticTree([None, 0, 0, 1, 1, 2, 2])
    sigma = TreeMeasure(t, {l: F(1) for l in t.leaves()})
    omega = TreeMeasure(t, {l: F(1) for l in t.leaves()})
    m = DiscreteCarlesonMeasure(t, {})
    calls = []

    def oracle(q, family, fset, eps):
        calls.append((q, tuple(family)))
        from hmlab.treemeasure import project_pf
        pw = project_pf(omega, sigma, family) if family else omega
        return pw.set_mass(fset) / pw.mass(q)

    ledger = extrapolation_verify(t, m, sigma, omega, m0_norm=1,
                                  gamma=F(1, 10), depth=2, base_oracle=oracle)
    assert ledger.levels[0].status == "pass"
    assert ledger.all_pass()


def test_extrapolation_identity_weight_constants():
    t = SyntheticTree([None] + [0] * 2 + [1] * 2 + [2] * 2)
    sigma = TreeMeasure(t, {l: F(1) for l in t.leaves()})
    ledger = extrapolation_verify(t, DiscreteCarlesonMeasure(t, {}), sigma,
                                  sigma, m0_norm=1, gamma=F(1, 10), depth=2)
    for lev in ledger.levels:
        assert lev.status == "pass"
        assert lev.C_a <= 1.0 / (1.0 - lev.eta_a) + 1e-9


def test_extrapolation_full_ledger():
    t, m, sigma, omega = _synthetic_ainfty(0)
    ledger = extrapolation_verify(t, m, sigma, omega, m0_norm=1,
                                  gamma=F(1, 10), depth=3)
    assert ledger.all_pass()
    assert ledger.k == int(np.ceil(ledger.M0 / ledger.b))
    etas = [lev.eta_a for lev in ledger.levels]
    assert all(etas[i + 1] <= etas[i] for i in range(len(etas) - 1))
