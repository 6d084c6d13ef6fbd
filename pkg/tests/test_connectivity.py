import math

import numpy as np
import pytest

from hmlab import domains, whitney
from hmlab.connectivity import (find_corkscrew, find_exterior_corkscrew,
                                harnack_chain, poincare_ratio)
from hmlab.whitney import approximating_domain, sawtooth_region


def test_corkscrew_full_ball_center():
    o = domains.build_domain(domains.ball(1.0, dim=3))
    res = find_corkscrew(o, np.array([1.0, 0.0, 0.0]), 2.0)
    # the center achieves c = 1/2 for the surface ball covering everything
    assert res.c >= 0.45
    assert np.linalg.norm(res.point) <= 0.2


def test_corkscrew_half_space():
    o = domains.build_domain(domains.half_space_slab(None, 4.0, dim=3))
    res = find_corkscrew(o, np.zeros(3), 1.0)
    assert res.c >= 0.45
    assert abs(res.point[2] - 0.5) <= 0.1


def test_corkscrew_verification_bounds():
    o = domains.build_domain(domains.ball(1.0, dim=2))
    x = np.array([1.0, 0.0])
    r = 0.5
    res = find_corkscrew(o, x, r)
    assert o.delta(res.point[None])[0] >= res.c * r - 1e-9
    assert np.linalg.norm(res.point - x) <= r * (1 - res.c) + 1e-9


def test_corkscrew_degrades_with_slit():
    # two rooms joined by a corridor of width w; the ball centered on the
    # corridor wall sees only the corridor, so c decays as the slit closes
    cs = []
    for w in (0.1, 0.06, 0.03):
        spec = domains.polygon([
            (0, 0), (1, 0), (1, 0.5 - w / 2), (1.2, 0.5 - w / 2), (1.2, 0),
            (2.2, 0), (2.2, 1), (1.2, 1), (1.2, 0.5 + w / 2), (1, 0.5 + w / 2),
            (1, 1), (0, 1)])
        o = domains.build_domain(spec)
        res = find_corkscrew(o, np.array([1.1, 0.5 + w / 2]), 0.09)
        cs.append(res.c)
    assert cs[0] > cs[1] > cs[2] > 0


def test_exterior_corkscrew_ball_complement():
    o = domains.build_domain(domains.ball(1.0, dim=3))
    rep = find_exterior_corkscrew(None, o, np.array([1.0, 0.0, 0.0]), 0.8,
                                  a=0.2)
    assert rep["hypothesis_met"]
    res = rep["result"]
    assert res.found
    assert not o.inside(res.point[None])[0]
    assert o.delta(res.point[None])[0] >= res.c * 0.8 * 0.5


def test_exterior_corkscrew_hypothesis_fails_inside():
    # a ball strictly inside the domain has no exterior volume at all
    o = domains.build_domain(domains.ball(1.0, dim=3))
    rep = find_exterior_corkscrew(None, o, np.zeros(3), 0.5, a=0.1)
    assert not rep["hypothesis_met"]


def test_exterior_corkscrew_linear_in_a():
    o = domains.build_domain(domains.half_space_slab(None, 4.0, dim=3))
    cs = []
    for a in (0.1, 0.2, 0.3):
        rep = find_exterior_corkscrew(None, o, np.zeros(3), 1.0, a=a)
        assert rep["hypothesis_met"]
        cs.append(rep["result"].c)
    # c1 = a / (4C): positive slope in a
    assert cs[0] < cs[1] < cs[2]
    slope = (cs[2] - cs[0]) / 0.2
    assert slope > 0


def test_exterior_corkscrew_on_approximating_domain(disk_stack):
    asg, tree, oracle = disk_stack["asg"], disk_stack["tree"], disk_stack["oracle"]
    n_scale = tree.k_min + 1
    region = approximating_domain(asg, n_scale)
    # pick a true boundary point; scales below 2^-N have exterior corkscrews
    x = disk_stack["sample"].points[0]
    r = 2.0 ** (-n_scale)
    rep = find_exterior_corkscrew(region, oracle, x, r, a=0.05)
    assert rep["hypothesis_met"]
    assert rep["result"].found


def test_boundary_strip_constant(disk_stack):
    from hmlab.connectivity import boundary_strip_volume
    oracle = disk_stack["oracle"]
    x = disk_stack["sample"].points[0]
    r = 0.5
    for rho in (r / 8, r / 16):
        vol = boundary_strip_volume(oracle, x, r, rho)
        assert vol <= 8.0 * rho * r   # measured strip constant stays small


def test_harnack_chain_identity_point(disk_stack):
    oracle, dec = disk_stack["oracle"], disk_stack["decomp"]
    X = np.array([0.0, 0.0])
    ch = harnack_chain(oracle, dec, X, X)
    assert ch.length == 1
    assert ch.lam == 0.0


def test_harnack_chain_disk_antipodal(disk_stack):
    oracle, dec = disk_stack["oracle"], disk_stack["decomp"]
    X = np.array([0.5, 0.0])
    Y = np.array([-0.5, 0.0])
    ch = harnack_chain(oracle, dec, X, Y)
    # every ball lies inside the domain
    d = oracle.delta(ch.centers)
    assert np.all(ch.radii <= d + 1e-12)
    assert ch.length <= 40
    # consecutive balls intersect
    gaps = np.linalg.norm(np.diff(ch.centers, axis=0), axis=1)
    assert np.all(gaps <= ch.radii[:-1] + ch.radii[1:] + 1e-12)


def test_harnack_chain_length_grows_slowly(disk_stack):
    oracle, dec = disk_stack["oracle"], disk_stack["decomp"]
    lengths = []
    lams = []
    for depth in (0.4, 0.2, 0.1):
        X = np.array([1 - depth, 0.0])
        Y = np.array([-(1 - depth), 0.0])
        ch = harnack_chain(oracle, dec, X, Y)
        lengths.append(ch.length)
        lams.append(ch.lam)
    # N grows far slower than Lambda
    assert lengths[-1] <= lengths[0] * (lams[-1] / lams[0])


def test_harnack_chain_l_shape_bends():
    spec = domains.polygon([(0, 0), (2, 0), (2, 1), (1, 1), (1, 2), (0, 2)])
    o = domains.build_domain(spec)
    dec = whitney.whitney_decompose(o, ell_min=2.0 ** -7)
    X = np.array([1.6, 0.5])
    Y = np.array([0.5, 1.6])
    ch = harnack_chain(o, dec, X, Y)
    d = o.delta(ch.centers)
    assert np.all(ch.radii <= d + 1e-12)
    # the straight segment exits the domain, so the chain must detour
    assert ch.length >= 4


def test_poincare_constant_function(disk_stack):
    asg, tree = disk_stack["asg"], disk_stack["tree"]
    q0 = tree.generation_ids(tree.k_min)[0]
    region = sawtooth_region(asg, [], q0)
    fat = sawtooth_region(asg, [], q0, fat=True)
    r = tree.length(q0)
    out = poincare_ratio(region, fat, lambda p: np.ones(p.shape[0]),
                         lambda p: np.zeros_like(p), r, n_mc=20000)
    assert out["ratio"] == 0.0


def test_poincare_linear_field_stable(disk_stack):
    asg, tree = disk_stack["asg"], disk_stack["tree"]
    q0 = tree.generation_ids(tree.k_min)[0]
    region = sawtooth_region(asg, [], q0)
    fat = sawtooth_region(asg, [], q0, fat=True)
    r = tree.length(q0)
    f = lambda p: p[:, 0] + 2.0 * p[:, 1]
    gf = lambda p: np.tile([1.0, 2.0], (p.shape[0], 1))
    r1 = poincare_ratio(region, fat, f, gf, r, n_mc=50000, seed=1)["ratio"]
    r2 = poincare_ratio(region, fat, f, gf, r, n_mc=200000, seed=2)["ratio"]
    assert r1 > 0
    assert abs(r1 - r2) / r2 < 0.10


def test_poincare_trig_family_bounded(disk_stack):
    asg, tree = disk_stack["asg"], disk_stack["tree"]
    q0 = tree.generation_ids(tree.k_min)[0]
    region = sawtooth_region(asg, [], q0)
    fat = sawtooth_region(asg, [], q0, fat=True)
    r = tree.length(q0)
    worst = 0.0
    for k1, k2 in [(1, 0), (2, 1), (3, 2)]:
        f = lambda p, a=k1, b=k2: np.sin(a * p[:, 0]) * np.cos(b * p[:, 1])
        gf = lambda p, a=k1, b=k2: np.stack(
            [a * np.cos(a * p[:, 0]) * np.cos(b * p[:, 1]),
             -b * np.sin(a * p[:, 0]) * np.sin(b * p[:, 1])], axis=1)
        out = poincare_ratio(region, fat, f, gf, r, n_mc=30000, seed=k1)
        worst = max(worst, out["ratio"])
    assert worst < 200.0
