import math
from fractions import Fraction

import numpy as np
import pytest

from hmlab import domains, dyadic, wos
from hmlab.wos import (WoSConfig, annulus_partition, estimate_green,
                       estimate_omega, run_walks)


@pytest.fixture(scope="module")
def ball3(sphere_sample):
    o = domains.build_domain(domains.ball(1.0, dim=3))
    _, s = sphere_sample
    return o, s


def test_probability_vector_exact(ball3):
    o, s = ball3
    cfg = WoSConfig(n_walks=2000, seed=1)
    est = estimate_omega(o, s, np.array([0.2, 0.1, 0.0]), cfg)
    assert est.total_check() == Fraction(1)


def test_bit_for_bit_determinism(ball3):
    o, s = ball3
    cfg = WoSConfig(n_walks=1500, seed=9)
    e1 = estimate_omega(o, s, np.array([0.3, 0.0, 0.0]), cfg)
    e2 = estimate_omega(o, s, np.array([0.3, 0.0, 0.0]), cfg)
    assert e1.leaf_counts == e2.leaf_counts
    assert np.array_equal(e1.hit_points, e2.hit_points)


def test_batching_does_not_change_results(ball3):
    o, s = ball3
    cfg = WoSConfig(n_walks=1200, seed=4)
    eps = cfg.resolve_eps(s)
    ends1, st1, _ = run_walks(o, np.array([0.1, 0.2, 0.3]), cfg, eps,
                              batch=1200)
    ends2, st2, _ = run_walks(o, np.array([0.1, 0.2, 0.3]), cfg, eps,
                              batch=177)
    assert np.array_equal(ends1, ends2)
    assert np.array_equal(st1, st2)


def test_pole_near_boundary_concentrates(ball3):
    o, s = ball3
    y = s.points[0]
    pole = y * (1 - 0.02)
    cfg = WoSConfig(n_walks=3000, seed=5)
    est = estimate_omega(o, s, pole, cfg)
    p, _ = est.mass_in_ball(y, 0.3)
    assert p > 0.7


def test_pole_too_close_rejected(ball3):
    o, s = ball3
    with pytest.raises(ValueError, match="pole"):
        estimate_omega(o, s, s.points[0] * (1 - 1e-9),
                       WoSConfig(n_walks=100, seed=0))


def test_mean_value_property(ball3):
    # X -> omega^X(A) is harmonic: sphere average equals center value
    o, s = ball3
    x0 = np.array([0.2, -0.1, 0.3])
    rho = 0.25
    target = s.points[0]
    cfg = WoSConfig(n_walks=8000, seed=6)
    pc, se_c = estimate_omega(o, s, x0, cfg).mass_in_ball(target, 0.6)
    rng = np.random.default_rng(3)
    dirs = rng.normal(size=(20, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    vals = []
    for i, d in enumerate(dirs):
        est = estimate_omega(o, s, x0 + rho * d,
                             WoSConfig(n_walks=2000, seed=100 + i))
        vals.append(est.mass_in_ball(target, 0.6)[0])
    avg = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / math.sqrt(len(vals))) + se_c
    assert abs(avg - pc) <= 3 * se + 1e-3


def test_monotone_refinement(ball3):
    o, s = ball3
    x0 = np.array([0.4, 0.0, 0.0])
    target = s.points[100]
    p1, se1 = estimate_omega(o, s, x0, WoSConfig(
        n_walks=20000, seed=7, eps_abs=2e-3)).mass_in_ball(target, 0.5)
    p2, se2 = estimate_omega(o, s, x0, WoSConfig(
        n_walks=20000, seed=8, eps_abs=1e-3)).mass_in_ball(target, 0.5)
    assert abs(p1 - p2) <= 3 * (se1 + se2)


def test_green_nonnegative_and_symmetric(ball3):
    o, s = ball3
    cfg = WoSConfig(n_walks=30000, seed=10, eps_abs=5e-4)
    X = np.array([0.5, 0.0, 0.0])
    Y = np.array([-0.3, 0.3, 0.0])
    gxy = estimate_green(o, s, X, Y, cfg)
    gyx = estimate_green(o, s, Y, X, cfg)
    assert gxy["value"] >= -3 * gxy["se"]
    assert abs(gxy["value"] - gyx["value"]) <= 3 * (gxy["se"] + gyx["se"])


def test_green_pole_collision(ball3):
    o, s = ball3
    with pytest.raises(ValueError, match="pole"):
        estimate_green(o, s, np.zeros(3), np.zeros(3),
                       WoSConfig(n_walks=10, seed=0))


def test_escape_mass_reported():
    spec = domains.half_space_slab(None, 8.0, dim=3)
    o = domains.build_domain(spec)
    s = domains.sample_boundary(o, spec, 2000, seed=0)
    cfg = WoSConfig(n_walks=4000, seed=11, eps_abs=1e-3)
    est = estimate_omega(o, s, np.array([0.0, 0.0, 1.0]), cfg)
    assert est.escape > 0
    assert est.total_check() == Fraction(1)


def test_annulus_partition_rules(sphere_sample):
    _, s = sphere_sample
    z = s.points[0]
    rad = 0.4
    rep = annulus_partition(s, z, rad, 0.125)
    assert rep["n"] == 2
    seen = set()
    d = np.linalg.norm(s.points - z, axis=1)
    for k, idx in enumerate(rep["U"]):
        lo = (1.25 + 0.125 * k) * rad
        hi = (1.25 + 0.125 * (k + 1)) * rad
        assert np.all((d[idx] >= lo) & (d[idx] < hi))
        assert not (seen & set(idx.tolist()))     # pairwise disjoint
        seen.update(idx.tolist())
        assert np.all(d[idx] < 2 * rad)           # inside the doubled ball
    # the annuli cover the band [5/4, 3/2) exactly
    band = np.where((d >= 1.25 * rad) & (d < 1.5 * rad))[0]
    assert set(band.tolist()) == seen
    with pytest.raises(ValueError, match="eps"):
        annulus_partition(s, z, rad, 0.7)


def test_region_estimate_splits_parts(disk_stack):
    from hmlab.whitney import RegionOracle, sawtooth_region, find_markers
    from hmlab.wos import estimate_omega_region
    asg, tree, oracle = disk_stack["asg"], disk_stack["tree"], disk_stack["oracle"]
    sample = disk_stack["sample"]
    q0 = tree.generation_ids(tree.k_min)[0]
    fam = [tree.children_of(q0)[0]]
    region = sawtooth_region(asg, fam, q0)
    mk = find_markers(asg, fam, q0, region=region)
    ra = RegionOracle(region)
    pole = mk.a_q[q0]
    assert region.contains_point(pole)
    removed_pre = set()
    for qj in fam:
        removed_pre.update(tree.descendants(qj))
    cfg = WoSConfig(n_walks=4000, seed=12, eps_abs=5e-4)
    est = estimate_omega_region(ra, oracle, sample, tree, pole, cfg,
                                boundary_collar=asg.decomp.collar_delta_max,
                                exclude_leaves=removed_pre)
    total = sum(est.leaf_masses.values(), Fraction(0)) + \
        Fraction(len(est.face_points), est.n_walks) + \
        Fraction(est.escape + est.unresolved + est.step_limited, est.n_walks)
    assert total == 1
    assert len(est.face_points) > 0
    assert sum(est.leaf_masses.values(), Fraction(0)) > 0
    # the shared-boundary part only routes to leaves outside the family
    removed = set()
    for qj in fam:
        removed.update(tree.descendants(qj))
    assert all(leaf not in removed for leaf in est.leaf_masses)
