import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmlab import domains
from hmlab.domains import (DomainSpec, adr_profile, build_domain,
                           sample_boundary, surface_ball_mass)
from hmlab.rng import substream


def test_ball_delta_center():
    o = build_domain(domains.ball(1.0, dim=3))
    assert o.delta(np.zeros((1, 3)))[0] == 1.0


def test_half_space_delta_is_height():
    o = build_domain(domains.half_space_slab(height=None, truncation=4.0, dim=3))
    pts = np.array([[0.3, -0.2, 0.7], [1.0, 2.0, 0.05]])
    assert np.allclose(o.delta(pts), [0.7, 0.05])


def test_cantor_cylinder_delta_by_exhaustive_box_minimum():
    o = build_domain(domains.cantor_cylinder(1))
    X = np.array([[0.5, 0.5, 0.0]])
    # oracle value against a direct minimum over the four squares
    sq = o.squares
    best = np.inf
    for lo, hi in sq:
        c = np.clip(X[0, :2], lo, hi)
        best = min(best, np.linalg.norm(X[0, :2] - c))
    assert o.delta(X)[0] == pytest.approx(best)
    assert o.inside(X)[0]


def test_invalid_parameters_name_the_parameter():
    with pytest.raises(ValueError, match="radius"):
        build_domain(DomainSpec("ball", {"radius": -1.0, "dim": 3}))
    with pytest.raises(ValueError, match="generation"):
        build_domain(DomainSpec("cantor_cylinder", {}))
    with pytest.raises(ValueError, match="variant"):
        build_domain(DomainSpec("torus", {}))


def test_sphere_sample_total_weight(sphere_sample):
    _, s = sphere_sample
    assert s.total_weight == pytest.approx(4 * math.pi, rel=1e-3)


def test_unit_square_perimeter_weight():
    spec = domains.polygon([(0, 0), (1, 0), (1, 1), (0, 1)])
    o = build_domain(spec)
    s = sample_boundary(o, spec, 400, seed=0)
    assert s.total_weight == pytest.approx(4.0)


def test_cantor_cylinder_lateral_area():
    spec = domains.cantor_cylinder(2, height=1.0)
    o = build_domain(spec)
    s = sample_boundary(o, spec, 4000, seed=0)
    # 16 boxes, each of perimeter 4 * 4^-2, height 2
    expected = 16 * 4 * 4.0 ** -2 * 2.0
    assert s.total_weight == pytest.approx(expected)


def test_unbounded_without_truncation_rejected():
    spec = DomainSpec("half_space_slab", {"height": None, "truncation": 4.0,
                                          "dim": 3})
    o = build_domain(spec)
    o.truncation_radius = None
    with pytest.raises(ValueError, match="truncation"):
        sample_boundary(o, spec, 100, seed=0)


def test_surface_ball_mass_sphere_cap(sphere_sample):
    _, s = sphere_sample
    # chordal-radius cap on the unit sphere has area pi r^2
    x = s.points[0]
    assert surface_ball_mass(s, x, 0.5) == pytest.approx(math.pi * 0.25,
                                                         rel=0.05)


def test_surface_ball_small_radius(circle_sample):
    _, s = circle_sample
    tiny = 0.4 * s.spacing()["min"]
    m = surface_ball_mass(s, s.points[10], tiny)
    assert m in (0.0, pytest.approx(float(s.weights[10])))


def test_adr_profile_sphere(sphere_sample):
    _, s = sphere_sample
    rng = substream(0, "adr")
    probes = s.points[rng.choice(s.count, 8, replace=False)]
    rep = adr_profile(s, probes, [0.1, 0.2, 0.5, 1.0])
    assert rep["C_lower"] > 0.95 * math.pi * 0.92
    assert rep["C_upper"] < math.pi * 1.08


def test_adr_profile_segment_interior():
    spec = domains.polygon([(0, 0), (10, 0), (10, 1.0), (0, 1.0)])
    o = build_domain(spec)
    s = sample_boundary(o, spec, 4000, seed=0)
    rep = adr_profile(s, [np.array([5.0, 0.0])], [0.2])
    # interior probe of an edge: mass(B(x,r)) = 2r for n = 1
    assert rep["table"][0]["ratio"] == pytest.approx(2.0, rel=0.05)


def test_adr_profile_cantor_bounded():
    spec = domains.cantor_complement_2d(3)
    o = build_domain(spec)
    s = sample_boundary(o, spec, 4000, seed=0)
    probes = s.points[substream(0, "cadr").choice(s.count, 6, replace=False)]
    rep = adr_profile(s, probes, [4.0 ** -2, 4.0 ** -1, 0.5])
    assert rep["C"] < 40.0


def test_adr_empty_probes_error(circle_sample):
    _, s = circle_sample
    with pytest.raises(ValueError, match="probe"):
        adr_profile(s, np.zeros((0, 2)), [0.3])


@given(st.integers(0, 10 ** 6), st.integers(0, 10 ** 6))
@settings(max_examples=50, deadline=None)
def test_delta_is_one_lipschitz(i, j):
    o = build_domain(domains.cantor_complement_2d(2))
    rng = np.random.default_rng(i * 131071 + j)
    X, Y = rng.uniform(-2, 3, (2, 2))
    dx, dy = o.delta(np.array([X, Y]))
    assert abs(dx - dy) <= np.linalg.norm(X - Y) + 1e-12


def test_inside_implies_clear_ball(circle_sample):
    o, s = circle_sample
    rng = substream(0, "clear")
    pts = rng.uniform(-1, 1, (200, 2))
    pts = pts[o.inside(pts)]
    d = o.delta(pts)
    for X, dx in zip(pts, d):
        near = s.tree().query_ball_point(X, dx * (1 - 1e-9))
        assert len(near) == 0


def test_lipschitz_graph_bounds():
    spec = domains.lipschitz_graph("affine", 0.5, window=2.0, truncation=2.0)
    o = build_domain(spec)
    X = np.array([[0.0, 0.0, 1.0]])
    vert = 1.0
    assert o.delta(X)[0] == pytest.approx(vert / math.sqrt(1.25))
    assert o.inside(X)[0]
    assert o.lip == 0.5


def test_escape_flag_on_truncated_domain():
    o = build_domain(domains.half_space_slab(height=None, truncation=2.0, dim=3))
    on_sphere = np.array([[4.0, 0.0, 0.0]])
    assert o.is_escape(on_sphere, 1e-6)[0]
    assert not o.is_escape(np.array([[0.0, 0.0, 1.0]]), 1e-6)[0]


def test_sample_determinism():
    spec = domains.ball(1.0, dim=3)
    o = build_domain(spec)
    s1 = sample_boundary(o, spec, 500, seed=9)
    s2 = sample_boundary(o, spec, 500, seed=9)
    assert np.array_equal(s1.points, s2.points)
    assert np.array_equal(s1.weights, s2.weights)
