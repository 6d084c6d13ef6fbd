import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmlab.geometry import Box, BoxUnion, box_box_distance, _rect_subtract
from hmlab.rng import substream


def grid_boxes(draw_bits, dim=2):
    """Boxes with dyadic corners on a small lattice."""
    lo = np.array(draw_bits[:dim], dtype=float) / 4
    sides = (np.array(draw_bits[dim:2 * dim], dtype=float) + 1) / 4
    return lo, lo + sides


@st.composite
def box_union_and_point(draw):
    n = draw(st.integers(1, 5))
    los, his = [], []
    for _ in range(n):
        bits = [draw(st.integers(0, 6)) for _ in range(4)]
        lo, hi = grid_boxes(bits)
        los.append(lo)
        his.append(hi)
    px = draw(st.integers(0, 28)) / 4.0
    py = draw(st.integers(0, 28)) / 4.0
    return np.array(los), np.array(his), np.array([px, py])


@given(box_union_and_point())
@settings(max_examples=200, deadline=None)
def test_interior_membership_matches_neighborhood_probe(data):
    los, his, p = data
    u = BoxUnion(los, his)
    got = u.contains_point(p)
    # brute force: probe a small neighborhood grid around p
    eps = 2.0 ** -10
    offs = np.array([[a, b] for a in (-1, 0, 1) for b in (-1, 0, 1)])
    probes = p + eps * offs * 0.5
    covered = np.all(
        np.any(np.all((probes[:, None, :] >= los[None]) &
                      (probes[:, None, :] <= his[None]), axis=2), axis=1))
    assert got == bool(covered)


def test_shared_face_semantics():
    u = BoxUnion(np.array([[0.0, 0.0], [1.0, 0.0]]),
                 np.array([[1.0, 1.0], [2.0, 1.0]]))
    assert u.contains_point(np.array([1.0, 0.5]))        # shared face
    assert not u.contains_point(np.array([0.0, 0.5]))    # exposed face
    assert not u.contains_point(np.array([1.0, 0.0]))    # boundary corner
    assert u.contains_point(np.array([0.5, 0.5]))


def test_exact_volume_and_boundary_area():
    u = BoxUnion(np.array([[0.0, 0.0], [0.5, 0.0]]),
                 np.array([[1.0, 1.0], [1.5, 1.0]]))
    assert u.exact_volume() == pytest.approx(1.5)
    assert u.boundary_area() == pytest.approx(2 * 1.5 + 2 * 1.0)


def test_mc_volume_matches_exact():
    rng = substream(0, "mcvol")
    los = np.array([[0.0, 0.0], [0.5, 0.25], [1.0, 0.0]])
    his = np.array([[1.0, 1.0], [1.5, 0.75], [2.0, 0.5]])
    u = BoxUnion(los, his)
    exact = u.exact_volume()
    est, se, _ = u.mc_volume(40000, rng)
    assert abs(est - exact) < 4 * max(se, 1e-3)


def test_rect_subtract_exact():
    # unit square minus a centered quarter: area 3/4, four pieces or fewer
    pieces = _rect_subtract(np.array([0.0, 0.0]), np.array([1.0, 1.0]),
                            [(np.array([0.25, 0.25]), np.array([0.75, 0.75]))])
    area = sum(float(np.prod(hi - lo)) for lo, hi in pieces)
    assert area == pytest.approx(0.75)


def test_boundary_fragments_3d_cube():
    u = BoxUnion(np.array([[0.0, 0.0, 0.0]]), np.array([[1.0, 1.0, 1.0]]))
    assert u.boundary_area() == pytest.approx(6.0)
    pts, w, _ = u.sample_boundary(0.3)
    assert w.sum() == pytest.approx(6.0)


def test_dist_to_boundary_exact():
    u = BoxUnion(np.array([[0.0, 0.0]]), np.array([[2.0, 2.0]]))
    d = u.dist_to_boundary_exact(np.array([[1.0, 1.0], [0.25, 1.0]]))
    assert d == pytest.approx([1.0, 0.25])
    lower = u.dist_to_boundary_lower(np.array([[1.0, 1.0]]), spacing=0.05)
    assert lower[0] <= 1.0 and lower[0] > 0.9


def test_box_box_distance():
    assert box_box_distance([0, 0], [1, 1], [2, 0], [3, 1]) == 1.0
    assert box_box_distance([0, 0], [1, 1], [0.5, 0.5], [3, 1]) == 0.0
    assert box_box_distance([0, 0], [1, 1], [2, 2], [3, 3]) == pytest.approx(
        np.sqrt(2))


def test_owner_rows_and_integral_overlap_correction():
    # two fully overlapping boxes: union volume is 1, not 2
    u = BoxUnion(np.array([[0.0, 0.0], [0.0, 0.0]]),
                 np.array([[1.0, 1.0], [1.0, 1.0]]))
    est, se, _ = u.mc_volume(20000, substream(1, "own"))
    assert abs(est - 1.0) < 5 * max(se, 1e-3)
