import numpy as np
import pytest
from hypothesis import given, strategies as st

from abeluniv.regions import (TWO_PI, ClusterGeometry, L_boundary, Region, arc_union, cone_segment, disc,
                              exhaustion_K, exhaustion_params, find_exhaustion_index, radial_segment, sample,
                              sample_piece, union)


@given(st.integers(0, 5000))
def test_exhaustion_is_proper_and_misses_gap_midpoint(n):
    K = exhaustion_K(n)
    assert sum(p[4] for p in K.pieces) < TWO_PI
    c, g = exhaustion_params(n)
    mid = float(c) * TWO_PI
    p = K.pieces[0]
    d = (mid - p[3]) % TWO_PI
    assert d > p[4]


def test_exhaustion_covers_two_points():
    n = find_exhaustion_index([(0.0, 0.0), (np.pi, 0.0)], limit=10 ** 4)
    assert n is not None
    K = exhaustion_K(n)
    th = np.angle(sample(K, 4))
    assert K.pieces[0][4] > 0


def test_arc_union_rejects_full_circle():
    with pytest.raises(ValueError):
        arc_union([(0, np.pi), (np.pi, np.pi)])


def test_arc_sample_three_points():
    z = sample_piece(("arc", 0j, 1.0, 0.0, np.pi), 3)
    assert np.allclose(z, [1, 1j, -1], atol=1e-15)


@given(st.floats(0.05, 0.99), st.integers(0, 50))
def test_dilated_samples_scale(r, n):
    K = exhaustion_K(n)
    a, b = sample(K), sample(K.dilate(r))
    assert a.shape == b.shape
    assert np.allclose(np.abs(b), r * np.abs(a))


def test_doubling_factor_doubles_points():
    R = union(exhaustion_K(3), radial_segment(0.1, 0.9), disc(0.4))
    assert sample(R, 2.0).size >= 2 * sample(R, 1.0).size


def test_empty_region():
    assert Region("empty", ()).is_empty()
    assert sample(Region("empty", ())).size == 0


@pytest.mark.parametrize("n", [0, 1, 4, 9])
def test_L_boundary_definition(n):
    g = ClusterGeometry()
    z = sample(L_boundary(g, n), 2.0)
    rho = g.a(2 * n + 2) + g.eta(n)
    assert np.all(np.abs(z) <= rho + 1e-12)
    assert np.all(np.abs(z - rho * g.zeta1) >= 2 * g.eta(n) - 1e-12)


def test_L_radii_increase():
    g = ClusterGeometry()
    assert all(g.L_radius(n + 1) > g.L_radius(n) for n in range(20))


def test_cone_nonempty_and_inside_carrier():
    g = ClusterGeometry()
    I = exhaustion_K(0)
    for n in range(11):
        C = cone_segment(g, n, I)
        z = sample(C)
        assert z.size > 0
        p = I.pieces[0]
        d = (np.angle(z) - p[3]) % TWO_PI
        assert np.all((d <= p[4] + 1e-9) | (d >= TWO_PI - 1e-9))


def test_segment_pair():
    g = ClusterGeometry()
    S = g.segment_pair(1)
    assert S.pieces[0][1] == pytest.approx(g.a(2)) and S.pieces[1][2] == pytest.approx(-g.a(4))
