import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spherecone.cone_surface import (ConeSurface, appendix_family, bigon_glue, diameter_upper_check, double_triangle,
                                     lune_double, mark_smooth_point_on_edge, octant_double, standard_disk, subdivide)
from spherecone.errors import DomainError


def gb_defect(s):
    return abs(s.area - 2 * math.pi * (s.chi_dot + s.theta_norm))


def test_octant_double():
    s = octant_double()
    assert s.n == 3 and s.genus == 0 and s.chi_dot == -1
    assert np.allclose(s.theta, 0.5)
    assert abs(s.area - math.pi) < 1e-12
    assert s.chi_S_theta == pytest.approx(0.5)


def test_triangle_charts_glue_consistently():
    for s in [octant_double(), bigon_glue(2, 1.3), appendix_family(0, 2, 1e-3)]:
        for t in range(s.F):
            for k in range(3):
                nb = s.neighbor(t, k)
                if nb is None:
                    continue
                u, j = nb
                R = s.transition[t, k]
                assert np.allclose(R @ s.charts[t, k], s.charts[u, (j + 1) % 3], atol=1e-12)
                assert np.allclose(R @ s.charts[t, (k + 1) % 3], s.charts[u, j], atol=1e-12)
                assert np.linalg.det(R) > 0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.15, 0.95), min_size=3, max_size=3))
def test_double_triangle_gauss_bonnet(a):
    ang = [math.pi * x for x in a]
    if not (sum(ang) > math.pi + 0.05 and all(sum(ang) - 2 * x < math.pi - 0.05 for x in ang)):
        return
    s = double_triangle(ang)
    assert gb_defect(s) < 1e-8
    assert s.area == pytest.approx(2 * (sum(ang) - math.pi), abs=1e-10)


@pytest.mark.parametrize("g,theta", [(1, 0.5), (1, 1.0), (2, 1.0), (2, 1.3), (3, 2.7)])
def test_bigon_glue(g, theta):
    s = bigon_glue(g, theta)
    assert s.genus == g and s.n == 1
    assert s.theta[0] == pytest.approx(theta + 2 * g - 1)
    assert s.area == pytest.approx(2 * math.pi * theta, abs=1e-9)
    assert gb_defect(s) < 1e-8


def test_bigon_genus_two_theta_one():
    assert bigon_glue(2, 1.0).theta[0] == pytest.approx(4.0)


@pytest.mark.parametrize("theta", [0.3, 0.5, 0.9, 1.4, 1.9])
def test_lune_double(theta):
    s = lune_double(theta)
    assert s.n == 2 and s.genus == 0
    assert np.allclose(s.theta, theta)
    assert s.area == pytest.approx(4 * math.pi * theta, abs=1e-9)


def test_appendix_family_angles():
    s = appendix_family(1, 2, 1e-3)
    assert gb_defect(s) < 1e-8
    assert s.theta_norm == pytest.approx(2 * 1 + 2.5 + 2)
    with pytest.raises(DomainError):
        appendix_family(0, 2, 0.0)


def test_mark_smooth_point():
    s = octant_double()
    t = mark_smooth_point_on_edge(s, (0, 0), 0.4)
    assert t.n == 4 and t.F == s.F + 2
    assert t.theta[-1] == pytest.approx(1.0)
    assert t.area == pytest.approx(s.area, abs=1e-12)
    assert gb_defect(t) < 1e-8
    with pytest.raises(DomainError):
        mark_smooth_point_on_edge(s, (0, 0), 5.0)


def test_subdivide_preserves_geometry():
    s = octant_double()
    u = subdivide(s)
    assert u.F > s.F
    assert u.area == pytest.approx(s.area, abs=1e-12)
    assert np.allclose(sorted(u.theta), sorted(s.theta))


def test_json_round_trip():
    s = appendix_family(0, 2, 1e-3)
    u = ConeSurface.from_json(s.to_json())
    assert np.array_equal(u.sides, s.sides)
    assert np.allclose(u.theta, s.theta)
    assert u.marked == s.marked


@pytest.mark.parametrize("theta,r", [(0.7, 1.2), (0.3, 0.5), (1.6, 2.0)])
def test_standard_disk(theta, r):
    d = standard_disk(theta, r)
    assert abs(d.gauss_bonnet_defect()) < 1e-12
    assert d.boundary_length == pytest.approx(2 * math.pi * theta * math.sin(r))
    S = d.to_cone_surface(64)
    assert S.theta[0] == pytest.approx(theta)
    assert abs(S.gauss_bonnet_defect()) < 1e-8
    # geodesic chords cut into a convex cap and bulge out of a concave one
    assert (S.area < d.area) == (r < math.pi / 2)
    with pytest.raises(DomainError):
        standard_disk(theta, 4.0)


def test_diameter_bound():
    for s in [octant_double(), lune_double(0.7), bigon_glue(1, 0.5)]:
        diam, bound, ok = diameter_upper_check(s)
        assert ok and diam > 0
