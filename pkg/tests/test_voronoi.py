import math

import numpy as np
import pytest
from scipy.integrate import quad

from spherecone.cone_surface import standard_disk
from spherecone.errors import DomainError, EstimateInapplicable, SaddleInInterval
from spherecone.geodesics import single_source_field
from spherecone.voronoi import (LevelSets, ball_disk, cone_disk, cylinder_regions, disk_area_estimates,
                                epsilon_bubbling, level_length, level_topology, max_voronoi, small_angle_checks,
                                sublevel_area, voronoi_core)

OCT_MAX = math.acos(1 / math.sqrt(3))


def test_octant_critical_points(octant):
    cx = octant.cx
    assert cx.gamma_ok
    assert sorted(p.value for p in cx.saddles) == pytest.approx([math.pi / 4] * 3, abs=1e-12)
    assert [p.value for p in cx.maxima] == pytest.approx([OCT_MAX] * 2, abs=1e-12)
    assert all(ok for (_, _, ok) in cx.check_invariants().values())


@pytest.mark.parametrize("name", ["octant", "ex43_05", "ex43_01", "bigon"])
def test_invariants(name, request):
    cx = request.getfixturevalue(name).cx
    inv = cx.check_invariants()
    assert inv["delaunay_morse"][2] and inv["saddle_count"][2]


def test_octant_level_closed_form(octant):
    f, cx = octant.f, octant.cx
    for r in (0.2, 0.5, 0.7):
        # below pi/4 the three disks are embedded cone disks of angle pi
        assert level_length(f, r, cx) == pytest.approx(3 * math.pi * math.sin(r), abs=1e-9)
        assert sublevel_area(f, r, cx) == pytest.approx(3 * math.pi * (1 - math.cos(r)), abs=1e-7)
    assert sublevel_area(f, OCT_MAX - 1e-9, cx) == pytest.approx(math.pi, abs=1e-5)
    assert max_voronoi(f, cx) == pytest.approx(OCT_MAX, abs=1e-9)


def test_level_components_octant(octant):
    ls = LevelSets(octant.f)
    comps = ls.components(0.5)
    assert sorted(c.sources for c in comps) == [(0,), (1,), (2,)]
    topo = level_topology(octant.cx, 0.5, ls)
    assert topo.sub_chi == [1, 1, 1] and not any(topo.essential)


def test_voronoi_core_octant(octant):
    core, why = voronoi_core(octant.s, octant.f, 0.85, octant.cx)
    assert why == ""
    assert core.core_cones == (0, 1, 2)
    assert core.core_angle_sum > 4 * math.pi / 3
    assert len(core.disks) == 2 and all(d.kind == 0 for d in core.disks)
    total = core.core_area + sum(d.area for d in core.disks)
    assert total == pytest.approx(math.pi, abs=1e-5)
    core, why = voronoi_core(octant.s, octant.f, 0.5, octant.cx)
    assert core is None and why == "r <= sys"


def test_ball_and_cone_disks():
    for rho in np.linspace(0.1, 3.0, 20):
        if abs(rho - math.pi / 2) < 1e-2:
            continue
        b, res = disk_area_estimates(ball_disk(rho))
        assert b == (0 if rho < math.pi / 2 else 1)
    b, _ = disk_area_estimates(cone_disk(0.05, 1.0))
    assert b == 0
    with pytest.raises(EstimateInapplicable):
        disk_area_estimates(cone_disk(0.5, 1.0))


def test_standard_disk_cylinder():
    d = standard_disk(0.7, 1.2)
    S = d.to_cone_surface(64)
    f = single_source_field(S, S.marked[0])
    cyl = cylinder_regions(S, f, 0.2, 1.1)
    exact = quad(lambda t: 1 / (2 * math.pi * 0.7 * math.sin(t)), 0.2, 1.1)[0]
    assert cyl[0].modulus == pytest.approx(exact, abs=1e-6)


def test_bubbling_rejects_saddle_window(appendix):
    sad = min(p.value for p in appendix.cx.saddles if p.value > 0.1)
    with pytest.raises((SaddleInInterval, DomainError)):
        epsilon_bubbling(appendix.s, appendix.f, sad - 0.01, sad + 0.01, appendix.cx)


def test_small_angle_checks(ex43_05):
    s, f = ex43_05.s, ex43_05.f
    i = int(np.argmin(s.theta))
    rep = small_angle_checks(s, f, i, ex43_05.cx)
    assert rep["ok"], rep
    with pytest.raises(DomainError):
        small_angle_checks(s, f, int(np.argmax(s.theta)), ex43_05.cx)
