import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import nb_brute_force, odd_lattice_brute_force
from spherecone.cone_surface import (appendix_family, bigon_glue, double_triangle, lune_double, octant_double,
                                     subdivide)
from spherecone.errors import DomainError, NotHalfInteger, TooManyPoints, WrongRegime
from spherecone.geodesics import build_field, shortest_arcs_between_cones, shortest_loops_at_cone
from spherecone.monodromy_nb import (acrit_distance, crit_set, dist_to_odd_lattice, geodesic_loop_monodromy_bound,
                                     half_integer_distance_constraint, holonomy_along, is_coaxial, loop_monodromy,
                                     nb_parameter, rot_number_gap_checks, standard_set, synthetic_loop_monodromy,
                                     vertex_circle)
from spherecone.sphere_kernel import axes_angle, rot, rotation_axis

SURFACES = [octant_double, lambda: double_triangle((0.3 * math.pi, 0.4 * math.pi, 0.5 * math.pi)),
            lambda: double_triangle((0.3, 0.4, 2.7)), lambda: appendix_family(0, 2, 1e-3),
            lambda: appendix_family(1, 1, 1e-2), lambda: subdivide(octant_double()), lambda: lune_double(0.7)]


@pytest.mark.parametrize("make", SURFACES)
def test_standard_set_product(make):
    s = make()
    for bp in (0, s.F - 1):
        rep = standard_set(s, bp)
        assert rep.product_defect() < 1e-8
        assert max(rep.rot_defects()) < 1e-8


def test_vertex_circle_holonomy_is_cone_rotation():
    s = double_triangle((0.3 * math.pi, 0.4 * math.pi, 0.5 * math.pi))
    for i, v in enumerate(s.marked):
        t, c = s.corners_around(v)[0]
        Q = holonomy_along(s, vertex_circle(s, v, t, c))
        assert rot(Q) == pytest.approx(min(s.theta[i] % 1, 1 - s.theta[i] % 1), abs=1e-12)
        assert np.allclose(Q @ s.charts[t, c], s.charts[t, c], atol=1e-12)


def test_octant_axes_orthogonal():
    rep = standard_set(octant_double())
    ax = [rotation_axis(q) for q in rep.Q]
    for i, j in [(0, 1), (1, 2), (0, 2)]:
        assert axes_angle(ax[i], ax[j]) == pytest.approx(math.pi / 2, abs=1e-8)
    assert not is_coaxial(rep)


def test_lune_is_coaxial():
    assert is_coaxial(standard_set(lune_double(0.7)))


@pytest.mark.parametrize("thread", [(0, 1), (1, 2), (0, 2)])
def test_octant_half_integer_constraint(thread):
    rep = standard_set(octant_double(), thread=thread)
    assert rep.thread == thread
    assert half_integer_distance_constraint(rep, *thread, math.pi / 2)


def test_half_integer_constraint_errors():
    s = double_triangle((0.3 * math.pi, 0.4 * math.pi, 0.5 * math.pi))
    with pytest.raises(NotHalfInteger):
        half_integer_distance_constraint(standard_set(s, thread=(0, 1)), 0, 1, 1.0)
    rep = standard_set(octant_double())
    with pytest.raises(DomainError):
        half_integer_distance_constraint(rep, 0, 1, math.pi / 2)


def test_geodesic_loop_bound():
    for s in [double_triangle((0.3, 0.4, 2.7)), bigon_glue(1, 0.5)]:
        for i in range(s.n):
            for lp in shortest_loops_at_cone(s, i, length_cap=math.pi):
                for side in (0, 1):
                    Q, ell, phi = loop_monodromy(s, lp, side)
                    if ell < math.pi:
                        assert geodesic_loop_monodromy_bound(Q, ell, phi)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.05, 1.0), st.floats(0.0, 1.0), st.lists(st.floats(-1, 1), min_size=6, max_size=6))
def test_synthetic_loop_bound(ell, phi, xs):
    Y = np.array(xs[:3])
    if np.linalg.norm(Y) < 1e-3:
        return
    Y /= np.linalg.norm(Y)
    d = np.cross(Y, xs[3:])
    if np.linalg.norm(d) < 1e-3:
        return
    d /= np.linalg.norm(d)
    Yp = math.cos(ell) * Y + math.sin(ell) * d
    Q = synthetic_loop_monodromy(Y, Yp, phi)
    assert geodesic_loop_monodromy_bound(Q, ell, phi)


def test_nb_against_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(1, 9))
        th = rng.uniform(0.01, 3.0, n)
        g = int(rng.integers(0, 3))
        chi = 2 - 2 * g - n
        assert nb_parameter(th, chi).value == nb_brute_force(th, chi)


def test_nb_closed_forms():
    assert nb_parameter([0.2, 0.2, 0.2], -1).value == pytest.approx(0.4)
    assert nb_parameter([0.5, 0.5, 0.5], -1).value == pytest.approx(0.5)
    assert nb_parameter([0.7, 0.7], 0).value == pytest.approx(0.0)
    res = nb_parameter([0.3, 0.4, 0.5, 0.6], -2)
    assert res.acrit_distance == pytest.approx(acrit_distance([0.3, 0.4, 0.5, 0.6], -2))
    with pytest.raises(TooManyPoints):
        nb_parameter(np.ones(25), -23)
    with pytest.raises(DomainError):
        nb_parameter([], 2)


def test_crit_set():
    assert crit_set([0.5], 0.0, 3.0) == [0.0, 1.0, 2.0, 3.0]


def test_odd_lattice():
    for th in [(1, 1, 1), (1.5, 1.5, 1.5, 1.5), (2, 1, 1), (0.3, 1.7, 2.2)]:
        assert dist_to_odd_lattice(th) == pytest.approx(odd_lattice_brute_force(th))
    rng = np.random.default_rng(5)
    for _ in range(50):
        th = rng.uniform(0, 3, int(rng.integers(1, 5)))
        assert dist_to_odd_lattice(th) == pytest.approx(odd_lattice_brute_force(th), abs=1e-12)


def test_appendix_thread_constraint():
    s = appendix_family(0, 2, 1e-3)
    rep = standard_set(s, thread=(1, 2))
    d = [a.length for a in shortest_arcs_between_cones(s) if (a.i, a.j) == (1, 2)][0]
    assert half_integer_distance_constraint(rep, 1, 2, d)


def test_gap_checks():
    s = octant_double()
    out = rot_number_gap_checks(s, standard_set(s), build_field(s))
    assert all(ok for (_, _, ok) in out.values())
    with pytest.raises(WrongRegime):
        rot_number_gap_checks(appendix_family(0, 2, 1e-3), None, None)
