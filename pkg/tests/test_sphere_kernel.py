import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import dblquad

from oracles import degree_area
from spherecone.errors import ArcTooLong, BasepointOnLoop, DegenerateTriangle, DomainError
from spherecone.sphere_kernel import (
    LoopOnSphere, TriangleGeom, algebraic_area, axes_angle, circle_loop, decompose_simple, geodesic_dist,
    half_turn, isosceles_area, isosceles_area_check, left_area, rightriang_theta, rot, rotation, rotation_axis,
    solve_hypotenuse, triangle_area, triangle_area_from_vertices, unit,
)

unit_vec = st.tuples(*[st.floats(-1, 1) for _ in range(3)]).filter(lambda v: np.linalg.norm(v) > 0.1).map(unit)


def quat_rotation(q):
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


rotations = st.tuples(*[st.floats(-1, 1) for _ in range(4)]).filter(
    lambda q: np.linalg.norm(q) > 0.1).map(lambda q: quat_rotation(np.array(q)))


def test_geodesic_dist_examples():
    e = np.eye(3)
    assert geodesic_dist(e[0], e[0]) == 0.0
    assert geodesic_dist(e[0], -e[0]) == pytest.approx(math.pi, abs=1e-15)
    assert geodesic_dist(e[0], e[1]) == pytest.approx(math.pi / 2, abs=1e-15)


def test_geodesic_dist_stable_near_zero_and_pi():
    d = 1e-12
    p = np.array([math.cos(d), math.sin(d), 0.0])
    assert geodesic_dist(np.eye(3)[0], p) == pytest.approx(d, rel=1e-6)
    assert geodesic_dist(-np.eye(3)[0], p) == pytest.approx(math.pi - d, abs=1e-15)


def test_triangle_area_examples():
    h = math.pi / 2
    assert triangle_area(TriangleGeom.from_angles(h, h, h)) == pytest.approx(h, abs=1e-12)
    a = math.pi / 3
    t = TriangleGeom.from_angles(a, a, a + 1e-3)
    assert triangle_area(t) == pytest.approx(1e-3, abs=1e-9)


def test_octant_area_by_integration():
    t = TriangleGeom(math.pi / 2, math.pi / 2, math.pi / 2)
    val, _ = dblquad(lambda th, ph: math.sin(th), 0, math.pi / 2, 0, math.pi / 2)
    assert triangle_area(t) == pytest.approx(val, abs=1e-10)


def test_degenerate_triangle_rejected():
    with pytest.raises(DegenerateTriangle):
        TriangleGeom(0.5, 0.2, 0.3)
    with pytest.raises(DegenerateTriangle):
        TriangleGeom.from_angles(1.0, 1.0, math.pi - 2.0)


@settings(max_examples=200, deadline=None)
@given(unit_vec, unit_vec, unit_vec)
def test_law_of_cosines_and_vertex_area(p, q, r):
    a, b, c = geodesic_dist(q, r), geodesic_dist(r, p), geodesic_dist(p, q)
    try:
        t = TriangleGeom(a, b, c)
    except DegenerateTriangle:
        return
    if min(a, b, c) < 1e-3 or max(a, b, c) > math.pi - 1e-3 or t.excess < 1e-6:
        return
    lhs = math.cos(a)
    rhs = math.cos(b) * math.cos(c) + math.sin(b) * math.sin(c) * math.cos(t.alpha)
    assert lhs == pytest.approx(rhs, abs=1e-10)
    assert t.excess == pytest.approx(triangle_area_from_vertices(p, q, r), abs=1e-9)


def test_solve_hypotenuse_examples():
    assert solve_hypotenuse(0.7, 0.0) == pytest.approx(0.7, abs=1e-15)
    assert solve_hypotenuse(math.pi / 4, 1 / 3) == pytest.approx(math.atan(2), abs=1e-12)
    assert math.pi / 2 - 1e-6 < solve_hypotenuse(math.pi / 2 - 1e-9, 0.3) < math.pi / 2
    with pytest.raises(DomainError):
        solve_hypotenuse(0.5, 0.5)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 1.5), st.floats(0.0, 0.45))
def test_solve_hypotenuse_by_construction(leg, theta):
    # O at the pole, Q on meridian 0 at distance leg, P where the great circle
    # through Q perpendicular to OQ meets the meridian at angle pi*theta
    Q = np.array([math.sin(leg), 0.0, math.cos(leg)])
    n_perp = np.array([math.cos(leg), 0.0, -math.sin(leg)])  # plane of the perpendicular circle
    m = np.array([-math.sin(math.pi * theta), math.cos(math.pi * theta), 0.0])  # normal of meridian plane
    P = unit(np.cross(n_perp, m))
    if P[2] < 0:
        P = -P
    assert Q @ n_perp == pytest.approx(0.0, abs=1e-12)
    assert solve_hypotenuse(leg, theta) == pytest.approx(geodesic_dist(np.array([0, 0, 1.0]), P), abs=1e-9)
    assert solve_hypotenuse(leg, theta) >= leg


def test_rot_examples():
    assert rot(np.eye(3)) == 0.0
    assert rot(half_turn([0.3, -1.0, 2.0])) == pytest.approx(0.5, abs=1e-12)
    for phi in (0.0, 0.1, 0.25, 0.4, 0.5):
        u = np.array([1.0, 0.0, 0.0])
        v = np.array([math.cos(math.pi * phi), math.sin(math.pi * phi), 0.0])
        assert rot(half_turn(u) @ half_turn(v)) == pytest.approx(phi, abs=1e-12)


def test_rotation_axis_examples():
    ax = rotation_axis(rotation([0, 0, 1.0], 1.0))
    assert np.allclose(ax, [0, 0, 1.0], atol=1e-12)
    assert rotation_axis(np.eye(3)) is None


@settings(max_examples=200, deadline=None)
@given(rotations, rotations)
def test_rot_conjugation_invariant_and_axis_fixed(P, Q):
    assert abs(rot(P @ Q @ P.T) - rot(Q)) < 1e-10
    ax = rotation_axis(Q)
    if ax is not None and rot(Q) > 1e-6:
        assert np.allclose(Q @ ax, ax, atol=1e-9)
        assert np.linalg.norm(ax) == pytest.approx(1.0)


@settings(max_examples=300, deadline=None)
@given(rotations, rotations)
def test_rot_lower_bound_of_product(Q1, Q2):
    assert rot(Q1 @ Q2) >= abs(rot(Q1) - rot(Q2)) - 1e-10


@settings(max_examples=200, deadline=None)
@given(st.lists(rotations, min_size=2, max_size=6))
def test_rot_subadditive(qs):
    M = np.eye(3)
    for q in qs:
        M = M @ q
    assert rot(M) <= sum(rot(q) for q in qs) + 1e-10


@settings(max_examples=200, deadline=None)
@given(unit_vec, unit_vec)
def test_half_turn_products(u, v):
    phi = axes_angle(u, v) / math.pi
    assert abs(rot(half_turn(u) @ half_turn(v)) - phi) < 1e-9


# ---------------------------------------------------------------------------
# loops and algebraic area

def test_decompose_simple_examples():
    quad = LoopOnSphere(unit(np.array([[1, 0.1, 0.1], [0.1, 1, 0.1], [-1, 0.2, 1], [0.1, -1, 0.3]])))
    assert len(decompose_simple(quad)) == 1
    v = unit(np.array([0, 0, 1.0]))
    eight = LoopOnSphere(unit(np.array([v, [0.3, 0.1, 1], [0.3, -0.1, 1], v, [-0.3, -0.05, 1], [-0.3, 0.2, 1]])))
    pieces = decompose_simple(eight)
    assert len(pieces) == 2
    assert all(p.is_simple() for p in pieces)


def test_decompose_rejects_long_arcs():
    with pytest.raises(ArcTooLong):
        decompose_simple(LoopOnSphere([[1, 0, 0], [-1, 1e-13, 0], [0, 0, 1]]))


def test_random_loops_match_degree_oracle():
    rng = np.random.default_rng(7)
    for _ in range(20):
        c0 = unit(rng.normal(size=3))
        pts = unit(c0 + 0.5 * rng.normal(size=(8, 3)))
        L = LoopOnSphere(pts)
        pieces = decompose_simple(L)
        assert all(p.is_simple() for p in pieces)
        assert sum(p.length for p in pieces) == pytest.approx(L.length, abs=1e-9)
        assert algebraic_area(L, -c0) == pytest.approx(degree_area(pts, -c0), abs=1e-3)


def test_algebraic_area_octant():
    e = np.eye(3)
    z = -np.ones(3) / math.sqrt(3)
    L = LoopOnSphere([e[0], e[1], e[2]])
    assert algebraic_area(L, z) == pytest.approx(math.pi / 2, abs=1e-12)
    assert algebraic_area(L.reversed(), z) == pytest.approx(-math.pi / 2, abs=1e-12)
    with pytest.raises(BasepointOnLoop):
        algebraic_area(L, unit(e[0] + e[1]))


def _path(rng, P, Q, k):
    ts = np.sort(rng.uniform(0, 1, k))
    pts = [unit((1 - t) * P + t * Q + 0.3 * rng.normal(size=3) * t * (1 - t)) for t in ts]
    return [P] + pts + [Q]


def test_algebraic_area_additive_over_paths():
    rng = np.random.default_rng(3)
    P, Q = unit([1, 0, 0.3]), unit([0, 1, 0.3])
    z = np.array([0, 0, -1.0])
    for _ in range(20):
        p1, p2, p3 = (_path(rng, P, Q, 3) for _ in range(3))

        def loop(a, b):
            return LoopOnSphere(a + b[::-1][1:-1])

        lhs = algebraic_area(loop(p1, p3), z)
        rhs = algebraic_area(loop(p1, p2), z) + algebraic_area(loop(p2, p3), z)
        assert lhs == pytest.approx(rhs, abs=1e-8)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.05, 3.0), st.integers(3, 64), unit_vec)
def test_isoperimetric_inequality(rho, k, c):
    L = circle_loop(c, rho, k)
    A = left_area(L.vertices)
    assert L.length ** 2 >= A * (4 * math.pi - A) - 1e-9
    # exact circle: equality
    ell, area = 2 * math.pi * math.sin(rho), 2 * math.pi * (1 - math.cos(rho))
    assert ell ** 2 == pytest.approx(area * (4 * math.pi - area), abs=1e-8)


# ---------------------------------------------------------------------------
# isosceles triangles

def test_rightriang_example():
    # equality at r = pi/2, strict below
    assert rightriang_theta(math.pi / 2, 0.2) == pytest.approx(0.05, abs=1e-15)
    for r in np.linspace(0.05, math.pi / 2 - 1e-3, 50):
        for lam in (0.01, 0.2, 0.7, 0.99):
            assert rightriang_theta(r, lam) < lam / 4


def test_isosceles_area_check_examples():
    assert isosceles_area_check(0.5, 1e-4, 0.01)
    rng = np.random.default_rng(11)
    done = 0
    while done < 100:
        r, th, lam = rng.uniform(0.05, 3.0), rng.uniform(0.001, 0.49), rng.uniform(0.01, 0.99)
        base = 2 * math.asin(min(1.0, math.sin(r) * math.sin(math.pi * th)))
        if base >= r * lam:
            with pytest.raises(DomainError):
                isosceles_area_check(r, th, lam)
            continue
        assert isosceles_area_check(r, th, lam)
        done += 1


def test_isosceles_area_by_vertices():
    rng = np.random.default_rng(5)
    for _ in range(50):
        r, th = rng.uniform(0.1, 3.0), rng.uniform(0.01, 0.49)
        O = np.array([0, 0, 1.0])
        A = np.array([math.sin(r), 0, math.cos(r)])
        a = 2 * math.pi * th
        B = np.array([math.sin(r) * math.cos(a), math.sin(r) * math.sin(a), math.cos(r)])
        assert isosceles_area(r, th) == pytest.approx(triangle_area_from_vertices(O, A, B), abs=1e-9)
