"""Spherical trigonometry, SO(3) helpers and algebraic area of loops on the unit sphere."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation as _ScipyRotation

from .errors import ArcTooLong, BasepointOnLoop, DegenerateTriangle, DomainError

DEGENERATE_EXCESS = 1e-12


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def geodesic_dist(u, v):
    """Arc distance between unit vectors, stable near 0 and near pi.

    Works on single vectors or on broadcastable stacks of shape (..., 3).
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    cr = np.linalg.norm(np.cross(u, v), axis=-1)
    dt = np.sum(u * v, axis=-1)
    out = np.arctan2(cr, dt)
    if out.ndim == 0:
        return float(out)
    return out


def slerp_point(a, t_dir, s):
    """Point at arclength s from a along the unit tangent t_dir."""
    return math.cos(s) * np.asarray(a) + math.sin(s) * np.asarray(t_dir)


def tangent_towards(p, q) -> np.ndarray:
    """Unit tangent at p of the minor arc from p to q."""
    p = np.asarray(p, dtype=float)
    w = np.asarray(q, dtype=float) - np.dot(p, q) * p
    n = np.linalg.norm(w)
    if n == 0.0:
        raise DomainError("tangent undefined for coincident or antipodal points")
    return w / n


def signed_triangle_area(p, a, b) -> float:
    """Signed area of the triangle (p, a, b) with minor-arc sides."""
    num = float(np.dot(p, np.cross(a, b)))
    den = 1.0 + float(np.dot(p, a) + np.dot(a, b) + np.dot(b, p))
    return 2.0 * math.atan2(num, den)


# ---------------------------------------------------------------------------
# triangles


def _half_angle(a: float, b: float, c: float) -> float:
    """Angle opposite side a of the spherical triangle with sides a, b, c.

    Half-angle formula with differences summed exactly, so needle
    triangles keep full relative accuracy.
    """
    s = math.fsum((a, b, c)) / 2.0
    sa = math.fsum((-a, b, c)) / 2.0
    sb = math.fsum((a, -b, c)) / 2.0
    sc = math.fsum((a, b, -c)) / 2.0
    num = math.sin(sb) * math.sin(sc)
    den = math.sin(s) * math.sin(sa)
    return 2.0 * math.atan2(math.sqrt(max(num, 0.0)), math.sqrt(max(den, 0.0)))


@dataclass(frozen=True)
class TriangleGeom:
    """Spherical triangle from its side lengths; alpha is opposite a, and so on."""

    a: float
    b: float
    c: float
    alpha: float = field(init=False)
    beta: float = field(init=False)
    gamma: float = field(init=False)

    def __post_init__(self):
        a, b, c = float(self.a), float(self.b), float(self.c)
        for x in (a, b, c):
            if not (0.0 < x < math.pi):
                raise DegenerateTriangle(f"side {x!r} outside (0, pi)")
        if a >= b + c or b >= a + c or c >= a + b or a + b + c >= 2 * math.pi:
            raise DegenerateTriangle(f"sides {(a, b, c)} violate the triangle inequalities")
        object.__setattr__(self, "alpha", _half_angle(a, b, c))
        object.__setattr__(self, "beta", _half_angle(b, c, a))
        object.__setattr__(self, "gamma", _half_angle(c, a, b))

    @classmethod
    def from_angles(cls, alpha: float, beta: float, gamma: float) -> "TriangleGeom":
        # polar law of cosines
        def side(A, B, C):
            cosv = (math.cos(A) + math.cos(B) * math.cos(C)) / (math.sin(B) * math.sin(C))
            return math.acos(min(1.0, max(-1.0, cosv)))

        if alpha + beta + gamma <= math.pi:
            raise DegenerateTriangle("angle sum must exceed pi")
        return cls(side(alpha, beta, gamma), side(beta, gamma, alpha), side(gamma, alpha, beta))

    @property
    def sides(self):
        return (self.a, self.b, self.c)

    @property
    def angles(self):
        return (self.alpha, self.beta, self.gamma)

    @property
    def excess(self) -> float:
        return self.alpha + self.beta + self.gamma - math.pi


def triangle_area(t: TriangleGeom) -> float:
    ex = t.excess
    if ex < DEGENERATE_EXCESS:
        raise DegenerateTriangle(f"excess {ex:.3e} below {DEGENERATE_EXCESS}")
    return ex


def triangle_area_from_vertices(p, q, r) -> float:
    return abs(signed_triangle_area(p, q, r))


def solve_hypotenuse(leg: float, theta: float) -> float:
    """Hypotenuse |OP| = arctan(tan|OQ| / cos(pi*theta)) of a right triangle."""
    if not (0.0 <= theta < 0.5):
        raise DomainError("theta must lie in [0, 1/2)")
    if not (0.0 < leg < math.pi / 2):
        raise DomainError("leg must lie in (0, pi/2)")
    return math.atan(math.tan(leg) / math.cos(math.pi * theta))


# ---------------------------------------------------------------------------
# rotations


def rotation(axis, angle: float) -> np.ndarray:
    """Rotation by `angle` about `axis`, counterclockwise seen from the tip of the axis."""
    k = unit(axis)
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + math.sin(angle) * K + (1.0 - math.cos(angle)) * (K @ K)


def half_turn(axis) -> np.ndarray:
    k = unit(axis)
    return 2.0 * np.outer(k, k) - np.eye(3)


def is_rotation(q, tol: float = 1e-10) -> bool:
    q = np.asarray(q, dtype=float)
    return (
        q.shape == (3, 3)
        and np.allclose(q.T @ q, np.eye(3), atol=tol)
        and abs(np.linalg.det(q) - 1.0) < tol
    )


def rotation_angle(q) -> float:
    """Angle in [0, pi]; atan2 of the skew and trace parts keeps precision near 0 and pi."""
    q = np.asarray(q, dtype=float)
    w = np.array([q[2, 1] - q[1, 2], q[0, 2] - q[2, 0], q[1, 0] - q[0, 1]])
    return math.atan2(0.5 * float(np.linalg.norm(w)), 0.5 * (float(np.trace(q)) - 1.0))


def rot(q) -> float:
    """Rotation number in [0, 1/2]: rotation angle divided by 2 pi."""
    return min(0.5, max(0.0, rotation_angle(q) / (2.0 * math.pi)))


def rotation_axis(q, tol: float = 1e-10):
    """Unit axis of q with its first nonzero coordinate positive, or None for the identity."""
    rv = _ScipyRotation.from_matrix(np.asarray(q, dtype=float)).as_rotvec()
    ang = np.linalg.norm(rv)
    if ang < tol:
        return None
    ax = rv / ang
    for comp in ax:
        if abs(comp) > 1e-12:
            if comp < 0:
                ax = -ax
            break
    return ax


def axes_angle(u, v) -> float:
    """Angle in [0, pi/2] between the lines spanned by u and v."""
    d = geodesic_dist(unit(u), unit(v))
    return min(d, math.pi - d)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    return _ScipyRotation.random(random_state=rng).as_matrix()


# ---------------------------------------------------------------------------
# loops


class LoopOnSphere:
    """Closed piecewise-geodesic loop; consecutive vertices joined by minor arcs."""

    def __init__(self, vertices):
        v = unit(np.atleast_2d(np.asarray(vertices, dtype=float)))
        if len(v) > 1 and np.allclose(v[0], v[-1], atol=1e-14):
            v = v[:-1]
        if len(v) < 2:
            raise DomainError("a loop needs at least two vertices")
        self.vertices = v
        self.vertices.setflags(write=False)
        nxt = np.roll(v, -1, axis=0)
        self.arc_lengths = np.asarray(geodesic_dist(v, nxt), dtype=float).reshape(-1)

    def __len__(self):
        return len(self.vertices)

    @property
    def length(self) -> float:
        return float(math.fsum(self.arc_lengths))

    def reversed(self) -> "LoopOnSphere":
        return LoopOnSphere(self.vertices[::-1])

    def check_arcs(self):
        if np.any(self.arc_lengths >= math.pi - 1e-12):
            raise ArcTooLong("loop arc of length >= pi")

    def is_simple(self, tol: float = 1e-12) -> bool:
        return _find_split(self.vertices, tol) is None


def point_arc_distance(p, a, b) -> float:
    """Distance from p to the minor arc a-b."""
    n = np.cross(a, b)
    nn = np.linalg.norm(n)
    if nn < 1e-300:
        return min(geodesic_dist(p, a), geodesic_dist(p, b))
    n = n / nn
    proj = p - np.dot(p, n) * n
    pn = np.linalg.norm(proj)
    if pn > 1e-300:
        f = proj / pn
        if np.dot(np.cross(a, f), n) >= 0 and np.dot(np.cross(f, b), n) >= 0:
            return abs(math.asin(min(1.0, max(-1.0, float(np.dot(p, n))))))
    return min(geodesic_dist(p, a), geodesic_dist(p, b))


def _arc_intersections(a0, a1, b0, b1, tol):
    """Intersection points of two minor arcs, with arclength positions along each."""
    na = np.cross(a0, a1)
    nb = np.cross(b0, b1)
    la, lb = np.linalg.norm(na), np.linalg.norm(nb)
    na, nb = na / la, nb / lb
    d = np.cross(na, nb)
    dn = np.linalg.norm(d)
    if dn < 1e-12:
        # same great circle: overlapping collinear arcs count as degenerate
        if abs(np.dot(na, nb)) > 0.5:
            for p in (b0, b1):
                if point_arc_distance(p, a0, a1) < tol:
                    return "collinear"
            for p in (a0, a1):
                if point_arc_distance(p, b0, b1) < tol:
                    return "collinear"
        return []
    d = d / dn
    out = []
    for x in (d, -d):
        ok_a = np.dot(np.cross(a0, x), na) >= -tol and np.dot(np.cross(x, a1), na) >= -tol
        ok_b = np.dot(np.cross(b0, x), nb) >= -tol and np.dot(np.cross(x, b1), nb) >= -tol
        if ok_a and ok_b and np.dot(x, a0 + a1) > 0 and np.dot(x, b0 + b1) > 0:
            out.append((x, geodesic_dist(a0, x), geodesic_dist(b0, x)))
    return out


def _find_split(v, tol, merge=1e-9):
    """Self-intersection of the closed polygon v with the smallest parameter gap."""
    k = len(v)
    if k < 3:
        return None
    nxt = np.roll(v, -1, axis=0)
    lens = np.asarray(geodesic_dist(v, nxt), dtype=float).reshape(-1)
    cum = np.concatenate([[0.0], np.cumsum(lens)])
    total = cum[-1]
    best = None
    for i in range(k):
        for j in range(i + 1, k):
            if j == i + 1 or (i == 0 and j == k - 1):
                continue
            hits = _arc_intersections(v[i], nxt[i], v[j], nxt[j], tol)
            if hits == "collinear":
                return "collinear"
            for x, si, sj in hits:
                pa = cum[i] + si
                pb = cum[j] + sj
                gap = pb - pa
                if gap < merge or total - gap < merge:
                    continue
                g = min(gap, total - gap)
                if best is None or g < best[0]:
                    best = (g, pa, pb, x)
    if best is None:
        return None
    return best[1], best[2], best[3], cum, total


def _cut(v, cum, pa, pb, x, merge=1e-9):
    """Split the polygon at positions pa < pb, both mapped to the point x."""
    k = len(v)
    pos = cum[:k]
    inner = [x] + [v[i] for i in range(k) if pa + merge < pos[i] < pb - merge]
    outer = [x] + [v[i] for i in range(k) if pos[i] > pb + merge] + [
        v[i] for i in range(k) if pos[i] < pa - merge
    ]
    return np.array(inner), np.array(outer)


def decompose_simple(loop: LoopOnSphere, max_pieces: int = 10_000) -> list:
    """Split a loop at self-intersections into simple loops.

    Each split happens at the self-intersection whose two passes are
    closest along the loop; every split removes that intersection, so the
    process terminates.  Overlapping collinear arcs are resolved by a
    deterministic 1e-9 nudge of the offending vertices.
    """
    loop.check_arcs()
    work = [np.array(loop.vertices)]
    out = []
    nudges = 0
    while work:
        v = work.pop()
        if len(v) < 3:
            if len(v) == 2 and geodesic_dist(v[0], v[1]) > 0:
                out.append(LoopOnSphere(v))
            continue
        hit = _find_split(v, 1e-13)
        if hit == "collinear":
            nudges += 1
            if nudges > 100:
                raise DomainError("could not remove collinear overlaps")
            rng = np.random.default_rng(nudges)
            v = unit(v + 1e-9 * rng.standard_normal(v.shape))
            work.append(v)
            continue
        if hit is None:
            out.append(LoopOnSphere(v))
            continue
        pa, pb, x, cum, _ = hit
        inner, outer = _cut(v, cum, pa, pb, x)
        work.extend([outer, inner])
        if len(out) + len(work) > max_pieces:
            raise DomainError("too many pieces")
    return out


def left_area(v) -> float:
    """Area of the region to the left of a simple closed polygon (Gauss-Bonnet)."""
    v = np.asarray(v, dtype=float)
    k = len(v)
    turn = 0.0
    for i in range(k):
        u, p, w = v[i - 1], v[i], v[(i + 1) % k]
        t_in = -tangent_towards(p, u)
        t_out = tangent_towards(p, w)
        turn += math.atan2(float(np.dot(p, np.cross(t_in, t_out))), float(np.dot(t_in, t_out)))
    return 2.0 * math.pi - turn


def _fan_area(v, apex) -> float:
    k = len(v)
    return math.fsum(signed_triangle_area(apex, v[i], v[(i + 1) % k]) for i in range(k))


def simple_signed_area(v, z) -> float:
    """Signed area of the z-free complementary component of a simple loop.

    Positive when the loop runs counterclockwise around that component.
    """
    v = np.asarray(v, dtype=float)
    if len(v) < 3:
        return 0.0
    a_left = left_area(v)
    fan = _fan_area(v, -np.asarray(z, dtype=float))
    z_left = fan < a_left - 2.0 * math.pi
    return a_left - 4.0 * math.pi if z_left else a_left


def algebraic_area(loop: LoopOnSphere, z, tol: float = 1e-9) -> float:
    """Alg_Z of a loop: the sum of signed areas of its simple pieces."""
    z = unit(z)
    v = loop.vertices
    k = len(v)
    for i in range(k):
        if point_arc_distance(z, v[i], v[(i + 1) % k]) <= tol:
            raise BasepointOnLoop("basepoint lies on the loop")
    pieces = decompose_simple(loop)
    return math.fsum(simple_signed_area(p.vertices, z) for p in pieces)


def circle_loop(center, radius: float, k: int) -> LoopOnSphere:
    """Regular k-gon inscribed in the circle of given radius, counterclockwise."""
    c = unit(center)
    e1 = unit(np.cross(c, [1.0, 0.0, 0.0]) if abs(c[0]) < 0.9 else np.cross(c, [0.0, 1.0, 0.0]))
    e2 = np.cross(c, e1)
    phi = 2 * math.pi * np.arange(k) / k
    pts = (
        math.cos(radius) * c[None, :]
        + math.sin(radius) * (np.cos(phi)[:, None] * e1[None, :] + np.sin(phi)[:, None] * e2[None, :])
    )
    return LoopOnSphere(pts)


# ---------------------------------------------------------------------------
# isosceles triangles


def isosceles_base(r: float, theta: float) -> float:
    """Base of the isosceles triangle with legs r and apex angle 2 pi theta."""
    return 2.0 * math.asin(min(1.0, math.sin(r) * math.sin(math.pi * theta)))


def isosceles_area(r: float, theta: float) -> float:
    """Area of the solid triangle with legs r and interior apex angle 2 pi theta, theta in (0, 1)."""
    if not (0.0 < theta < 1.0) or theta == 0.5:
        raise DomainError("apex angle must lie in (0, 2 pi) and differ from pi")
    if not (0.0 < r < math.pi):
        raise DomainError("legs must lie in (0, pi)")
    if theta > 0.5:
        return 4.0 * math.pi - isosceles_area(r, 1.0 - theta)
    a = math.pi * theta
    b = math.atan2(math.cos(a), math.cos(r) * math.sin(a))
    return 2.0 * a + 2.0 * b - math.pi


def isosceles_area_check(r: float, theta: float, lam1: float) -> bool:
    """|Area(T) - 4 pi theta| < pi lam1 for the isosceles triangle with base below r*lam1."""
    if not (0.0 < lam1 < 1.0):
        raise DomainError("lambda_1 must lie in (0, 1)")
    base = isosceles_base(r, theta)
    if not base < r * lam1:
        raise DomainError("base must be shorter than r*lambda_1")
    return abs(isosceles_area(r, theta) - 4.0 * math.pi * theta) < math.pi * lam1


def rightriang_theta(r: float, lam1: float) -> float:
    """theta of the isosceles triangle with legs r, r <= pi/2, and base lam1*r."""
    if not (0.0 < r <= math.pi / 2) or not (0.0 < lam1 < 1.0):
        raise DomainError("need r in (0, pi/2] and lambda_1 in (0, 1)")
    return math.asin(math.sin(r * lam1 / 2.0) / math.sin(r)) / math.pi
