"""Closed oriented spherical cone surfaces as glued spherical triangles.

Conventions.  Triangle t has corners 0, 1, 2 in counterclockwise order and
side k runs from corner k to corner k+1.  A gluing pairs side (t, k) with
side (u, j) reversing direction: corner k of t meets corner j+1 of u and
corner k+1 of t meets corner j of u.  Side lengths are the source of truth;
angles, charts and transition rotations are derived from them.

Every triangle carries a chart, an embedding of its corners on the unit
sphere.  The chart puts the corner opposite the longest side at the north
pole so that short sides are measured with full relative precision.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InvalidSurface, LoopThroughCone, TopologyError
from .sphere_kernel import (
    TriangleGeom,
    _half_angle,
    geodesic_dist,
    signed_triangle_area,
)

TOL_METRIC = 1e-10
TOL_ANGLE = 1e-9
TOL_AREA = 1e-8
FORMAT_VERSION = 1

_EZ = np.array([0.0, 0.0, 1.0])


def _turn(p, t, phi):
    """Rotate tangent t at p counterclockwise by phi."""
    return math.cos(phi) * t + math.sin(phi) * np.cross(p, t)


def _build_chart(sides, angles):
    lengths = list(sides)
    longest = max(lengths)
    # corner opposite side k is k+2; ties resolved towards the lowest corner
    cands = [(k + 2) % 3 for k in range(3) if lengths[k] >= longest - 1e-12]
    p = min(cands)
    q, r = (p + 1) % 3, (p + 2) % 3
    a_first = sides[p]
    a_last = sides[r]
    V = np.zeros((3, 3))
    Tn = np.zeros((3, 3))
    Tp = np.zeros((3, 3))
    u = np.array([math.cos(angles[p]), math.sin(angles[p]), 0.0])
    V[p] = _EZ
    V[q] = [math.sin(a_first), 0.0, math.cos(a_first)]
    V[r] = math.cos(a_last) * _EZ + math.sin(a_last) * u
    Tn[p] = [1.0, 0.0, 0.0]
    Tp[p] = u
    Tp[q] = [-math.cos(a_first), 0.0, math.sin(a_first)]
    Tn[q] = _turn(V[q], Tp[q], -angles[q])
    Tn[r] = math.sin(a_last) * _EZ - math.cos(a_last) * u
    Tp[r] = _turn(V[r], Tn[r], angles[r])
    return V, Tn, Tp


def corner_angles_from_sides(s0, s1, s2):
    """Angles at corners 0, 1, 2 for sides s0 (0->1), s1 (1->2), s2 (2->0)."""
    return (_half_angle(s1, s2, s0), _half_angle(s2, s0, s1), _half_angle(s0, s1, s2))


class ConeSurface:
    """Triangulated spherical surface with marked cone points.

    sides: (F, 3) side lengths.  glue: (F, 3, 2) partner (triangle, side) or
    (-1, -1) on a boundary side.  marked: one representative corner
    (triangle, corner) per marked point, in label order.
    """

    def __init__(self, sides, glue, marked, labels=None, validate=True):
        self.sides = np.array(sides, dtype=float).reshape(-1, 3)
        self.sides.setflags(write=False)
        self.glue = np.array(glue, dtype=int).reshape(-1, 3, 2)
        self.glue.setflags(write=False)
        self.F = len(self.sides)
        self._marked_corners = [tuple(int(x) for x in mc) for mc in marked]
        self.labels = list(labels) if labels is not None else [f"x{i+1}" for i in range(len(marked))]
        if len(self.labels) != len(self._marked_corners):
            raise InvalidSurface("one label per marked point required")
        self.has_boundary = bool(np.any(self.glue[:, :, 0] < 0))
        self._derive()
        if validate:
            self.validate()

    # ------------------------------------------------------------------ derived data
    def _derive(self):
        F = self.F
        self.triangles = []
        ang = np.zeros((F, 3))
        for t in range(F):
            s0, s1, s2 = self.sides[t]
            TriangleGeom(s1, s2, s0)  # raises on invalid sides
            ang[t] = corner_angles_from_sides(s0, s1, s2)
            self.triangles.append(TriangleGeom(s1, s2, s0))
        self.angles = ang
        self.excess = ang.sum(axis=1) - math.pi

        parent = list(range(3 * F))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        def union(i, j):
            ri, rj = find(i), find(j)
            if ri != rj:
                if ri < rj:
                    parent[rj] = ri
                else:
                    parent[ri] = rj

        for t in range(F):
            for k in range(3):
                u, j = self.glue[t, k]
                if u < 0:
                    continue
                union(3 * t + k, 3 * u + (j + 1) % 3)
                union(3 * t + (k + 1) % 3, 3 * u + j)
        roots = {}
        vid = np.zeros((F, 3), dtype=int)
        for t in range(F):
            for c in range(3):
                r = find(3 * t + c)
                if r not in roots:
                    roots[r] = len(roots)
                vid[t, c] = roots[r]
        self.vertex_of = vid
        self.vertex_of.setflags(write=False)
        self.V = len(roots)
        self.vertex_angle = np.zeros(self.V)
        for t in range(F):
            for c in range(3):
                self.vertex_angle[vid[t, c]] += ang[t, c]
        self.corners_of = [[] for _ in range(self.V)]
        for t in range(F):
            for c in range(3):
                self.corners_of[vid[t, c]].append((t, c))
        self.marked = [int(vid[t, c]) for t, c in self._marked_corners]
        self.boundary_vertices = set()
        for t in range(F):
            for k in range(3):
                if self.glue[t, k, 0] < 0:
                    self.boundary_vertices.add(int(vid[t, k]))
                    self.boundary_vertices.add(int(vid[t, (k + 1) % 3]))

        charts = np.zeros((F, 3, 3))
        tn = np.zeros((F, 3, 3))
        tp = np.zeros((F, 3, 3))
        for t in range(F):
            charts[t], tn[t], tp[t] = _build_chart(self.sides[t], ang[t])
        self.charts, self.tan_next, self.tan_prev = charts, tn, tp
        trans = np.full((F, 3, 3, 3), np.nan)
        for t in range(F):
            for k in range(3):
                u, j = self.glue[t, k]
                if u < 0:
                    continue
                P, T = charts[t, k], tn[t, k]
                P2, T2 = charts[u, (j + 1) % 3], tp[u, (j + 1) % 3]
                Fa = np.column_stack([P, T, np.cross(P, T)])
                Fb = np.column_stack([P2, T2, np.cross(P2, T2)])
                trans[t, k] = Fb @ Fa.T
        self.transition = trans

    # ------------------------------------------------------------------ validation
    def validate(self):
        F = self.F
        for t in range(F):
            for k in range(3):
                u, j = self.glue[t, k]
                if u < 0:
                    continue
                if not (0 <= u < F and 0 <= j < 3):
                    raise InvalidSurface(f"bad gluing target at {(t, k)}")
                if tuple(self.glue[u, j]) != (t, k):
                    raise InvalidSurface(f"gluing is not an involution at {(t, k)}")
                if (u, j) == (t, k):
                    raise InvalidSurface("a side cannot be glued to itself")
                if abs(self.sides[t, k] - self.sides[u, j]) > TOL_METRIC:
                    raise InvalidSurface(f"glued lengths differ at {(t, k)}")
        seen = {0}
        stack = [0]
        while stack:
            t = stack.pop()
            for k in range(3):
                u = int(self.glue[t, k, 0])
                if u >= 0 and u not in seen:
                    seen.add(u)
                    stack.append(u)
        if len(seen) != F:
            raise TopologyError("surface is not connected")
        if len(set(self.marked)) != len(self.marked):
            raise InvalidSurface("marked points must be distinct vertices")
        for v in range(self.V):
            if v in self.boundary_vertices:
                continue
            if v not in self.marked and abs(self.vertex_angle[v] - 2 * math.pi) > TOL_ANGLE:
                raise InvalidSurface(
                    f"unmarked vertex {v} has angle {self.vertex_angle[v]!r}, not 2 pi"
                )
        for v in self.marked:
            if v in self.boundary_vertices:
                raise InvalidSurface("marked points must be interior")
        if not self.has_boundary and self.euler_characteristic % 2:
            raise TopologyError("odd Euler characteristic on a closed orientable surface")

    # ------------------------------------------------------------------ invariants
    @property
    def n(self) -> int:
        return len(self.marked)

    @property
    def E(self) -> int:
        glued = int(np.sum(self.glue[:, :, 0] >= 0))
        return glued // 2 + (3 * self.F - glued)

    @property
    def euler_characteristic(self) -> int:
        return self.V - self.E + self.F

    @property
    def boundary_components(self) -> int:
        if not self.has_boundary:
            return 0
        nxt = {}
        for t in range(self.F):
            for k in range(3):
                if self.glue[t, k, 0] < 0:
                    nxt[int(self.vertex_of[t, k])] = int(self.vertex_of[t, (k + 1) % 3])
        seen, comps = set(), 0
        for v in nxt:
            if v in seen:
                continue
            comps += 1
            while v not in seen:
                seen.add(v)
                v = nxt[v]
        return comps

    @property
    def genus(self) -> int:
        return (2 - self.euler_characteristic - self.boundary_components) // 2

    @property
    def chi_dot(self) -> int:
        return self.euler_characteristic - self.n

    @property
    def theta(self) -> np.ndarray:
        return np.array([self.vertex_angle[v] / (2 * math.pi) for v in self.marked])

    @property
    def theta_norm(self) -> float:
        return float(math.fsum(self.theta))

    @property
    def chi_S_theta(self) -> float:
        return self.chi_dot + self.theta_norm

    @property
    def area(self) -> float:
        return float(math.fsum(self.excess))

    @property
    def boundary_turning(self) -> float:
        """Total geodesic turning of the boundary polygon."""
        return math.fsum(math.pi - self.vertex_angle[v] for v in self.boundary_vertices)

    def gauss_bonnet_defect(self) -> float:
        expected = 2 * math.pi * (self.chi_dot + self.theta_norm) - self.boundary_turning
        return self.area - expected

    def marked_index(self, v: int) -> int:
        return self.marked.index(v)

    # ------------------------------------------------------------------ navigation
    def neighbor(self, t: int, k: int):
        u, j = self.glue[t, k]
        return (int(u), int(j)) if u >= 0 else None

    def corners_around(self, v: int):
        """Corners at vertex v in counterclockwise cyclic order."""
        start = self.corners_of[v][0]
        if v in self.boundary_vertices:
            # walk clockwise to the boundary first
            t, c = start
            for _ in range(len(self.corners_of[v]) + 1):
                nb = self.neighbor(t, c)
                if nb is None:
                    break
                u, j = nb
                t, c = u, (j + 1) % 3
            start = (t, c)
        out = [start]
        t, c = start
        while True:
            nb = self.neighbor(t, (c + 2) % 3)
            if nb is None:
                break
            t, c = nb
            if (t, c) == start:
                break
            out.append((t, c))
            if len(out) > len(self.corners_of[v]):
                raise InvalidSurface("corner cycle does not close")
        return out

    def side_between(self, v: int, w: int):
        """Sides (t, k) running from vertex v to vertex w."""
        out = []
        for t in range(self.F):
            for k in range(3):
                if self.vertex_of[t, k] == v and self.vertex_of[t, (k + 1) % 3] == w:
                    out.append((t, k))
        return out

    def point_on_side(self, t: int, k: int, s: float) -> np.ndarray:
        return math.cos(s) * self.charts[t, k] + math.sin(s) * self.tan_next[t, k]

    def vertex_position(self, v: int):
        t, c = self.corners_of[v][0]
        return t, self.charts[t, c]

    # ------------------------------------------------------------------ serialization
    def to_json(self) -> str:
        def f(x):
            return float(format(float(x), ".17g"))

        data = {
            "format": "spherecone-surface",
            "version": FORMAT_VERSION,
            "triangles": [[f(x) for x in row] for row in self.sides],
            "gluing": [
                [t, k, int(self.glue[t, k, 0]), int(self.glue[t, k, 1])]
                for t in range(self.F)
                for k in range(3)
                if self.glue[t, k, 0] >= 0 and (t, k) < tuple(self.glue[t, k])
            ],
            "marked": [list(mc) for mc in self._marked_corners],
            "labels": self.labels,
        }
        return json.dumps(data)

    @classmethod
    def from_json(cls, text: str) -> "ConeSurface":
        data = json.loads(text)
        if data.get("version") != FORMAT_VERSION:
            raise InvalidSurface("unsupported surface format version")
        F = len(data["triangles"])
        glue = -np.ones((F, 3, 2), dtype=int)
        for t, k, u, j in data["gluing"]:
            glue[t, k] = (u, j)
            glue[u, j] = (t, k)
        return cls(data["triangles"], glue, data["marked"], data["labels"])

    def __repr__(self):
        return (
            f"ConeSurface(F={self.F}, V={self.V}, genus={self.genus}, n={self.n}, "
            f"theta={np.round(self.theta, 6).tolist()})"
        )


# ---------------------------------------------------------------------------
# constructors


def _mirror_sides(s):
    return (s[2], s[1], s[0])


_MIRROR_SIDE = (2, 1, 0)
_MIRROR_CORNER = (0, 2, 1)


def double_polygon(poly, internal, marked_corners, labels=None) -> ConeSurface:
    """Double of a triangulated spherical polygon.

    poly: list of side triples (or TriangleGeom); internal: pairs
    ((t, k), (u, j)) of glued interior sides; marked_corners: polygon corners
    (t, c) that become cone points.  Sheet A keeps the triangles as given and
    sheet B holds their mirror images, indices shifted by len(poly).
    """
    tri = [tuple(p.sides) if isinstance(p, TriangleGeom) else tuple(p) for p in poly]
    m = len(tri)
    inner = -np.ones((m, 3, 2), dtype=int)
    for (t, k), (u, j) in internal:
        if inner[t, k, 0] >= 0 or inner[u, j, 0] >= 0:
            raise TopologyError("side glued twice")
        inner[t, k] = (u, j)
        inner[u, j] = (t, k)
    # polygon topology: a disk has V - E + F = 1 and one boundary cycle
    probe = ConeSurface(tri, inner, [], [], validate=False)
    if probe.euler_characteristic != 1 or probe.boundary_components != 1:
        raise TopologyError("polygon is not simply connected")
    sides = list(tri) + [_mirror_sides(s) for s in tri]
    glue = -np.ones((2 * m, 3, 2), dtype=int)
    for t in range(m):
        for k in range(3):
            u, j = inner[t, k]
            if u >= 0:
                glue[t, k] = (u, j)
                glue[m + t, _MIRROR_SIDE[k]] = (m + u, _MIRROR_SIDE[j])
            else:
                glue[t, k] = (m + t, _MIRROR_SIDE[k])
                glue[m + t, _MIRROR_SIDE[k]] = (t, k)
    return ConeSurface(sides, glue, [tuple(mc) for mc in marked_corners], labels)


def double_triangle(angles, labels=None) -> ConeSurface:
    """Double of the spherical triangle with the given corner angles (radians, each < pi)."""
    a0, a1, a2 = angles
    if max(angles) >= math.pi:
        raise DomainError("corner angles must be below pi; use a fan for larger angles")
    g = TriangleGeom.from_angles(a0, a1, a2)
    # corner c of our triangle has angle angles[c]; side k joins corners k, k+1
    # and is opposite corner k+2
    opp = {0: g.a, 1: g.b, 2: g.c}
    sides = (opp[2], opp[0], opp[1])
    return double_polygon([sides], [], [(0, 0), (0, 1), (0, 2)], labels)


def octant_double() -> ConeSurface:
    h = math.pi / 2
    return double_polygon([(h, h, h)], [], [(0, 0), (0, 1), (0, 2)])


def lune_double(theta: float) -> ConeSurface:
    """Double of the lune of angle pi*theta: a sphere with two cone points of angle 2 pi theta.

    The lune is cut by meridians into K sub-lunes of angle below pi/2 and each
    sub-lune by the equator into two triangles.
    """
    if not (0.0 < theta < 2.0):
        raise DomainError("theta must lie in (0, 2)")
    h = math.pi / 2
    K = max(1, math.ceil(2 * theta))
    a = math.pi * theta / K
    # north triangles (N, E_i, E_i+1), south triangles (S, E_i+1, E_i)
    poly = [(h, a, h)] * (2 * K)
    internal = [((i, 1), (K + i, 1)) for i in range(K)]
    internal += [((i, 2), (i + 1, 0)) for i in range(K - 1)]
    internal += [((K + i, 0), (K + i + 1, 2)) for i in range(K - 1)]
    return double_polygon(poly, internal, [(0, 0), (K, 0)])


def bigon_glue(g: int, theta: float) -> ConeSurface:
    """Genus-g surface with one cone point of angle 2 pi (theta + 2g - 1).

    The lune with vertices at the poles and angle pi*theta has both sides cut
    into 2g segments of length pi/(2g); reading the 4g boundary segments
    counterclockwise from the north pole as a_1 b_1 a_1' b_1' ... they are glued
    a_k to a_k' and b_k to b_k' with reversed orientation.  The lune is cut by
    auxiliary meridians into sub-lunes of angle at most pi/2 and triangulated.
    """
    if g < 1 or int(g) != g:
        raise DomainError("genus must be a positive integer")
    if theta <= 0:
        raise DomainError("theta must be positive")
    g = int(g)
    total = math.pi * theta
    K = max(1, math.ceil(theta * 2.0 - 1e-12))
    seg = 2 * g
    lons = [total * i / K for i in range(K + 1)]
    colat = [math.pi * j / seg for j in range(seg + 1)]

    def pos(i, j):
        if j == 0:
            return np.array([0.0, 0.0, 1.0])
        if j == seg:
            return np.array([0.0, 0.0, -1.0])
        return np.array(
            [math.sin(colat[j]) * math.cos(lons[i]), math.sin(colat[j]) * math.sin(lons[i]), math.cos(colat[j])]
        )

    # node keys: ("N",), ("S",), (i, j) for meridian i and 0<j<seg
    def key(i, j):
        if j == 0:
            return ("N",)
        if j == seg:
            return ("S",)
        return (i, j)

    tris = []  # list of corner keys, ccw
    for i in range(K):
        for j in range(seg):
            a, b = key(i, j), key(i, j + 1)
            c, d = key(i + 1, j + 1), key(i + 1, j)
            if j == 0:
                tris.append((a, b, c))
            elif j == seg - 1:
                tris.append((a, b, d))
            else:
                tris.append((a, b, c))
                tris.append((a, c, d))
    coords = {}
    for i in range(K + 1):
        for j in range(seg + 1):
            coords[key(i, j)] = pos(i, j)
    # orientation: moving south along meridian 0 keeps the lune on the left
    sides = []
    for tri in tris:
        p = [coords[x] for x in tri]
        if signed_triangle_area(*p) <= 0:
            raise InvalidSurface("bigon triangulation is not counterclockwise")
        sides.append([geodesic_dist(p[k], p[(k + 1) % 3]) for k in range(3)])
    edge_owner = {}
    for t, tri in enumerate(tris):
        for k in range(3):
            edge_owner[(tri[k], tri[(k + 1) % 3])] = (t, k)
    glue = -np.ones((len(tris), 3, 2), dtype=int)
    for (a, b), (t, k) in edge_owner.items():
        if (b, a) in edge_owner:
            glue[t, k] = edge_owner[(b, a)]
    # boundary segments in counterclockwise order starting at the north pole
    bseg = []
    for j in range(seg):
        bseg.append(edge_owner[(key(0, j), key(0, j + 1))])
    for j in range(seg, 0, -1):
        bseg.append(edge_owner[(key(K, j), key(K, j - 1))])
    for blk in range(g):
        s0, s1, s2, s3 = bseg[4 * blk : 4 * blk + 4]
        for x, y in ((s0, s2), (s1, s3)):
            glue[x[0], x[1]] = y
            glue[y[0], y[1]] = x
    # the single cone point is the north pole
    t0 = next(t for t, tri in enumerate(tris) if ("N",) in tri)
    c0 = tris[t0].index(("N",))
    return ConeSurface(sides, glue, [(t0, c0)], ["x0"])


def mark_smooth_point_on_edge(s: ConeSurface, edge, t_len: float, label=None) -> ConeSurface:
    """Split side edge=(t, k) at arclength t_len from its first corner and mark the new vertex."""
    t, k = edge
    L = s.sides[t, k]
    if not (0.0 < t_len < L):
        raise DomainError("split point must be strictly inside the edge")
    nb = s.neighbor(t, k)
    if nb is None:
        raise DomainError("cannot mark a point on a boundary side")
    u, j = nb
    B, C = (k + 1) % 3, (k + 2) % 3
    # in u: corner j is B, corner j+1 is A, corner j+2 is D
    jA, jD = (j + 1) % 3, (j + 2) % 3
    P = s.point_on_side(t, k, t_len)
    PC = geodesic_dist(P, s.charts[t, C])
    P2 = s.point_on_side(u, j, L - t_len)
    PD = geodesic_dist(P2, s.charts[u, jD])
    sides = [list(r) for r in s.sides]
    glue = [[tuple(g) for g in row] for row in s.glue]
    n = s.F
    t1, t2, u1, u2 = t, n, u, n + 1
    old = {
        "tCA": glue[t][C],
        "tBC": glue[t][B],
        "uDB": glue[u][jD],
        "uAD": glue[u][jA],
    }
    sides[t1] = [t_len, PC, s.sides[t, C]]
    sides.append([L - t_len, s.sides[t, B], PC])
    sides[u1] = [L - t_len, PD, s.sides[u, jD]]
    sides.append([t_len, s.sides[u, jA], PD])
    glue[t1] = [None, None, None]
    glue[u1] = [None, None, None]
    glue.append([None, None, None])
    glue.append([None, None, None])

    def link(a, b):
        glue[a[0]][a[1]] = b
        glue[b[0]][b[1]] = a

    link((t1, 0), (u2, 0))
    link((t2, 0), (u1, 0))
    link((t1, 1), (t2, 2))
    link((u1, 1), (u2, 2))
    for new_side, tag in (((t1, 2), "tCA"), ((t2, 1), "tBC"), ((u1, 2), "uDB"), ((u2, 1), "uAD")):
        target = old[tag]
        if target[0] < 0:
            glue[new_side[0]][new_side[1]] = (-1, -1)
            continue
        target = _remap_side(target, t, u, C, B, jD, jA, (t1, t2, u1, u2))
        link(new_side, target)
    marked = [_remap_corner(mc, t, k, u, j, (t1, t2, u1, u2)) for mc in s._marked_corners]
    marked.append((t1, 1))
    labels = list(s.labels) + [label if label is not None else f"x{len(s.labels) + 1}"]
    return ConeSurface(sides, np.array(glue, dtype=int), marked, labels)


def _remap_side(side, t, u, C, B, jD, jA, new):
    """Where an old side of triangle t or u lives after the split."""
    t1, t2, u1, u2 = new
    tt, kk = side
    if tt == t:
        return (t1, 2) if kk == C else (t2, 1)
    if tt == u:
        return (u1, 2) if kk == jD else (u2, 1)
    return (int(tt), int(kk))


def _remap_corner(mc, t, k, u, j, new):
    t1, t2, u1, u2 = new
    tt, cc = mc
    if tt == t:
        return {k: (t1, 0), (k + 1) % 3: (t2, 1), (k + 2) % 3: (t1, 2)}[cc]
    if tt == u:
        return {j: (u1, 0), (j + 1) % 3: (u2, 1), (j + 2) % 3: (u1, 2)}[cc]
    return mc


def appendix_family(N: int, m: int, eps: float) -> ConeSurface:
    """Double of the sector of angle pi(2N + 1/2) about the pole, with m+1 marked smooth points.

    Cone points x1 (pole, theta = 2N + 1/2), x2 and x3 (equator, theta = 1/2),
    and y_0..y_m on the meridian x1x2 at distance e^i from x1, where
    e = eps / (4 pi |theta|_1).  The sector is a fan of 4N+1 octants.
    """
    if N < 0 or m < 0 or int(N) != N or int(m) != m:
        raise DomainError("N and m must be nonnegative integers")
    if not (0.0 < eps < 0.5):
        raise DomainError("eps must lie in (0, 1/2)")
    h = math.pi / 2
    K = 4 * N + 1
    poly = [(h, h, h)] * K
    internal = [((i, 2), (i + 1, 0)) for i in range(K - 1)]
    s = double_polygon(poly, internal, [(0, 0), (0, 1), (K - 1, 2)], ["x1", "x2", "x3"])
    theta_norm = 2 * N + 0.5 + 1.0 + m + 1.0
    e = eps / (4 * math.pi * theta_norm)
    x1, x2 = s.marked[0], s.marked[1]
    target = x2
    for i in range(m + 1):
        edge = s.side_between(x1, target)
        edge = min(edge)
        s = mark_smooth_point_on_edge(s, edge, e**i, f"y{i}")
        target = s.marked[-1]
    return s


def subdivide(s: ConeSurface) -> ConeSurface:
    """One-to-four midpoint subdivision; the metric and marked points are unchanged."""
    F = s.F
    mid = np.zeros((F, 3, 3))
    for t in range(F):
        for k in range(3):
            mid[t, k] = s.point_on_side(t, k, s.sides[t, k] / 2.0)
    sides = []
    for t in range(F):
        V = s.charts[t]
        h = s.sides[t] / 2.0
        m01, m12, m20 = mid[t]
        d_a = geodesic_dist(m01, m20)
        d_b = geodesic_dist(m12, m01)
        d_c = geodesic_dist(m20, m12)
        # children: corner triangles at 0, 1, 2 and the middle one
        sides.append([h[0], d_a, h[2]])  # (V0, m01, m20)
        sides.append([h[1], d_b, h[0]])  # (V1, m12, m01)
        sides.append([h[2], d_c, h[1]])  # (V2, m20, m12)
        sides.append([d_b, d_c, d_a])  # (m01, m12, m20)
        del V
    glue = -np.ones((4 * F, 3, 2), dtype=int)

    def link(a, b):
        glue[a[0], a[1]] = b
        glue[b[0], b[1]] = a

    for t in range(F):
        b = 4 * t
        link((b + 0, 1), (b + 3, 2))
        link((b + 1, 1), (b + 3, 0))
        link((b + 2, 1), (b + 3, 1))
    # half-sides: side k of t splits into first half (child k, side 0) and
    # second half (child k+1, side 2)
    for t in range(F):
        for k in range(3):
            nb = s.neighbor(t, k)
            if nb is None:
                continue
            u, j = nb
            if (u, j) < (t, k):
                continue
            first = (4 * t + k, 0)
            second = (4 * t + (k + 1) % 3, 2)
            first_u = (4 * u + j, 0)
            second_u = (4 * u + (j + 1) % 3, 2)
            link(first, second_u)
            link(second, first_u)
    marked = [(4 * t + c, 0) for t, c in s._marked_corners]
    return ConeSurface(sides, glue, marked, s.labels)


# ---------------------------------------------------------------------------
# standard disk


@dataclass(frozen=True)
class StandardDisk:
    """The cone disk of angle 2 pi theta and radius r: metric d rho^2 + theta^2 sin^2(rho) d phi^2."""

    theta: float
    r: float

    def __post_init__(self):
        if not (0.0 < self.r < math.pi):
            raise DomainError("radius must lie in (0, pi)")
        if self.theta <= 0:
            raise DomainError("theta must be positive")

    @property
    def boundary_length(self) -> float:
        return 2 * math.pi * self.theta * math.sin(self.r)

    @property
    def area(self) -> float:
        return 2 * math.pi * self.theta * (1.0 - math.cos(self.r))

    @property
    def boundary_curvature_integral(self) -> float:
        return 2 * math.pi * self.theta * math.cos(self.r)

    @property
    def chi_dot(self) -> int:
        return 0

    def gauss_bonnet_defect(self) -> float:
        return self.area - (2 * math.pi * (self.chi_dot + self.theta) - self.boundary_curvature_integral)

    def level_length(self, t: float) -> float:
        return 2 * math.pi * self.theta * math.sin(t) if 0 < t <= self.r else 0.0

    def to_cone_surface(self, k: int = 64) -> ConeSurface:
        """Fan of k isosceles triangles about the cone point (boundary is the inscribed polygon)."""
        k = max(int(k), math.floor(2 * self.theta) + 1, 3)
        apex = 2 * math.pi * self.theta / k
        base = 2 * math.asin(math.sin(self.r) * math.sin(apex / 2))
        sides = [[self.r, base, self.r]] * k
        glue = -np.ones((k, 3, 2), dtype=int)
        for i in range(k):
            glue[i, 2] = ((i + 1) % k, 0)
            glue[(i + 1) % k, 0] = (i, 2)
        return ConeSurface(sides, glue, [(0, 0)], ["x1"])


def standard_disk(theta: float, r: float) -> StandardDisk:
    return StandardDisk(theta, r)


def edge_path_crossings(s: ConeSurface, vertex_path):
    """Dual crossing sequence of a closed edge path pushed slightly to its left.

    vertex_path lists vertices v0, v1, ..., v0 joined by sides.  Passing
    through a marked vertex is refused.
    """
    vp = list(vertex_path)
    if vp[0] != vp[-1]:
        raise DomainError("edge path must be closed")
    for v in vp:
        if v in s.marked:
            raise LoopThroughCone(f"edge path passes through marked vertex {v}")
    m = len(vp) - 1
    out_sides = []
    for i in range(m):
        cand = s.side_between(vp[i], vp[i + 1])
        if not cand:
            raise DomainError(f"no side from {vp[i]} to {vp[i + 1]}")
        out_sides.append(cand[0])
    # the pushed path runs in the triangle left of each side; at a vertex it
    # turns clockwise through the corners until it reaches the next side
    crossings = []
    for i in range(m):
        t, c = out_sides[i][0], (out_sides[i][1] + 1) % 3
        goal = out_sides[(i + 1) % m]
        guard = 0
        while (t, c) != goal:
            nb = s.neighbor(t, c)
            if nb is None:
                raise DomainError("edge path touches the boundary")
            crossings.append((t, c))
            t, c = nb[0], (nb[1] + 1) % 3
            guard += 1
            if guard > 3 * s.F:
                raise DomainError("could not turn around vertex")
    return crossings


def diameter_upper_check(s: ConeSurface, k: int = 8, tol: float = 1e-9):
    """Sampled diameter against pi (n + 1).

    Distances come from a Steiner graph with k points per side; graph paths
    are genuine paths, so the sample overestimates true distances and the
    check is conservative.  Samples: vertices and side points, measured from
    every marked point.  Returns (sampled diameter, bound, ok).
    """
    from .geodesics import SteinerField

    f = SteinerField(s, list(s.marked) or [0], k)
    diam = float(np.max(f.node_dist_all))
    bound = math.pi * (s.n + 1)
    return diam, bound, diam <= bound + tol
