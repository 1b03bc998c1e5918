"""Systole, injectivity and immersion radii, and the closest-point predicates."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .cone_surface import ConeSurface
from .errors import DomainError, NotEssential
from .geodesics import shortest_arcs_between_cones, shortest_loops_at_cone
from .sphere_kernel import geodesic_dist, unit

LOOP_CAP = math.pi


@dataclass
class SystoleReport:
    """sys with its realizer, and per-cone radii.

    realizer: ("arc", i, j) or ("loop", i, i); midpoint: (triangle, point).
    r[i] injectivity radius, d[i] distance to the nearest other cone,
    rbar[i] = min(2 r[i], d[i], pi) immersion radius.
    """

    sys: float
    realizer: tuple
    length: float
    midpoint: tuple | None
    r: list
    d: list
    rbar: list
    loops: list = field(default_factory=list)
    arcs: dict = field(default_factory=dict)
    midpoint_value: float = math.nan

    def to_dict(self) -> dict:
        out = asdict(self)
        t, p = self.midpoint if self.midpoint is not None else (None, None)
        out["midpoint"] = None if t is None else [int(t), [float(x) for x in p]]
        out["arcs"] = {f"{i},{j}": v for (i, j), v in self.arcs.items()}
        out.pop("loops")
        return out


def _path_midpoint(path):
    """Point at half length along a geodesic path, as (triangle, point)."""
    half = path.length / 2.0
    acc = 0.0
    for t, a, b in path.segments:
        L = geodesic_dist(a, b)
        if acc + L >= half - 1e-15 and L > 0:
            u = min(max((half - acc) / L, 0.0), 1.0)
            w = math.sin((1 - u) * L) / math.sin(L), math.sin(u * L) / math.sin(L)
            p = w[0] * a + w[1] * b
            return t, p / np.linalg.norm(p)
        acc += L
    t, a, b = path.segments[-1]
    return t, b


def compute_systole(s: ConeSurface, field=None, cap: float = LOOP_CAP) -> SystoleReport:
    """sys = half the shortest cone-to-cone arc or cone-based geodesic loop.

    Ties are broken by (length, cone index).  When field is given the value
    of the Voronoi function at the realizer midpoint is recorded; it equals
    sys.
    """
    n = s.n
    arcs = shortest_arcs_between_cones(s, cap=cap)
    D = np.full((n, n), math.inf)
    arc_obj = {}
    for a in arcs:
        D[a.i, a.j] = D[a.j, a.i] = a.length
        arc_obj[(a.i, a.j)] = a
    loops = []
    shortest_loop = [math.inf] * n
    for i in range(n):
        ls = shortest_loops_at_cone(s, i, length_cap=cap)
        loops.append(ls)
        if ls:
            shortest_loop[i] = ls[0].length
    d = [float(D[i][np.arange(n) != i].min()) if n > 1 else math.inf for i in range(n)]
    r = [min(d[i], shortest_loop[i] / 2.0) for i in range(n)]
    rbar = [min(2 * r[i], d[i], math.pi) for i in range(n)]
    cands = []
    for (i, j), a in arc_obj.items():
        cands.append((a.length, i, j, "arc", a.path))
    for i in range(n):
        for lp in loops[i][:1]:
            cands.append((lp.length, i, i, "loop", lp.path))
    if not cands or not math.isfinite(min(c[0] for c in cands)):
        raise DomainError("no arc or loop found below the search cap")
    length, i, j, kind, path = min(cands, key=lambda c: (c[0], c[1], c[2]))
    mid = _path_midpoint(path) if path is not None else None
    rep = SystoleReport(length / 2.0, (kind, i, j), length, mid, r, d, rbar, loops,
                        {k: float(v.length) for k, v in arc_obj.items()})
    if field is not None and mid is not None:
        rep.midpoint_value = float(field.value(mid[0], mid[1][None, :])[0])
    return rep


def closest_point_checks(s: ConeSurface, report: SystoleReport | None = None, tol: float = 1e-9) -> dict:
    """Closest-cone predicates for small angles on a surface with chi(S dot) < 0.

    For theta_i <= 2/3: d_i < 2 r_i (so rbar_i = d_i); if x_i and x_j are
    mutually closest, theta_i + theta_j > 2/3; for theta_i <= 1/3 every
    closest x_j has theta_j > 1/3.  Entries are (measured, bound, ok).
    """
    if s.chi_dot >= 0:
        raise DomainError("closest-point checks need chi(S dot) < 0")
    rep = report or compute_systole(s)
    th = s.theta
    n = s.n
    D = np.full((n, n), math.inf)
    for (i, j), L in rep.arcs.items():
        D[i, j] = D[j, i] = L
    out = {}
    for i in range(n):
        if th[i] > 2.0 / 3.0 + tol:
            continue
        out[f"a_{i}"] = (rep.d[i], 2 * rep.r[i], bool(rep.d[i] < 2 * rep.r[i]))
        out[f"rbar_{i}"] = (rep.rbar[i], rep.d[i], bool(abs(rep.rbar[i] - rep.d[i]) <= tol))
        closest = [j for j in range(n) if j != i and D[i, j] <= rep.d[i] + tol]
        for j in closest:
            mutual = D[i, j] <= rep.d[j] + tol
            if mutual:
                out[f"b_{i}_{j}"] = (float(th[i] + th[j]), 2.0 / 3.0, bool(th[i] + th[j] > 2.0 / 3.0))
            if th[i] <= 1.0 / 3.0 + tol:
                out[f"c_{i}_{j}"] = (float(th[j]), 1.0 / 3.0, bool(th[j] > 1.0 / 3.0))
    return out


# ---------------------------------------------------------------------------
# closed curves


@dataclass
class ClosedCurve:
    """Closed curve in the punctured surface.

    points: list of (triangle, point) samples in order; crossings: the
    (triangle, side) crossed, in order.  exact_length overrides the chord
    sum when the curve is known analytically.
    """

    points: list
    crossings: list
    exact_length: float | None = None

    @property
    def length(self) -> float:
        if self.exact_length is not None:
            return self.exact_length
        L = 0.0
        for (t0, p0), (t1, p1) in zip(self.points, self.points[1:] + self.points[:1]):
            if t0 == t1:
                L += geodesic_dist(p0, p1)
        return L


def _circle_exit(N, X, e1, e2, rho, phi):
    """First angle beyond phi where the circle about X leaves the triangle with inward normals N."""
    best = (math.inf, -1)
    c, s_ = math.cos(rho), math.sin(rho)
    for k in range(3):
        a0 = c * float(np.dot(N[k], X))
        a1 = s_ * float(np.dot(N[k], e1))
        a2 = s_ * float(np.dot(N[k], e2))
        # a0 + a1 cos u + a2 sin u = 0 with decreasing sign
        R = math.hypot(a1, a2)
        if R < 1e-300 or abs(a0) > R:
            continue
        base = math.atan2(a2, a1)
        w = math.acos(max(-1.0, min(1.0, -a0 / R)))
        for u in (base + w, base - w):
            deriv = -a1 * math.sin(u) + a2 * math.cos(u)
            if deriv >= 0:
                continue
            u = phi + (u - phi) % (2 * math.pi)
            if u <= phi + 1e-14:
                u += 2 * math.pi
            if u < best[0]:
                best = (u, k)
    return best


def circle_curve(s: ConeSurface, i: int, rho: float, samples: int = 4) -> ClosedCurve:
    """Counterclockwise circle of radius rho about the i-th marked point.

    The circle is traced exactly through the charts, so it may pass around
    other vertices as long as it meets none of them (marked smooth points
    included).  Valid for rho below the immersion radius.
    """
    v = s.marked[i]
    t, c = s.corners_around(v)[0]
    X = s.charts[t, c]
    e1 = s.tan_next[t, c]
    e2 = np.cross(X, e1)
    total = float(s.vertex_angle[v])
    phi0 = 0.5 * float(s.angles[t, c])
    phi = phi0
    pts, cross = [], []
    normals = lambda t: np.array([unit(np.cross(s.charts[t, k], s.charts[t, (k + 1) % 3])) for k in range(3)])
    point = lambda X, e1, e2, u: math.cos(rho) * X + math.sin(rho) * (math.cos(u) * e1 + math.sin(u) * e2)
    for _ in range(10 * s.F + 10):
        u_exit, k = _circle_exit(normals(t), X, e1, e2, rho, phi)
        stop = phi0 + total
        end = min(u_exit, stop)
        for u in np.linspace(phi, end, samples + 1)[:-1]:
            pts.append((t, point(X, e1, e2, u)))
        if u_exit >= stop:
            break
        cross.append((t, k))
        nb = s.neighbor(t, k)
        if nb is None:
            raise DomainError("circle reaches the boundary")
        R = s.transition[t, k]
        t, X, e1, e2, phi = nb[0], R @ X, R @ e1, R @ e2, u_exit
    else:
        raise DomainError("circle tracing did not close")
    return ClosedCurve(pts, cross, 2 * math.pi * float(s.theta[i]) * math.sin(rho))


def _curve_sides(s: ConeSurface, curve: ClosedCurve):
    """Two-colour the vertices by parity of crossings; None if the curve does not separate."""
    crossed = {}
    for t, k in curve.crossings:
        key = tuple(sorted([(t, k), s.neighbor(t, k)]))
        crossed[key] = crossed.get(key, 0) + 1
    colour = {}
    vs = range(s.V)
    start = next(iter(vs))
    colour[start] = 0
    stack = [start]
    while stack:
        v = stack.pop()
        for t, c in s.corners_of[v]:
            for k in (c, (c + 2) % 3):
                w = int(s.vertex_of[t, (k + 1) % 3]) if k == c else int(s.vertex_of[t, k])
                nb = s.neighbor(t, k)
                key = tuple(sorted([(t, k), nb])) if nb is not None else ((t, k),)
                flip = crossed.get(key, 0) % 2
                col = colour[v] ^ flip
                if w in colour:
                    if colour[w] != col:
                        return None
                else:
                    colour[w] = col
                    stack.append(w)
    return colour


def is_essential(s: ConeSurface, curve: ClosedCurve) -> bool:
    """Every component of the punctured surface cut along the curve has chi < 0.

    The curve must enter each triangle at most once.  Each side is then
    homotopy equivalent to the subcomplex spanned by its vertices, uncrossed
    sides and uncrossed triangles.
    """
    tris = [t for t, _ in curve.crossings]
    if len(set(tris)) != len(tris):
        raise DomainError("curve must cross each triangle at most once")
    colour = _curve_sides(s, curve)
    if colour is None:
        # non-separating: the complement keeps the Euler characteristic of S dot
        return s.chi_dot < 0
    crossed_tris = set(tris)
    crossed_edges = set()
    for t, k in curve.crossings:
        crossed_edges.add(tuple(sorted([(t, k), s.neighbor(t, k)])))
    chis = []
    for side in (0, 1):
        V = sum(1 for v in range(s.V) if colour[v] == side)
        E = 0
        seen = set()
        for t in range(s.F):
            for k in range(3):
                nb = s.neighbor(t, k)
                key = tuple(sorted([(t, k), nb]))
                if key in seen or key in crossed_edges:
                    continue
                seen.add(key)
                a, b = int(s.vertex_of[t, k]), int(s.vertex_of[t, (k + 1) % 3])
                if colour[a] == side and colour[b] == side:
                    E += 1
        F = sum(1 for t in range(s.F) if t not in crossed_tris and all(colour[int(v)] == side for v in s.vertex_of[t]))
        cones = sum(1 for v in s.marked if colour[v] == side)
        chis.append(V - E + F - cones)
    return all(c < 0 for c in chis)


def essential_curve_bound(s: ConeSurface, report: SystoleReport, curve: ClosedCurve, length: float | None = None) -> bool:
    """sys < l(curve)/2 for an essential closed curve (NotEssential otherwise)."""
    if not is_essential(s, curve):
        raise NotEssential("curve is not essential")
    L = curve.length if length is None else length
    if not report.sys < L / 2.0:
        raise AssertionError(f"sys = {report.sys} not below half the length {L / 2.0}")
    return True


def sys_upper_from_ext(ext: float, theta_norm: float) -> float:
    """sys <= sqrt((pi/2) Ext theta_norm) for an extremal-systole proxy Ext."""
    return math.sqrt(0.5 * math.pi * ext * theta_norm)


def length_from_cylinder(area: float, modulus: float) -> float:
    """A curve homotopic to the core of a cylinder of modulus M has a representative shorter than sqrt(Area / M)."""
    return math.sqrt(area / modulus)
