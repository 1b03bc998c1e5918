"""Developing-map monodromy, standard sets of loops and the non-bubbling parameter.

A loop in the punctured surface is given by the sequence of triangle sides
it crosses, each as (triangle, side).  Holonomy is accumulated in the chart
of the first triangle: crossing side k of t multiplies on the right by the
inverse transition, so concatenation of loops corresponds to the product of
their monodromies in the same order.
"""
from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .cone_surface import ConeSurface, edge_path_crossings
from .errors import DomainError, NotHalfInteger, TooManyPoints, TopologyError, WrongRegime
from .geodesics import shortest_arcs_between_cones, shortest_loops_at_cone
from .sphere_kernel import axes_angle, geodesic_dist, rot, rotation, rotation_axis, tangent_towards, unit

TWO_PI = 2.0 * math.pi
HALF_INT_TOL = 1e-9


def d_to_integers(x: float) -> float:
    return abs(x - round(x))


# ---------------------------------------------------------------------------
# holonomy


def _as_crossings(s: ConeSurface, loop):
    loop = list(loop)
    if loop and all(isinstance(v, (int, np.integer)) for v in loop):
        return edge_path_crossings(s, [int(v) for v in loop])
    return [(int(t), int(k)) for t, k in loop]


def holonomy_along(s: ConeSurface, loop) -> np.ndarray:
    """Monodromy along a closed loop, expressed in the chart of its first triangle.

    loop: list of side crossings (t, k), or a closed vertex edge path which is
    pushed off to its left (marked vertices refused with LoopThroughCone).
    """
    cr = _as_crossings(s, loop)
    M = np.eye(3)
    if not cr:
        return M
    t0 = cr[0][0]
    t = t0
    for a, k in cr:
        if a != t:
            raise DomainError(f"crossing {(a, k)} does not start in triangle {t}")
        nb = s.neighbor(a, k)
        if nb is None:
            raise DomainError("loop crosses the boundary")
        M = M @ s.transition[a, k].T
        t = nb[0]
    if t != t0:
        raise DomainError("crossing sequence is not closed")
    return M


def _reverse(s, cr):
    return [s.neighbor(t, k) for t, k in reversed(cr)]


def vertex_circle(s: ConeSurface, v: int, t: int, c: int):
    """Crossings of a small counterclockwise circle about vertex v starting in corner (t, c)."""
    out = []
    t0, c0 = t, c
    for _ in range(3 * s.F + 1):
        k = (c + 2) % 3
        nb = s.neighbor(t, k)
        if nb is None:
            raise DomainError("vertex on the boundary")
        out.append((t, k))
        u, j = nb
        t, c = u, j
        if (t, c) == (t0, c0):
            return out
    raise DomainError("corner cycle does not close")


# ---------------------------------------------------------------------------
# standard sets


@dataclass
class MonodromyRep:
    """Monodromies Q[i] of a standard set of loops, indexed by marked point.

    order lists the marked points in the order in which the loops compose to
    the identity: Q[order[0]] @ ... @ Q[order[-1]] = I.
    """

    Q: list
    order: list
    basepoint: int
    loops: list
    centers: list
    theta: np.ndarray
    thread: tuple | None = None
    tree: dict = field(default_factory=dict)

    def product(self) -> np.ndarray:
        M = np.eye(3)
        for i in self.order:
            M = M @ self.Q[i]
        return M

    def product_defect(self) -> float:
        return float(np.abs(self.product() - np.eye(3)).max())

    def rot_defects(self):
        return [abs(rot(q) - d_to_integers(th)) for q, th in zip(self.Q, self.theta)]


def _dual_tree(s: ConeSurface, root: int, chain=()):
    """BFS tree in the dual graph; chain is a list of crossings forced into the tree first."""
    parent = {root: None}
    D = {root: np.eye(3)}
    q = deque([root])
    for t, k in chain:
        u = s.neighbor(t, k)[0]
        if u in parent:
            return None
        parent[u] = (t, k)
        D[u] = D[t] @ s.transition[t, k].T
        q.append(u)
    while q:
        t = q.popleft()
        for k in range(3):
            nb = s.neighbor(t, k)
            if nb is None or nb[0] in parent:
                continue
            u = nb[0]
            parent[u] = (t, k)
            D[u] = D[t] @ s.transition[t, k].T
            q.append(u)
    return parent, D


def _tree_path(s, parent, t):
    path = []
    while parent[t] is not None:
        path.append(parent[t])
        t = parent[t][0]
    return path[::-1]


def _boundary_runs(s: ConeSurface, parent):
    """Corner runs along the boundary of the disk obtained by cutting along the cotree.

    Returns {corner: position} with the position counted along the boundary
    walk that keeps the disk on its left.
    """
    tree_sides = set()
    for u, pc in parent.items():
        if pc is None:
            continue
        tree_sides.add(pc)
        tree_sides.add(s.neighbor(*pc))
    start = None
    for t in range(s.F):
        for k in range(3):
            if (t, k) not in tree_sides:
                start = (t, k)
                break
        if start:
            break
    if start is None:
        raise TopologyError("cut graph is empty")
    pos = {}
    run = 0
    t, k = start
    for _ in range(6 * s.F + 6):
        tt, c = t, (k + 1) % 3
        while True:
            pos[(tt, c)] = run
            if (tt, c) not in tree_sides:
                break
            u, j = s.neighbor(tt, c)
            tt, c = u, (j + 1) % 3
        run += 1
        t, k = tt, c
        if (t, k) == start:
            return pos
    raise TopologyError("boundary walk did not close")


def _arc_chain(s: ConeSurface, i: int, j: int):
    """Triangle chain of a minimizing arc from x_i to x_j, with the end corners."""
    arcs = shortest_arcs_between_cones(s)
    a, b = min(i, j), max(i, j)
    arc = next(x for x in arcs if x.i == a and x.j == b)
    if arc.path is None:
        raise DomainError("no minimizing arc within the search cap")
    path = arc.path if arc.i == i else arc.path.reversed(s)
    if any(c is None for c in path.crossings):
        return None, arc.length
    tris = [path.segments[0][0]] + [s.neighbor(*c)[0] for c in path.crossings]
    if len(set(tris)) != len(tris):
        return None, arc.length
    t0, p0 = path.segments[0][0], path.segments[0][1]
    t1, p1 = path.segments[-1][0], path.segments[-1][2]
    c0 = min(range(3), key=lambda c: geodesic_dist(s.charts[t0, c], p0))
    c1 = min(range(3), key=lambda c: geodesic_dist(s.charts[t1, c], p1))
    return (list(path.crossings), (t0, c0), (t1, c1)), arc.length


def standard_set(s: ConeSurface, basepoint: int | None = None, thread: tuple | None = None) -> MonodromyRep:
    """Monodromy of a standard set of loops on a closed genus-0 surface.

    Construction: a breadth-first tree of triangles rooted at the basepoint
    triangle; the sides it does not cross form a spanning tree of vertices,
    so cutting along them leaves a disk.  The loop about x_i runs along the
    tree to a corner at x_i, circles x_i counterclockwise and returns.  Loops
    are ordered by the position of their corner along the boundary of the
    disk, which is the cyclic order of their tails at the basepoint.

    thread=(i, j) routes the tree along a minimizing arc from x_i to x_j and
    puts the basepoint at its start, so that Q_i and Q_j are rotations about
    points at distance d(x_i, x_j).
    """
    if s.has_boundary or s.genus != 0:
        raise TopologyError("standard sets need a closed genus-0 surface")
    chain = ()
    corner_choice = {}
    if thread is not None:
        i, j = thread
        info, _ = _arc_chain(s, i, j)
        if info is not None:
            chain, ci, cj = info
            basepoint = ci[0]
            corner_choice = {i: ci, j: cj}
        else:
            thread = None
    root = 0 if basepoint is None else int(basepoint)
    res = _dual_tree(s, root, chain)
    if res is None:
        res = _dual_tree(s, root)
        thread = None
    parent, D = res
    pos = _boundary_runs(s, parent)
    Q, loops, centers, keys = [], [], [], []
    for idx, v in enumerate(s.marked):
        if idx in corner_choice:
            t, c = corner_choice[idx]
        else:
            t, c = min(s.corners_of[v], key=lambda tc: (len(_tree_path(s, parent, tc[0])), tc))
        tail = _tree_path(s, parent, t)
        cr = tail + vertex_circle(s, v, t, c) + _reverse(s, tail)
        if not tail and not cr:
            cr = []
        # a loop starting away from the root needs the root as first triangle
        Q.append(holonomy_along(s, cr) if cr else np.eye(3))
        loops.append(cr)
        centers.append(D[t] @ s.charts[t, c])
        keys.append(pos[(t, c)])
    order = sorted(range(s.n), key=lambda i: keys[i])
    return MonodromyRep(Q, order, root, loops, centers, s.theta.copy(), tuple(thread) if thread else None,
                        {"parent": parent})


def is_coaxial(rep: MonodromyRep, tol: float = 1e-8) -> bool:
    """True iff every non-identity Q_i rotates about one common axis (up to sign)."""
    axes = [rotation_axis(q, tol=tol) for q in rep.Q]
    axes = [a for a in axes if a is not None]
    return all(axes_angle(axes[0], a) < tol for a in axes[1:])


def half_integer_distance_constraint(rep: MonodromyRep, i: int, j: int, dij: float, tol: float = 1e-6) -> bool:
    """rot(Q_i Q_j) against d(x_i, x_j) for two cones with half-integer theta.

    The rep must be threaded along a minimizing arc from x_i to x_j.  Checks
    that Q_i Q_j rotates by the angle 2 d (reduced to [0, pi]) and that
    rot(Q_i Q_j) <= d / pi.
    """
    for k in (i, j):
        if d_to_integers(rep.theta[k] - 0.5) > HALF_INT_TOL or rep.theta[k] < 0.5 - HALF_INT_TOL:
            raise NotHalfInteger(f"theta_{k} = {rep.theta[k]} is not in 1/2 + Z>=0")
    if rep.thread is None or set(rep.thread) != {i, j}:
        raise DomainError("rep is not threaded along an arc between these cones")
    r = rot(rep.Q[i] @ rep.Q[j])
    expect = min(2 * dij, TWO_PI - 2 * dij)
    return abs(TWO_PI * r - expect) < tol and r <= dij / math.pi + tol


def geodesic_loop_monodromy_bound(Q, ell: float, phi: float, tol: float = 1e-8) -> bool:
    """rot(Q) >= l / 2 pi >= |rot(Q) - d(phi - 1/2, Z)| for a geodesic boundary loop."""
    if not ell < math.pi:
        raise DomainError("loop length must be below pi")
    r = rot(Q)
    x = ell / TWO_PI
    return r >= x - tol and x >= abs(r - d_to_integers(phi - 0.5)) - tol


def synthetic_loop_monodromy(Y, Yp, phi: float) -> np.ndarray:
    """Q = Q_{Y', phi} Q_{YY'}: translation along YY' then clockwise turn by 2 pi (phi + 1/2) about Y'."""
    Y, Yp = unit(Y), unit(Yp)
    ell = geodesic_dist(Y, Yp)
    axis = unit(np.cross(Y, Yp))
    Q_YY = rotation(axis, ell)
    Q_phi = rotation(Yp, -TWO_PI * (phi + 0.5))
    return Q_phi @ Q_YY


def _direction_position(s, v, t, c, d):
    """Angular position of tangent d at the corner (t, c) of v, measured around v."""
    offset = 0.0
    for tt, cc in s.corners_around(v):
        if (tt, cc) == (t, c):
            P = s.charts[t, c]
            T = s.tan_next[t, c]
            a = math.atan2(float(np.dot(np.cross(P, T), d)), float(np.dot(T, d)))
            return offset + min(max(a, 0.0), s.angles[t, c])
        offset += s.angles[tt, cc]
    raise DomainError("corner not found")


def _corner_at(s, v, t, p):
    return min((c for c in range(3) if s.vertex_of[t, c] == v), key=lambda c: geodesic_dist(s.charts[t, c], p))


def loop_monodromy(s: ConeSurface, loop, side: int = 0):
    """Monodromy, length and corner angle of a geodesic loop based at a cone.

    The loop is closed through the sector at its base point that it bounds on
    the given side (0: counterclockwise from the incoming to the outgoing
    direction, 1: the complementary sector).  Returns (Q, length, phi) with
    2 pi phi the angle of that sector.
    """
    path = loop.path
    v = s.marked[loop.cone]
    ta, pa, qa = path.segments[0]
    tb, pb, qb = path.segments[-1]
    ca = _corner_at(s, v, ta, pa)
    cb = _corner_at(s, v, tb, qb)
    d_out = tangent_towards(pa, qa)
    d_in = tangent_towards(qb, pb)
    pos_out = _direction_position(s, v, ta, ca, d_out)
    pos_in = _direction_position(s, v, tb, cb, d_in)
    total = s.vertex_angle[v]
    if side == 0:
        phi = ((pos_out - pos_in) % total) / TWO_PI
        step = lambda t, c: ((t, (c + 2) % 3), s.neighbor(t, (c + 2) % 3))
        wrap = pos_out < pos_in
    else:
        phi = ((pos_in - pos_out) % total) / TWO_PI

        def step(t, c):
            u, j = s.neighbor(t, c)
            return (t, c), (u, (j + 1) % 3)

        wrap = pos_out > pos_in
    sweep = []
    t, c = tb, cb
    for _ in range(3 * s.F + 1):
        if (t, c) == (ta, ca) and (sweep or not wrap):
            break
        cr_, (t, c) = step(t, c)
        sweep.append(cr_)
    else:
        raise DomainError("sector sweep did not close")
    cr = [c for c in path.crossings if c is not None] + sweep
    Q = holonomy_along(s, cr) if cr else np.eye(3)
    return Q, loop.length, phi


# ---------------------------------------------------------------------------
# non-bubbling parameter


@dataclass
class NBResult:
    value: float
    I: tuple
    b: int
    acrit_distance: float


def _b_window(chi_dot: int, theta_norm: float) -> int:
    return int(math.ceil((abs(chi_dot) + theta_norm) / 2.0)) + 1


def _dist_even_window(x: np.ndarray, bmax: int) -> tuple:
    """Distance of x to {2b : 0 <= b <= bmax} and the minimizing b."""
    b = np.clip(np.rint(x / 2.0), 0, bmax)
    return np.abs(x - 2.0 * b), b.astype(int)


def nb_parameter(theta, chi_dot: int) -> NBResult:
    """NB = distance from chi(S dot) to Crit = {|theta_I| - |theta_I^c| + 2b : I proper, b >= 0}.

    Exhaustive over subsets (n <= 24) and over the finite window of b.  The
    equivalent distance from chi(S, theta) to ACrit is computed alongside
    and, for chi(S dot) <= 0 where the two agree, asserted equal.
    """
    th = np.asarray(theta, dtype=float)
    n = len(th)
    if n > 24:
        raise TooManyPoints("exhaustive subset enumeration supports n <= 24")
    if n == 0:
        raise DomainError("no proper subsets of an empty index set")
    total = math.fsum(th)
    bmax = _b_window(chi_dot, total)
    best = (math.inf, (), 0)
    # subsets enumerated in blocks: low bits vectorized, high bits looped
    lo = min(n, 14)
    hi = n - lo
    low_sums = np.zeros(1)
    for k in range(lo):
        low_sums = np.concatenate([low_sums, low_sums + th[k]])
    for h in range(1 << hi):
        hs = math.fsum(th[lo + k] for k in range(hi) if h >> k & 1)
        sI = low_sums + hs
        # chi - (sI - (total - sI) + 2b) = (chi + total - 2 sI) - 2b
        x = chi_dot + total - 2.0 * sI
        d, b = _dist_even_window(x, bmax)
        if h == (1 << hi) - 1:
            d = d.copy()
            d[-1] = math.inf  # the full index set is excluded
        a = int(np.argmin(d))
        if d[a] < best[0]:
            mask = a | (h << lo)
            I = tuple(i for i in range(n) if mask >> i & 1)
            best = (float(d[a]), I, int(b[a]))
    val, I, b = best
    # exact recomputation of the witness
    sI = math.fsum(th[list(I)]) if I else 0.0
    sIc = math.fsum(th[i] for i in range(n) if i not in I)
    val = abs(chi_dot - (sI - sIc + 2 * b))
    acrit = acrit_distance(th, chi_dot)
    if chi_dot <= 0 and abs(acrit - val) > 1e-9:
        raise AssertionError(f"Crit and ACrit distances differ: {val} vs {acrit}")
    return NBResult(val, I, b, acrit)


def acrit_distance(theta, chi_dot: int) -> float:
    """Distance from chi(S, theta) to ACrit = {2b + 2|theta_I| : I any subset, b >= 0}."""
    th = np.asarray(theta, dtype=float)
    total = math.fsum(th)
    chi = chi_dot + total
    bmax = _b_window(chi_dot, total) + int(math.ceil(total))
    sums = np.zeros(1)
    for t in th:
        sums = np.concatenate([sums, sums + t])
    d, _ = _dist_even_window(chi - 2.0 * sums, bmax)
    return float(d.min())


def crit_set(theta, lo: float, hi: float, chi_dot: int | None = None):
    """Sorted ACrit values 2b + 2|theta_I| inside [lo, hi] (as a list)."""
    th = np.asarray(theta, dtype=float)
    sums = np.zeros(1)
    for t in th:
        sums = np.concatenate([sums, sums + t])
    vals = set()
    bmax = int(math.ceil(max(hi, 0.0) / 2.0)) + 1
    for b in range(bmax + 1):
        for v in 2 * b + 2 * sums:
            if lo <= v <= hi:
                vals.add(round(float(v), 12))
    return sorted(vals)


def dist_to_odd_lattice(theta) -> float:
    """L1 distance from theta - 1 to the integer vectors with odd coordinate sum."""
    x = np.asarray(theta, dtype=float) - 1.0
    if len(x) == 0:
        raise DomainError("need at least one coordinate")
    r = np.rint(x)
    cost = np.abs(x - r)
    if int(r.sum()) % 2 == 1:
        return float(cost.sum())
    # move one coordinate to its other neighbor: extra cost 1 - 2 |x - r|
    extra = 1.0 - 2.0 * cost
    return float(cost.sum() + extra.min())


# ---------------------------------------------------------------------------
# gap properties


def _regime(theta):
    xs = [i for i, t in enumerate(theta) if t > 0.5 - HALF_INT_TOL and d_to_integers(t - 0.5) <= HALF_INT_TOL]
    ys = [i for i in range(len(theta)) if i not in xs]
    return xs, ys


def rot_number_gap_checks(s: ConeSurface, rep: MonodromyRep | None, field, complex=None, tol: float = 1e-6) -> dict:
    """Distance gaps and loop dichotomy for three half-integer cones plus m small cones.

    Regime: exactly three theta in 1/2 + Z>=0, all others at most eps with
    eps < 1/(2m + 2), where eps is the largest small angle.  Each entry of
    the report is (measured, bound, ok).
    """
    theta = s.theta
    xs, ys = _regime(theta)
    m = len(ys)
    eps = max((theta[i] for i in ys), default=0.0)
    if len(xs) != 3 or (m and not eps < 1.0 / (2 * m + 2)):
        raise WrongRegime("need three half-integer cones and m cones with theta < 1/(2m+2)")
    arcs = shortest_arcs_between_cones(s)
    D = np.full((s.n, s.n), math.inf)
    for a in arcs:
        D[a.i, a.j] = D[a.j, a.i] = a.length
    rep_out = {}
    gap = math.pi * (0.5 - m * eps)
    for a, b in itertools.combinations(xs, 2):
        rep_out[f"gap_a_{a}_{b}"] = (float(D[a, b]), gap, bool(D[a, b] >= gap - tol))
    margin = math.pi * (0.5 - (m + 1) * eps)
    for y in ys:
        dx = sorted((D[y, x], x) for x in xs)
        others = [D[y, k] for k in range(s.n) if k != y and k not in xs]
        closest_is_x = not others or dx[0][0] < min(others)
        ok = closest_is_x and all(dx[0][0] <= d - margin + tol for d, _ in dx[1:])
        rep_out[f"gap_b_{y}"] = (float(dx[1][0] - dx[0][0]), margin, bool(ok))
    if complex is None:
        from .voronoi import extract_complex

        complex = extract_complex(s, field, check=False)
    for j, k, l in itertools.permutations(xs, 3):
        if j > l:
            continue
        # arc x_j x_l is a saddle arc when d(x_k, x_l) >= d(x_j, x_l)
        if D[k, l] >= D[j, l] - 1e-12:
            want = D[j, l] / 2
            hit = any(set(p.sources) == {j, l} and abs(p.value - want) < tol for p in complex.saddles)
            rep_out[f"gap_d_{j}_{l}"] = (float(want), float(want), bool(hit))
    if m == 0 or eps < 1.0 / (8 * m):
        lo, hi = TWO_PI * m * eps, math.pi / 2 - TWO_PI * m * eps
        for x in xs:
            for lp in shortest_loops_at_cone(s, x, length_cap=math.pi):
                if lp.length >= math.pi:
                    continue
                ok = lp.length <= lo + tol or lp.length >= hi - tol
                rep_out[f"loop_{x}_{lp.length:.9f}"] = (float(lp.length), (lo, hi), bool(ok))
    if rep is not None:
        R = np.eye(3)
        for i in rep.order:
            if i in ys:
                R = R @ rep.Q[i]
        rep_out["rot_small_product"] = (rot(R), m * eps, bool(rot(R) <= m * eps + tol))
    return rep_out


__all__ = [
    "MonodromyRep",
    "NBResult",
    "acrit_distance",
    "crit_set",
    "dist_to_odd_lattice",
    "geodesic_loop_monodromy_bound",
    "half_integer_distance_constraint",
    "holonomy_along",
    "is_coaxial",
    "loop_monodromy",
    "nb_parameter",
    "rot_number_gap_checks",
    "standard_set",
    "synthetic_loop_monodromy",
    "vertex_circle",
]
