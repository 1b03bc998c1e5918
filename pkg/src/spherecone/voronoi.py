"""Voronoi graph, critical points of the Voronoi function, level sets and cylinders.

The Voronoi function V is the distance to the nearest marked point.  On a
triangle of the surface V is the minimum of finitely many spherical distance
functions d(X_a, .) to developed images X_a of the marked points, so

* the Voronoi graph Gamma is the tie locus of these images; its edges are
  arcs of bisector great circles and its vertices are circumcentres of
  three or more images;
* saddles are midpoints of image pairs realized by exactly those two
  images, maxima are Gamma vertices whose realizing directions do not lie
  in a closed half-plane (or antipodes of pair midpoints);
* a level set V = r is a union of circular arcs of radius r about images,
  cut by ownership changes, which are points of Gamma.

Topology of sublevel and superlevel sets follows from Morse theory: a
sublevel component retracts onto its cones and the saddle geodesics below
r, a superlevel component retracts onto the part of Gamma above r.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .cone_surface import ConeSurface
from .errors import (
    DomainError,
    EstimateInapplicable,
    NearCriticalLevel,
    NeedsRefinement,
    SaddleInInterval,
)
from .geodesics import ExactField, _pairwise_dist, single_source_field
from .sphere_kernel import geodesic_dist, tangent_towards, unit

TIE_ABS = 1e-12
TIE_REL = 0.0
ANGLE_TOL = 1e-9
TWO_PI = 2.0 * math.pi


def _tie(v):
    return TIE_ABS + TIE_REL * abs(v)


class _UF:
    def __init__(self, n=0):
        self.p = list(range(n))

    def add(self):
        self.p.append(len(self.p))
        return len(self.p) - 1

    def find(self, i):
        while self.p[i] != i:
            self.p[i] = self.p[self.p[i]]
            i = self.p[i]
        return i

    def union(self, a, b):
        a, b = self.find(a), self.find(b)
        if a != b:
            self.p[max(a, b)] = min(a, b)


# ---------------------------------------------------------------------------
# per-triangle image groups


class _TriImages:
    """Images stored in one triangle, grouped by (source, position)."""

    def __init__(self, f: ExactField, t: int):
        s = f.surface
        ids, X, sig, src, full, n1, n2 = f.image_table(t)
        self.t = t
        self.V = s.charts[t]
        N = [np.cross(self.V[k], self.V[(k + 1) % 3]) for k in range(3)]
        self.N = np.array([n / np.linalg.norm(n) for n in N])
        self.X, self.sig, self.src, self.full, self.n1, self.n2 = X, sig, src, full, n1, n2
        g_of = np.full(len(ids), -1)
        GX, Gs, Gsrc = [], [], []
        for r in range(len(ids)):
            for g in range(len(GX)):
                if Gsrc[g] == src[r] and abs(Gs[g] - sig[r]) <= 1e-15 * max(1.0, sig[r]) and np.max(np.abs(GX[g] - X[r])) < 1e-12:
                    g_of[r] = g
                    break
            else:
                GX.append(X[r])
                Gs.append(sig[r])
                Gsrc.append(src[r])
                g_of[r] = len(GX) - 1
        self.g_of = g_of
        self.GX = np.array(GX).reshape(-1, 3)
        self.Gsig = np.array(Gs)
        self.Gsrc = np.array(Gsrc, dtype=int)
        self.G = len(GX)

    def group_dist(self, P, eps=1e-13):
        """(G, M) distances from groups to points, inf where no record of the group sees the point."""
        P = np.atleast_2d(P)
        out = np.full((self.G, len(P)), np.inf)
        if len(self.X) == 0:
            return out
        D = self.sig[:, None] + _pairwise_dist(self.X, P)
        vis = self.full[:, None] | ((self.n1 @ P.T >= -eps) & (self.n2 @ P.T >= -eps))
        D[~vis] = np.inf
        for r in range(len(self.X)):
            g = self.g_of[r]
            out[g] = np.minimum(out[g], D[r])
        return out

    def inside(self, p, tol=1e-12):
        return bool(np.all(self.N @ p >= -tol))



# ---------------------------------------------------------------------------
# complex


@dataclass
class CriticalPoint:
    kind: str  # "min" | "saddle" | "max" | "max_edge"
    value: float
    loc: tuple  # (triangle, point)
    sources: tuple = ()
    multiplicity: int = 0
    occurrences: list = field(default_factory=list)


@dataclass
class GammaVertex:
    value: float
    loc: tuple
    multiplicity: int
    kind: str  # "max" | "regular" | "max_edge" | "saddle"
    sources: tuple = ()
    occurrences: list = field(default_factory=list)
    pair: tuple = ()  # for a degenerate saddle: sources of the two opposite directions


@dataclass
class GammaEdge:
    ends: tuple  # node ids (start, end); equal for closed edges
    nodes: list  # [(arclength, node id)] along the edge, including ends
    length: float
    segments: list  # [(t, p0, p1, A, B, s0, s1)]
    sources: tuple = ()


@dataclass
class SaddleGeodesic:
    value: float
    sources: tuple
    is_loop: bool
    loc: tuple

    @property
    def length(self):
        return 2 * self.value


class VoronoiComplex:
    """Voronoi graph and critical points of the Voronoi function of a field."""

    def __init__(self, s, f, nodes, edges):
        self.surface = s
        self.field = f
        self.nodes = nodes  # list of GammaVertex or CriticalPoint (saddles, edge maxima)
        self.edges = edges
        self.gamma_ok = True
        self._tri_cache = {}

    # -- critical points
    @property
    def minima(self):
        return [CriticalPoint("min", 0.0, self.surface.vertex_position(v), (i,)) for i, v in enumerate(self.field.sources)]

    @property
    def saddles(self):
        out = []
        for n in self.nodes:
            if n.kind != "saddle":
                continue
            if isinstance(n, GammaVertex):
                # a Gamma vertex sitting on the midpoint of a saddle geodesic
                n = CriticalPoint("saddle", n.value, n.loc, n.pair, n.multiplicity, n.occurrences)
            out.append(n)
        return out

    @property
    def gamma_vertices(self):
        return [n for n in self.nodes if isinstance(n, GammaVertex)]

    @property
    def maxima(self):
        out = []
        for n in self.nodes:
            if isinstance(n, GammaVertex) and n.kind == "max":
                out.append(n)
            elif isinstance(n, CriticalPoint) and n.kind == "max":
                out.append(n)
        return out

    @property
    def saddle_geodesics(self):
        return [SaddleGeodesic(n.value, n.sources, n.sources[0] == n.sources[1], n.loc) for n in self.saddles]

    def critical_values(self):
        vals = [0.0] + [n.value for n in self.saddles] + [n.value for n in self.maxima]
        vals += [math.pi / 2 for _ in self.flat_components()]
        return sorted(vals)

    def min_positive_critical_value(self):
        pos = [v for v in self.critical_values() if v > 0]
        return min(pos) if pos else math.inf

    def max_value(self):
        vals = [n.value for n in self.maxima] + [math.pi / 2 for _ in self.flat_components()]
        return max(vals) if vals else 0.0

    def flat_components(self):
        """Connected sets of non-isolated maxima (value pi/2), as lists of node ids."""
        ids = [i for i, nd in enumerate(self.nodes) if nd.kind == "max_edge"]
        uf = _UF(len(self.nodes))
        for e in self.edges:
            if len(e.nodes) == 2:
                a, b = e.nodes[0][1], e.nodes[-1][1]
                if self.nodes[a].kind == "max_edge" and self.nodes[b].kind == "max_edge":
                    uf.union(a, b)
        comps = {}
        for i in ids:
            comps.setdefault(uf.find(i), []).append(i)
        return list(comps.values())

    @property
    def n_max_components(self):
        return len(self.maxima) + len(self.flat_components())

    def gamma_sizes(self):
        """(|Gamma_0|, |Gamma_1|): vertices of multiplicity >= 3 and edges."""
        V0 = len(self.gamma_vertices)
        if self.edges:
            return V0, len(self.edges)
        mu = sum(v.multiplicity for v in self.gamma_vertices)
        if mu % 2:
            raise NeedsRefinement("odd total multiplicity")
        return V0, mu // 2

    def gamma_degrees(self):
        deg = [0] * len(self.nodes)
        n_sub = 0
        for e in self.edges:
            for (_, a), (_, b) in zip(e.nodes[:-1], e.nodes[1:]):
                deg[a] += 1
                deg[b] += 1
                n_sub += 1
        return deg, n_sub

    def gamma_consistent(self):
        """Traced graph has the homotopy type forced by the surface and valences match multiplicities."""
        deg, n_sub = self.gamma_degrees()
        if len(self.nodes) - n_sub != self.surface.euler_characteristic - self.surface.n:
            return False
        for nd, d in zip(self.nodes, deg):
            want = nd.multiplicity if isinstance(nd, GammaVertex) else 2
            if d != want:
                return False
        return True

    def check_invariants(self, tol=1e-9):
        """Structural statements of the Voronoi Morse theory; returns a dict of (value, bound, ok)."""
        s = self.surface
        g, n = s.genus, s.n
        chi = s.chi_dot
        V0, E1 = self.gamma_sizes()
        out = {}
        out["valence"] = (min([v.multiplicity for v in self.gamma_vertices], default=3), 3, all(v.multiplicity >= 3 for v in self.gamma_vertices))
        out["gamma_edges"] = (E1, 6 * g - 6 + 3 * n, E1 <= 6 * g - 6 + 3 * n)
        out["gamma_vertices"] = (V0, 4 * g - 4 + 2 * n, V0 <= 4 * g - 4 + 2 * n)
        svals = [p.value for p in self.saddles]
        out["saddle_values"] = (max(svals, default=0.0), math.pi / 2, all(v < math.pi / 2 + tol for v in svals))
        out["saddle_count"] = (len(svals), -3 * chi, len(svals) <= -3 * chi)
        dm = self.n_max_components - len(svals)
        out["delaunay_morse"] = (dm, chi, dm == chi)
        deg, n_sub = self.gamma_degrees()
        cg = len(self.nodes) - n_sub
        out["euler_gamma"] = (cg, s.euler_characteristic - n, cg == s.euler_characteristic - n)
        return out

    # -- topology of sub- and superlevel sets
    def sublevel_partition(self, r):
        """Union-find of marked-point indices joined by saddle geodesics of value <= r."""
        uf = _UF(len(self.field.sources))
        for p in self.saddles:
            if p.value <= r:
                uf.union(p.sources[0], p.sources[1])
        comps = {}
        for i in range(len(self.field.sources)):
            comps.setdefault(uf.find(i), []).append(i)
        return [tuple(sorted(c)) for c in comps.values()]

    def sublevel_euler(self, cones, r):
        cs = set(cones)
        n_sad = sum(1 for p in self.saddles if p.value <= r and p.sources[0] in cs)
        n_max = sum(1 for p in self.maxima if p.value <= r and set(p.sources) & cs)
        return len(cs) - n_sad + n_max

    def superlevel_components(self, r):
        """Components of Gamma above r: (uf over node ids, euler characteristic per root)."""
        up = [i for i, nd in enumerate(self.nodes) if nd.value > r]
        uf = _UF(len(self.nodes))
        for e in self.edges:
            for (s0, a), (s1, b) in zip(e.nodes[:-1], e.nodes[1:]):
                if self.nodes[a].value > r and self.nodes[b].value > r:
                    uf.union(a, b)
        chi = {}
        for i in up:
            chi[uf.find(i)] = chi.get(uf.find(i), 0) + 1
        for e in self.edges:
            for (s0, a), (s1, b) in zip(e.nodes[:-1], e.nodes[1:]):
                if self.nodes[a].value > r and self.nodes[b].value > r:
                    chi[uf.find(a)] -= 1
        return uf, chi

    def node_toward_higher(self, t, q, ga, gb):
        """Node reached by climbing Gamma from the tie point q of images ga, gb in triangle t."""
        for ei, e in enumerate(self.edges):
            for (tt, p0, p1, A, B, s0, s1) in e.segments:
                if tt != t:
                    continue
                if not ((np.max(np.abs(A - ga)) < 1e-11 and np.max(np.abs(B - gb)) < 1e-11) or (np.max(np.abs(A - gb)) < 1e-11 and np.max(np.abs(B - ga)) < 1e-11)):
                    continue
                L = geodesic_dist(p0, p1)
                a0, a1 = geodesic_dist(p0, q), geodesic_dist(q, p1)
                if abs(a0 + a1 - L) > 1e-10 * max(1.0, L) + 1e-13:
                    continue
                sq = s0 + a0
                ns = e.nodes
                for (sa, na), (sb, nb) in zip(ns[:-1], ns[1:]):
                    if sa - 1e-12 <= sq <= sb + 1e-12:
                        return na if self.nodes[na].value >= self.nodes[nb].value else nb
        return None

    def cell_boundary_node(self, src, r):
        best = None
        for i, nd in enumerate(self.nodes):
            if nd.value > r and src in nd.sources:
                if best is None or nd.value > self.nodes[best].value:
                    best = i
        return best


def _circumcenters(A, B, C):
    n = np.cross(B - A, C - A)
    nn = np.linalg.norm(n)
    if nn < 1e-300:
        return []
    n = n / nn
    return [n, -n]


def _opposite_pair(p, Xs):
    """Indices of the two directions bounding the largest angular gap."""
    e1 = tangent_towards(p, Xs[0])
    e2 = np.cross(p, e1)
    ang = [math.atan2(float(np.dot(tangent_towards(p, X), e2)), float(np.dot(tangent_towards(p, X), e1))) % TWO_PI for X in Xs]
    order = np.argsort(ang)
    best, pair = -1.0, (0, 1)
    for i in range(len(order)):
        a, b = order[i], order[(i + 1) % len(order)]
        g = (ang[b] - ang[a]) % TWO_PI if i + 1 < len(order) else ang[b] + TWO_PI - ang[a]
        if g > best:
            best, pair = g, (int(a), int(b))
    return pair


def _directions_gap(p, Xs):
    """Largest angular gap between tangent directions from p to the points Xs."""
    e1 = tangent_towards(p, Xs[0])
    e2 = np.cross(p, e1)
    ang = []
    for X in Xs:
        u = tangent_towards(p, X)
        ang.append(math.atan2(float(np.dot(u, e2)), float(np.dot(u, e1))) % TWO_PI)
    ang = sorted(ang)
    gaps = [ang[i + 1] - ang[i] for i in range(len(ang) - 1)] + [ang[0] + TWO_PI - ang[-1]]
    return max(gaps), ang


def _classify(value, gap, mult):
    """Local type at a point realized by several directions."""
    if gap > math.pi + ANGLE_TOL:
        return "regular"
    if gap < math.pi - ANGLE_TOL:
        return "max"
    # two opposite directions, the rest on one side
    if abs(value - math.pi / 2) <= 1e-9:
        return "max_edge"
    if value > math.pi / 2:
        return "max"
    return "saddle"


def _same_point(s, t1, p1, t2, p2, tol):
    if t1 == t2:
        return geodesic_dist(p1, p2) < tol
    for k in range(3):
        nb = s.neighbor(t1, k)
        if nb is not None and nb[0] == t2 and geodesic_dist(s.transition[t1, k] @ p1, p2) < tol:
            return True
    return False


def _star(s, t, p, tol=1e-12):
    """Triangles whose closure contains the point p of triangle t, as (u, M) with M: chart t -> chart u."""
    out = [(t, np.eye(3))]
    stack = [(t, np.eye(3))]
    seen = [(t, p)]
    while stack:
        u, M = stack.pop()
        q = M @ p
        V = s.charts[u]
        for k in range(3):
            n = np.cross(V[k], V[(k + 1) % 3])
            n /= np.linalg.norm(n)
            if abs(float(np.dot(n, q))) > tol:
                continue
            # the side arc, not its great circle
            L = geodesic_dist(V[k], V[(k + 1) % 3])
            if geodesic_dist(V[k], q) + geodesic_dist(q, V[(k + 1) % 3]) > L + 1e-9:
                continue
            nb = s.neighbor(u, k)
            if nb is None:
                continue
            M2 = s.transition[u, k] @ M
            q2 = M2 @ p
            if any(w == nb[0] and np.max(np.abs(q2 - r)) < 1e-9 for w, r in seen):
                continue
            seen.append((nb[0], q2))
            out.append((nb[0], M2))
            stack.append((nb[0], M2))
    return out


def _realizers(s, tris, t, p, star=None):
    """V(p) and the distinct realizing image positions (chart t) with their sources."""
    star = star if star is not None else _star(s, t, p)
    cand = []
    for u, M in star:
        ti = tris[u]
        if ti.G == 0:
            continue
        d = ti.group_dist((M @ p)[None, :])[:, 0]
        for g in range(ti.G):
            if np.isfinite(d[g]):
                cand.append((float(d[g]), M.T @ ti.GX[g], int(ti.Gsrc[g])))
    if not cand:
        return math.inf, [], []
    v = min(c[0] for c in cand)
    Xs, srcs = [], []
    for dv, X, sr in cand:
        if dv <= v + _tie(v) and not any(np.max(np.abs(X - Y)) < 1e-12 for Y in Xs):
            Xs.append(X)
            srcs.append(sr)
    return v, Xs, srcs


def _contains(Xs, X):
    return any(np.max(np.abs(X - Y)) < 1e-12 for Y in Xs)


def extract_complex(s: ConeSurface, f: ExactField, check=True) -> VoronoiComplex:
    """Voronoi graph and critical points; structural invariants asserted when check is set."""
    tris = [_TriImages(f, t) for t in range(s.F)]
    raw = []  # (kind, value, t, p, realizer positions, sources, mult, pair)

    def add(kind, t, p, vertex):
        v, Xs, srcs = _realizers(s, tris, t, p)
        if len(Xs) < (3 if vertex else 2) or (not vertex and len(Xs) != 2):
            return
        gap, _ = _directions_gap(p, Xs)
        kind = _classify(v, gap, len(Xs))
        pair = ()
        if kind == "saddle":
            i0, i1 = _opposite_pair(p, Xs)
            pair = tuple(sorted((srcs[i0], srcs[i1])))
        tag = "vertex:" + kind if vertex else kind
        raw.append((tag, v, t, p, tuple(Xs), tuple(sorted(set(srcs))), len(Xs), pair))

    for t, ti in enumerate(tris):
        G = ti.G
        for a in range(G):
            for b in range(a + 1, G):
                A, B = ti.GX[a], ti.GX[b]
                D = geodesic_dist(A, B)
                if D < 1e-15:
                    continue
                if D > math.pi - 1e-9:
                    continue  # antipodal images tie along a whole great circle at pi/2
                T = tangent_towards(A, B)
                m = math.cos(D / 2) * A + math.sin(D / 2) * T
                for pt in (m, -m):
                    if not ti.inside(pt):
                        continue
                    v, Xs, _ = _realizers(s, tris, t, pt)
                    if _contains(Xs, A) and _contains(Xs, B):
                        add(None, t, pt, len(Xs) > 2)
        for a in range(G):
            for b in range(a + 1, G):
                for c in range(b + 1, G):
                    A, B, C = ti.GX[a], ti.GX[b], ti.GX[c]
                    for cc in _circumcenters(A, B, C):
                        if not ti.inside(cc):
                            continue
                        v, Xs, _ = _realizers(s, tris, t, cc)
                        if _contains(Xs, A) and _contains(Xs, B) and _contains(Xs, C):
                            add(None, t, cc, True)
    # deduplicate across triangles
    stars = [_star(s, r[2], r[3]) for r in raw]
    uf = _UF(len(raw))
    for i in range(len(raw)):
        for j in range(i + 1, len(raw)):
            if raw[i][0] != raw[j][0] or abs(raw[i][1] - raw[j][1]) > 10 * _tie(raw[i][1]):
                continue
            tol = 1e-13 + 1e-8 * raw[i][1]
            same = any(u == raw[j][2] and geodesic_dist(M @ raw[i][3], raw[j][3]) < tol for u, M in stars[i])
            if same or _same_point(s, raw[i][2], raw[i][3], raw[j][2], raw[j][3], tol):
                uf.union(i, j)
    groups = {}
    for i in range(len(raw)):
        groups.setdefault(uf.find(i), []).append(i)
    nodes = []
    for root in sorted(groups):
        kind, v, t, p, Xs, srcs, mult, pair = raw[root]
        occ = []
        for i in groups[root]:
            for u, M in stars[i]:
                q = M @ raw[i][3]
                if not any(o[0] == u and geodesic_dist(o[1], q) < 1e-9 for o in occ):
                    occ.append((u, q, tuple(M @ X for X in raw[i][4])))
        if kind.startswith("vertex:"):
            nodes.append(GammaVertex(v, (t, p), mult, kind.split(":")[1], srcs, occ, pair))
        else:
            nodes.append(CriticalPoint(kind, v, (t, p), srcs, mult, occ))
    cx = VoronoiComplex(s, f, nodes, [])
    try:
        cx.edges = _trace_edges(s, tris, cx)
        cx.gamma_ok = cx.gamma_consistent()
    except NeedsRefinement:
        cx.edges, cx.gamma_ok = [], False
    if check:
        if not cx.gamma_ok:
            raise NeedsRefinement("Voronoi graph could not be resolved at working precision")
        inv = cx.check_invariants()
        bad = {k: v for k, v in inv.items() if not v[2]}
        if bad:
            raise NeedsRefinement(f"Voronoi invariants failed: {bad}")
    return cx


def _pair_adjacent(p, Xs, A, B):
    """Whether the directions to A and B bound an angular sector at p free of other realizers."""
    if len(Xs) == 2:
        return True
    e1 = tangent_towards(p, Xs[0])
    e2 = np.cross(p, e1)

    def ang(X):
        u = tangent_towards(p, X)
        return math.atan2(float(np.dot(u, e2)), float(np.dot(u, e1))) % TWO_PI

    angs = sorted(ang(X) for X in Xs)
    a, b = ang(A), ang(B)
    for lo, hi in ((a, b), (b, a)):
        g = (hi - lo) % TWO_PI
        if g >= math.pi:
            continue  # the wide gap of a spurious near tie
        inner = [(x - lo) % TWO_PI for x in angs]
        if not any(1e-13 < y < g - 1e-13 for y in inner):
            return True
    return False


def _trace_edges(s, tris, cx):
    """Assemble Gamma edges from per-triangle bisector segments.

    In each triangle, the tie arc of two image groups is cut at the nodes
    lying on it; a piece belongs to Gamma when its sample points are
    realized by the two groups in adjacent directions.  Pieces are joined
    across triangle sides and chained into edges between nodes.
    """
    nodes = cx.nodes
    occ_by_tri = {}
    for nid, nd in enumerate(nodes):
        for (t, p, Xs) in nd.occurrences:
            occ_by_tri.setdefault(t, []).append((nid, p, Xs))
    pieces = []  # (t, p0, p1, A, B, key0, key1)
    bpoints = []  # (t, point)

    def bkey(t, q):
        for i, (u, r) in enumerate(bpoints):
            if u == t and np.max(np.abs(r - q)) < 1e-11:
                return ("b", i)
        bpoints.append((t, q))
        return ("b", len(bpoints) - 1)

    for t, ti in enumerate(tris):
        N = ti.N
        for ga in range(ti.G):
            for gb in range(ga + 1, ti.G):
                A, B = ti.GX[ga], ti.GX[gb]
                if np.max(np.abs(A - B)) < 1e-15:
                    continue
                n = unit(A - B)
                u0 = unit(A + B) if np.linalg.norm(A + B) > 1e-9 else unit(np.cross(n, ti.V[0] if abs(np.dot(n, ti.V[0])) < 0.9 else ti.V[1]))
                u0 = unit(u0 - np.dot(u0, n) * n)
                w0 = np.cross(n, u0)
                I = [(0.0, TWO_PI)]
                for k in range(3):
                    I = _intersect(I, _arc_intervals(1e-13, float(np.dot(N[k], u0)), float(np.dot(N[k], w0))))
                if not I:
                    continue
                I = _union(I)
                if len(I) == 2 and I[0][0] <= 0 and I[-1][1] >= TWO_PI:
                    I = [(I[-1][0] - TWO_PI, I[0][1])]
                for lo, hi in I:
                    if hi - lo < 1e-14:
                        continue
                    full = hi - lo >= TWO_PI - 1e-12
                    ev = [(lo, None), (hi, None)]
                    for nid, q, Xs in occ_by_tri.get(t, []):
                        if not (_contains(Xs, A) and _contains(Xs, B)):
                            continue
                        if abs(float(np.dot(q, n))) > 1e-9:
                            continue
                        ph = math.atan2(float(np.dot(q, w0)), float(np.dot(q, u0)))
                        while ph < lo - 1e-9:
                            ph += TWO_PI
                        if ph <= hi + 1e-9:
                            ev.append((ph, nid))
                    ev.sort(key=lambda e: (e[0], e[1] is None))
                    # snap interval ends to nodes sitting on them
                    merged = []
                    for ph, nid in ev:
                        if merged and abs(ph - merged[-1][0]) < 1e-10:
                            if merged[-1][1] is None:
                                merged[-1] = (merged[-1][0], nid)
                            continue
                        merged.append((ph, nid))
                    if full and merged[0][1] is None and merged[-1][1] is None and len(merged) > 2:
                        merged = merged[1:-1] + [(merged[1][0] + TWO_PI, merged[1][1])]

                    def pt(ph):
                        return math.cos(ph) * u0 + math.sin(ph) * w0

                    for (p0, k0), (p1, k1) in zip(merged[:-1], merged[1:]):
                        if p1 - p0 < 1e-14:
                            continue
                        ok = True
                        for fr in (0.25, 0.5, 0.75):
                            q = pt(p0 + fr * (p1 - p0))
                            v, Xs, _ = _realizers(s, tris, t, q)
                            if not (_contains(Xs, A) and _contains(Xs, B) and _pair_adjacent(q, Xs, A, B)):
                                ok = False
                                break
                        if not ok:
                            continue
                        qm = pt(0.5 * (p0 + p1))
                        on_side = [k for k in range(3) if abs(float(np.dot(N[k], qm))) <= 1e-12]
                        if on_side:
                            nb = s.neighbor(t, on_side[0])
                            if nb is not None and nb[0] < t:
                                continue  # recorded from the other triangle
                        P0, P1 = pt(p0), pt(p1)
                        key0 = ("n", k0) if k0 is not None else bkey(t, P0)
                        key1 = ("n", k1) if k1 is not None else bkey(t, P1)
                        pieces.append((t, P0, P1, A, B, key0, key1, p1 - p0))
    # identify boundary points across triangles
    uf = _UF(len(bpoints))
    for i, (t, q) in enumerate(bpoints):
        for u, M in _star(s, t, q, 1e-11)[1:]:
            r = M @ q
            for j, (t2, q2) in enumerate(bpoints):
                if t2 == u and np.max(np.abs(q2 - r)) < 1e-10:
                    uf.union(i, j)

    def canon(key):
        return key if key[0] == "n" else ("b", uf.find(key[1]))

    adj = {}
    for i, pc in enumerate(pieces):
        for key in (canon(pc[5]), canon(pc[6])):
            adj.setdefault(key, []).append(i)
    used = [False] * len(pieces)
    edges = []

    def walk(start_key, i):
        segs, ns = [], [(0.0, start_key[1])] if start_key[0] == "n" else []
        total = 0.0
        key = start_key
        while True:
            used[i] = True
            t, P0, P1, A, B, k0, k1, L = pieces[i]
            if canon(k0) == key:
                nxt = canon(k1)
                segs.append((t, P0, P1, A, B, total, total + L))
            else:
                nxt = canon(k0)
                segs.append((t, P1, P0, A, B, total, total + L))
            total += L
            if nxt[0] == "n":
                ns.append((total, nxt[1]))
                if isinstance(nodes[nxt[1]], GammaVertex) or nxt == start_key:
                    return segs, ns, total, nxt
            if nxt == start_key:
                return segs, ns, total, nxt
            cand = [j for j in adj.get(nxt, []) if not used[j]]
            if not cand:
                return segs, ns, total, nxt
            key, i = nxt, cand[0]

    # start from Gamma vertices, then from other nodes, then remaining cycles
    order = [("n", i) for i, nd in enumerate(nodes) if isinstance(nd, GammaVertex)]
    order += [("n", i) for i, nd in enumerate(nodes) if not isinstance(nd, GammaVertex)]
    for key in order:
        for i in list(adj.get(key, [])):
            if used[i]:
                continue
            segs, ns, total, end = walk(key, i)
            edges.append(GammaEdge((ns[0][1], ns[-1][1]), ns, total, segs))
    for i in range(len(pieces)):
        if not used[i]:
            k = canon(pieces[i][5])
            segs, ns, total, end = walk(k, i)
            if not ns:
                t, P0 = pieces[i][0], pieces[i][1]
                v, Xs, srcs = _realizers(s, tris, t, P0)
                if abs(v - math.pi / 2) > 1e-9 or len(Xs) != 2:
                    raise NeedsRefinement("closed Gamma curve without nodes")
                # a circle of non-isolated maxima
                nodes.append(CriticalPoint("max_edge", v, (t, P0), tuple(sorted(set(srcs))), 2, [(t, P0, tuple(Xs))]))
                nid = len(nodes) - 1
                ns = [(0.0, nid), (total, nid)]
            edges.append(GammaEdge((ns[0][1], ns[-1][1]), ns, total, segs))
    # chains that pass through degree-two saddles started at a saddle get merged at Gamma vertices only
    return _merge_at_regular(edges, nodes)


def _merge_at_regular(edges, nodes):
    """Join edge chains that meet at a node which is not a Gamma vertex (saddles, maxima on edges)."""
    def is_break(nid):
        nd = nodes[nid]
        return isinstance(nd, GammaVertex)

    changed = True
    while changed:
        changed = False
        for i, e in enumerate(edges):
            for end_i in (0, -1):
                nid = e.nodes[end_i][1]
                if is_break(nid):
                    continue
                for j, f in enumerate(edges):
                    if j == i:
                        continue
                    for end_j in (0, -1):
                        if f.nodes[end_j][1] != nid:
                            continue
                        a = e if end_i == -1 else _reverse_edge(e)
                        b = f if end_j == 0 else _reverse_edge(f)
                        L = a.length
                        segs = a.segments + [(t, p0, p1, A, B, s0 + L, s1 + L) for (t, p0, p1, A, B, s0, s1) in b.segments]
                        ns = a.nodes + [(x + L, n) for x, n in b.nodes[1:]]
                        new = GammaEdge((ns[0][1], ns[-1][1]), ns, L + b.length, segs)
                        edges = [x for k, x in enumerate(edges) if k not in (i, j)] + [new]
                        changed = True
                        break
                    if changed:
                        break
                if changed:
                    break
            if changed:
                break
    return edges


def _reverse_edge(e):
    L = e.length
    segs = [(t, p1, p0, A, B, L - s1, L - s0) for (t, p0, p1, A, B, s0, s1) in reversed(e.segments)]
    ns = [(L - x, n) for x, n in reversed(e.nodes)]
    return GammaEdge((ns[0][1], ns[-1][1]), ns, L, segs)


# ---------------------------------------------------------------------------
# level sets


def _arc_intervals(c, a, b):
    """Subset of the circle where c + a cos phi + b sin phi >= 0, as intervals in [0, 2 pi]."""
    R = math.hypot(a, b)
    if R <= abs(c):
        return [(0.0, TWO_PI)] if c >= 0 else []
    phi0 = math.atan2(b, a)
    h = math.acos(max(-1.0, min(1.0, -c / R)))
    lo, hi = phi0 - h, phi0 + h
    out = []
    lo_m, hi_m = lo % TWO_PI, (lo % TWO_PI) + (hi - lo)
    if hi_m <= TWO_PI:
        out.append((lo_m, hi_m))
    else:
        out.append((lo_m, TWO_PI))
        out.append((0.0, hi_m - TWO_PI))
    return out


def _intersect(I, J):
    out = []
    for a0, a1 in I:
        for b0, b1 in J:
            lo, hi = max(a0, b0), min(a1, b1)
            if hi > lo:
                out.append((lo, hi))
    return sorted(out)


def _union(I):
    I = sorted(I)
    out = []
    for lo, hi in I:
        if out and lo <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], hi))
        else:
            out.append((lo, hi))
    return out


@dataclass
class LevelPiece:
    t: int
    group: int
    src: int
    rho: float
    phi0: float
    phi1: float
    P0: np.ndarray
    P1: np.ndarray
    closed: bool
    e1: np.ndarray
    e2: np.ndarray
    X: np.ndarray
    end_ties: tuple = (None, None)  # per end: other group position if an ownership switch

    @property
    def length(self):
        return math.sin(self.rho) * (self.phi1 - self.phi0)

    def point(self, phi):
        return math.cos(self.rho) * self.X + math.sin(self.rho) * (math.cos(phi) * self.e1 + math.sin(phi) * self.e2)


@dataclass
class LevelComponent:
    pieces: list
    length: float
    sources: tuple
    switches: list  # (t, q, X_own, X_other)


class LevelSets:
    """Exact level-set extraction for an ExactField."""

    def __init__(self, f: ExactField, samples: int = 48):
        self.f = f
        self.s = f.surface
        self.tris = [_TriImages(f, t) for t in range(self.s.F)]
        self.samples = samples

    def pieces(self, r):
        out = []
        for ti in self.tris:
            for g in range(ti.G):
                rho = r - ti.Gsig[g]
                if rho <= 0 or rho >= math.pi:
                    continue
                out.extend(self._group_pieces(ti, g, rho))
        return out

    def _group_pieces(self, ti, g, rho):
        X = ti.GX[g]
        e1 = unit(np.cross(X, [0.0, 0.0, 1.0])) if abs(X[2]) < 0.9 else unit(np.cross(X, [1.0, 0.0, 0.0]))
        e2 = np.cross(X, e1)
        cr, sr = math.cos(rho), math.sin(rho)
        r = rho + ti.Gsig[g]

        def coef(n):
            return cr * float(np.dot(n, X)), sr * float(np.dot(n, e1)), sr * float(np.dot(n, e2))

        def cons(n, eps=0.0):
            c, a, b = coef(n)
            return _arc_intervals(c + eps, a, b)

        tri = [(0.0, TWO_PI)]
        for k in range(3):
            tri = _intersect(tri, cons(ti.N[k], 1e-15))
            if not tri:
                return []
        allowed = []
        for r_ in np.where(ti.g_of == g)[0]:
            I = tri
            if not ti.full[r_]:
                I = _intersect(I, cons(ti.n1[r_], 1e-13))
                I = _intersect(I, cons(ti.n2[r_], 1e-13))
            allowed.extend(I)
        allowed = _union(allowed)
        if not allowed:
            return []

        def pt(phi):
            return cr * X + sr * (math.cos(phi) * e1 + math.sin(phi) * e2)

        # candidate ownership switches: intersections with the level circles of the other groups
        cuts = []
        for h in range(ti.G):
            if h == g:
                continue
            rh = r - ti.Gsig[h]
            if rh <= 0 or rh >= math.pi:
                continue
            c, a_, b_ = coef(ti.GX[h])
            R = math.hypot(a_, b_)
            if R < 1e-300:
                continue
            q = (math.cos(rh) - c) / R
            if abs(q) > 1:
                continue
            phi0 = math.atan2(b_, a_)
            hw = math.acos(q)
            for z in (phi0 - hw, phi0 + hw):
                cuts.append((z % TWO_PI, h))

        def owns(phi):
            D = ti.group_dist(pt(phi)[None, :])[:, 0]
            m = D.min()
            if not D[g] <= m + 1e-14 * max(1.0, m):
                return False
            ties = np.where(D <= D[g] + 1e-14)[0]
            return not (ties[0] < g and np.all(np.abs(ti.GX[ties[0]] - X) < 1e-12))

        full_circle = len(allowed) == 1 and allowed[0][0] <= 0 and allowed[0][1] >= TWO_PI
        pieces = []
        for lo, hi in allowed:
            bps = sorted([(lo, None)] + [(z, h) for z, h in cuts if lo < z < hi] + [(hi, None)])
            runs = []
            for (z0, h0), (z1, h1) in zip(bps[:-1], bps[1:]):
                if z1 - z0 <= 1e-15:
                    continue
                if not owns(0.5 * (z0 + z1)):
                    continue
                if runs and abs(runs[-1][1] - z0) <= 1e-15:
                    runs[-1] = (runs[-1][0], z1, runs[-1][2], h1)
                else:
                    runs.append((z0, z1, h0, h1))
            for a0, a1, h0, h1 in runs:
                closed = full_circle and a0 <= lo and a1 >= hi and h0 is None and h1 is None
                ties = []
                for phi, h in ((a0, h0), (a1, h1)):
                    ties.append(ti.GX[h] if h is not None else None)
                pieces.append(LevelPiece(ti.t, g, int(ti.Gsrc[g]), rho, a0, a1, pt(a0), pt(a1), closed, e1, e2, X, tuple(ties)))
        # join the two halves of a run cut at phi = 0 on a full circle
        if full_circle and len(pieces) >= 2 and pieces[0].phi0 <= 0 and pieces[-1].phi1 >= TWO_PI:
            p0, pl = pieces[0], pieces[-1]
            merged = LevelPiece(ti.t, g, p0.src, rho, pl.phi0, p0.phi1 + TWO_PI, pl.P0, p0.P1, False, e1, e2, X, (pl.end_ties[0], p0.end_ties[1]))
            pieces = [merged] + pieces[1:-1]
        return pieces

    def components(self, r):
        pcs = self.pieces(r)
        uf = _UF(len(pcs))
        ends = []
        for i, pc in enumerate(pcs):
            if not pc.closed:
                ends.append((pc.t, pc.P0, i, 0))
                ends.append((pc.t, pc.P1, i, 1))
        by_tri = {}
        for e in ends:
            by_tri.setdefault(e[0], []).append(e)
        for (t, P, i, w) in ends:
            tol = 1e-13 + 1e-7 * pcs[i].rho
            cands = [(t, P)]
            for k in range(3):
                nb = self.s.neighbor(t, k)
                if nb is not None:
                    cands.append((nb[0], self.s.transition[t, k] @ P))
            for (u, Q) in cands:
                for (t2, P2, j, w2) in by_tri.get(u, []):
                    if j == i and w2 == w:
                        continue
                    if np.linalg.norm(P2 - Q) < tol:
                        uf.union(i, j)
        comps = {}
        for i in range(len(pcs)):
            comps.setdefault(uf.find(i), []).append(pcs[i])
        out = []
        for pl in comps.values():
            sw = []
            for pc in pl:
                for w, tie in enumerate(pc.end_ties):
                    if tie is not None:
                        sw.append((pc.t, pc.P0 if w == 0 else pc.P1, pc.X, tie))
            out.append(LevelComponent(pl, math.fsum(p.length for p in pl), tuple(sorted({p.src for p in pl})), sw))
        return out

    def length(self, r):
        return math.fsum(p.length for p in self.pieces(r))

    def length_by_source(self, r):
        out = {}
        for p in self.pieces(r):
            out[p.src] = out.get(p.src, 0.0) + p.length
        return out


def _check_regular(cx, r, tol):
    if cx is None:
        return
    for v in cx.critical_values():
        if v > 0 and abs(v - r) <= 10 * tol:
            raise NearCriticalLevel(f"level {r} within {10 * tol} of critical value {v}")


def level_length(f: ExactField, r: float, complex: VoronoiComplex | None = None, tol: float = 1e-4) -> float:
    """Total length of V^{-1}(r), checked against 2 pi sin(r) |theta|_1."""
    _check_regular(complex, r, tol)
    if not (0 < r < math.pi):
        raise DomainError("level must lie in (0, pi)")
    L = LevelSets(f).length(r)
    bound = TWO_PI * math.sin(r) * _theta_norm(f)
    if L > bound + tol:
        raise AssertionError(f"level length {L} exceeds {bound}")
    return L


def _theta_norm(f):
    s = f.surface
    return math.fsum(float(s.vertex_angle[v]) / TWO_PI for v in f.sources)


def _breakpoints(f, complex, r):
    pts = {0.0, r}
    if complex is not None:
        for nd in complex.nodes:
            if 0 < nd.value < r:
                pts.add(nd.value)
    for v in f.vdist:
        if 0 < v < r:
            pts.add(float(v))
    return sorted(pts)


def integrate_levels(fun, breaks, n=24):
    """Piecewise Gauss-Legendre quadrature of fun(t) over the break intervals.

    Level lengths have square-root behaviour at saddle values, so each
    interval is mapped through the smoothstep 3u^2 - 2u^3, which flattens
    both endpoints.  Intervals spanning several scales are integrated in log t.
    """
    x, w = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (x + 1)
    S = 3 * u**2 - 2 * u**3
    dS = 6 * u * (1 - u)
    total = []
    for a, b in zip(breaks[:-1], breaks[1:]):
        if b - a <= 0:
            continue
        if a > 0 and b / a > 50:
            la, lb = math.log(a), math.log(b)
            for si, di, wi in zip(S, dS, w):
                t = math.exp(la + (lb - la) * si)
                total.append(0.5 * wi * di * (lb - la) * t * fun(t))
        else:
            for si, di, wi in zip(S, dS, w):
                t = a + (b - a) * si
                total.append(0.5 * wi * di * (b - a) * fun(t))
    return math.fsum(total)


def sublevel_area(f: ExactField, r: float, complex: VoronoiComplex | None = None, n: int = 24, tol: float = 1e-4) -> float:
    """Area of V^{-1}([0, r]) by the co-area formula (|grad V| = 1)."""
    if not (0 < r < math.pi):
        raise DomainError("level must lie in (0, pi)")
    if complex is None:
        complex = extract_complex(f.surface, f, check=False)
    ls = LevelSets(f)
    br = _refine_small(_breakpoints(f, complex, r))
    A = integrate_levels(ls.length, br, n)
    bound = math.pi * r * r * _theta_norm(f)
    if A > bound + tol:
        raise AssertionError(f"sublevel area {A} exceeds {bound}")
    return A


def _refine_small(br):
    out = [br[0]]
    for b in br[1:]:
        a = out[-1]
        if a == 0.0 and b > 0:
            # split [0, b] so that the geometric rule handles the scale-free part near 0
            out.append(b * 1e-6)
        out.append(b)
    return out


def max_voronoi(f: ExactField, complex: VoronoiComplex | None = None, tol: float = 1e-4) -> float:
    """Maximum of V: the largest maximum of the complex, cross-checked on samples.

    On a closed surface with chi(S, theta) > 0 the maximum is at least
    sqrt(2 chi(S, theta) / |theta|_1).
    """
    if complex is None:
        complex = extract_complex(f.surface, f, check=False)
    samp = max(float(f.value(t, P).max()) for t, P in f.sample_points(6))
    m = complex.max_value()
    if samp > m + 1e-9:
        raise NeedsRefinement("sampled value exceeds the largest detected maximum")
    s = f.surface
    if not s.boundary_components and s.chi_S_theta > 0:
        bound = math.sqrt(2 * s.chi_S_theta / s.theta_norm)
        if m < bound - tol:
            raise AssertionError(f"max V {m} below {bound}")
    return m


# ---------------------------------------------------------------------------
# topology graph at a level


@dataclass
class LevelTopology:
    r: float
    components: list  # LevelComponent
    sub: list  # tuples of source indices (sublevel components)
    sub_chi: list
    sup_chi: dict  # superlevel root -> euler characteristic
    curve_sub: list  # per curve: index into sub
    curve_sup: list  # per curve: superlevel root or None
    essential: list
    sides: list  # per curve: [(chi, cones) side A (sublevel side), side B]


def level_topology(cx: VoronoiComplex, r: float, ls: LevelSets | None = None) -> LevelTopology:
    f = cx.field
    ls = ls or LevelSets(f)
    comps = ls.components(r)
    sub = cx.sublevel_partition(r)
    sub_of = {}
    for i, c in enumerate(sub):
        for x in c:
            sub_of[x] = i
    sub_chi = [cx.sublevel_euler(c, r) for c in sub]
    if not cx.gamma_ok:
        return _planar_topology(cx, r, comps, sub, sub_of, sub_chi)
    uf, sup_chi = cx.superlevel_components(r)
    curve_sub, curve_sup = [], []
    for c in comps:
        curve_sub.append(sub_of[c.sources[0]])
        sup = None
        for (t, q, Xo, Xt) in c.switches:
            nid = cx.node_toward_higher(t, q, Xo, Xt)
            if nid is not None and cx.nodes[nid].value > r:
                sup = uf.find(nid)
                break
        if sup is None:
            nid = cx.cell_boundary_node(c.sources[0], r)
            if nid is not None:
                sup = uf.find(nid)
        curve_sup.append(sup)
    # bipartite graph: sublevel nodes ("k", i), superlevel nodes ("u", root)
    nodes = [("k", i) for i in range(len(sub))] + [("u", u) for u in sup_chi]
    chi_of = {("k", i): sub_chi[i] for i in range(len(sub))}
    chi_of.update({("u", u): sup_chi[u] for u in sup_chi})
    cones_of = {("k", i): len(sub[i]) for i in range(len(sub))}
    cones_of.update({("u", u): 0 for u in sup_chi})
    ess, sides = [], []
    for ci in range(len(comps)):
        a = ("k", curve_sub[ci])
        b = ("u", curve_sup[ci]) if curve_sup[ci] is not None else None
        if b is None:
            ess.append(False)
            sides.append(None)
            continue
        # connectivity after removing this curve
        adj = {n: set() for n in nodes}
        for cj in range(len(comps)):
            if cj == ci or curve_sup[cj] is None:
                continue
            x, y = ("k", curve_sub[cj]), ("u", curve_sup[cj])
            adj[x].add(y)
            adj[y].add(x)
        seen = {a}
        stack = [a]
        while stack:
            x = stack.pop()
            for y in adj[x]:
                if y not in seen:
                    seen.add(y)
                    stack.append(y)
        if b in seen:
            ess.append(True)
            sides.append(None)
            continue
        sideA = seen
        sideB = set()
        stack = [b]
        sideB.add(b)
        while stack:
            x = stack.pop()
            for y in adj[x]:
                if y not in sideB:
                    sideB.add(y)
                    stack.append(y)
        # euler characteristic of a side: sum over pieces minus nothing (glued along circles)
        chiA = sum(chi_of[n] for n in sideA)
        chiB = sum(chi_of[n] for n in sideB)
        coneA = sum(cones_of[n] for n in sideA)
        coneB = sum(cones_of[n] for n in sideB)
        non_ess = (chiA == 1 and coneA <= 1) or (chiB == 1 and coneB <= 1)
        ess.append(not non_ess)
        sides.append(((chiA, coneA, sideA), (chiB, coneB, sideB)))
    return LevelTopology(r, comps, sub, sub_chi, sup_chi, curve_sub, curve_sup, ess, sides)


def _planar_topology(cx, r, comps, sub, sub_of, sub_chi):
    """Topology from the sublevel data alone, when the Voronoi graph is unresolved.

    On a sphere a connected sublevel component K of Euler characteristic 1 is
    a disk bounded by one level curve, and its complement is a disk holding
    every other cone.  Other configurations are left undecided.
    """
    s = cx.surface
    if s.genus != 0 or s.boundary_components:
        raise NeedsRefinement("Voronoi graph unresolved and surface is not a sphere")
    n = s.n
    curve_sub, ess, sides = [], [], []
    for c in comps:
        k = sub_of[c.sources[0]]
        if sub_chi[k] != 1 or sum(1 for d in comps if sub_of[d.sources[0]] == k) != 1:
            raise NeedsRefinement("Voronoi graph unresolved and the level topology is not forced")
        curve_sub.append(k)
        far = {("k", j) for j in range(len(sub)) if j != k}
        near_cones, far_cones = len(sub[k]), n - len(sub[k])
        ess.append(not (near_cones <= 1 or far_cones <= 1))
        sides.append(((1, near_cones, {("k", k)}), (1, far_cones, far)))
    return LevelTopology(r, comps, sub, sub_chi, {}, curve_sub, [None] * len(comps), ess, sides)


# ---------------------------------------------------------------------------
# cylinders


@dataclass
class CylinderRegion:
    kind: str  # "cylinder" | "cap" | "disk"
    r0: float
    r1: float
    sources: tuple
    t_grid: list
    lengths: list
    modulus: float
    coarse_bound: float
    essential: bool | None
    height_area: tuple = (math.nan, math.nan)


def cylinder_regions(s: ConeSurface, f: ExactField, r0: float, r1: float, complex: VoronoiComplex | None = None,
                     forbid_saddles=True, n: int = 32, tol: float = 1e-4):
    """Components of V^{-1}([r0, r1]) with their modulus lower bounds.

    Each component free of critical points is a cylinder foliated by level
    curves; its modulus is at least the integral of dt / length(level t).
    Components are matched across levels by the marked points owning their
    level curves.
    """
    if not (0 < r0 < r1 < math.pi):
        raise DomainError("need 0 < r0 < r1 < pi")
    if complex is not None:
        sv = [p.value for p in complex.saddles]
        if forbid_saddles and any(r0 <= v <= r1 for v in sv):
            raise SaddleInInterval("saddle value inside the interval")
        _check_regular(complex, r0, tol)
        _check_regular(complex, r1, tol)
    ls = LevelSets(f)
    x, w = np.polynomial.legendre.leggauss(n)
    geometric = r1 / r0 > 4
    if geometric:
        la, lb = math.log(r0), math.log(r1)
        ts = [math.exp(0.5 * (lb - la) * xi + 0.5 * (lb + la)) for xi in x]
        jac = [0.5 * (lb - la) * t for t in ts]
    else:
        ts = [0.5 * (r1 - r0) * xi + 0.5 * (r1 + r0) for xi in x]
        jac = [0.5 * (r1 - r0)] * n
    base = ls.components(r0)
    keys = [c.sources for c in base]
    per = {k: [] for k in keys}
    for t in ts:
        comps = ls.components(t)
        got = {}
        for c in comps:
            k = _match_key(c.sources, keys)
            got[k] = got.get(k, 0.0) + c.length
        for k in keys:
            per[k].append(got.get(k, 0.0))
    theta_norm = s.theta_norm
    ess_flags = {}
    if complex is not None:
        topo = level_topology(complex, r0, ls)
        for c, e in zip(topo.components, topo.essential):
            ess_flags[c.sources] = e
    out = []
    seen = set()
    for k in keys:
        if k in seen:
            continue
        seen.add(k)
        L = per[k]
        if min(L) <= 0:
            kind = "cap"
            M = math.inf
        else:
            kind = "cylinder"
            M = math.fsum(wi * ji / li for wi, ji, li in zip(w, jac, L))
        coarse = math.log(r1 / r0) / (2 * math.pi * theta_norm)
        area = math.fsum(wi * ji * li for wi, ji, li in zip(w, jac, L))
        out.append(CylinderRegion(kind, r0, r1, k, ts, L, M, coarse, ess_flags.get(k), (r1 - r0, area)))
    return out


def _match_key(src, keys):
    for k in keys:
        if set(k) & set(src):
            return k
    return src


def annulus_quadrature(length_fn, r0, r1, n=32):
    """Integral of dt / length(t) over [r0, r1] with the geometric Gauss rule."""
    x, w = np.polynomial.legendre.leggauss(n)
    la, lb = math.log(r0), math.log(r1)
    tot = []
    for xi, wi in zip(x, w):
        t = math.exp(0.5 * (lb - la) * xi + 0.5 * (lb + la))
        tot.append(0.5 * (lb - la) * wi * t / length_fn(t))
    return math.fsum(tot)


# ---------------------------------------------------------------------------
# cores, disks and bubbling


@dataclass
class BubbleDisk:
    kind: int  # 0 or 1 cones
    cone: int | None
    area: float
    boundary_length: float
    dist_to_boundary: float
    lam: float
    b: int | None = None
    residual: float | None = None
    theta: float = 0.0


@dataclass
class CoreResult:
    r: float
    core_cones: tuple
    core_area: float
    core_angle_sum: float
    disks: list
    reason: str = ""


def _component_areas(cx, ls, r, topo, n=20):
    """Areas of sublevel components (by owning cones) and of superlevel components."""
    f = cx.field
    br = _refine_small(_breakpoints(f, cx, r))
    sub_area = []
    for comp in topo.sub:
        cs = set(comp)
        sub_area.append(integrate_levels(lambda t: sum(v for k, v in ls.length_by_source(t).items() if k in cs), br, n))
    total = cx.surface.area
    return sub_area, total


def voronoi_core(s: ConeSurface, f: ExactField, r: float, complex: VoronoiComplex | None = None, tol: float = 1e-4):
    """Voronoi r-core and its complementary disks, or (None, reason).

    The reason is "r <= sys" or "essential level component".
    """
    cx = complex or extract_complex(s, f, check=False)
    if not (0 < r < math.pi / 2):
        raise DomainError("core level must lie in (0, pi/2)")
    _check_regular(cx, r, tol)
    sys_ = cx.min_positive_critical_value()
    if r <= sys_:
        return None, "r <= sys"
    ls = LevelSets(f)
    topo = level_topology(cx, r, ls)
    if any(topo.essential):
        return None, "essential level component"
    cores = []
    for i, comp in enumerate(topo.sub):
        # every curve of K must have its far side a disk with <= 1 cone
        ok = True
        for ci, si in enumerate(topo.curve_sub):
            if si != i:
                continue
            sd = topo.sides[ci]
            if sd is None:
                continue
            far = sd[1]
            if not (far[0] == 1 and far[1] <= 1):
                ok = False
        if ok:
            cores.append(i)
    if len(cores) != 1:
        return None, f"{len(cores)} candidate cores"
    k = cores[0]
    sub_area, total = _component_areas(cx, ls, r, topo)
    disks = []
    for ci, si in enumerate(topo.curve_sub):
        if si != k:
            continue
        sd = topo.sides[ci]
        far = sd[1]
        far_nodes = far[2]
        cones = [x for (kind, idx) in far_nodes if kind == "k" for x in topo.sub[idx]]
        ell = topo.components[ci].length
        area = total - sum(sub_area[j] for j in range(len(topo.sub)) if ("k", j) not in far_nodes) - _sup_area_outside(cx, ls, r, topo, far_nodes)
        if cones:
            x = cones[0]
            f1 = single_source_field(s, s.marked[x])
            dist = min(_min_on_piece(f1, pc) for pc in topo.components[ci].pieces)
            th = float(s.theta[x])
            disks.append(BubbleDisk(1, x, area, ell, dist, ell / dist, theta=th))
        else:
            disks.append(BubbleDisk(0, None, area, ell, math.nan, (ell / TWO_PI) ** 2))
    core_area = sub_area[k]
    ang = TWO_PI * sum(float(s.theta[x]) for x in topo.sub[k])
    for p in cx.saddles:
        if abs(p.value - sys_) <= 1e-12 + 1e-9 * sys_ and not set(p.sources) <= set(topo.sub[k]):
            raise AssertionError("core misses a systole geodesic")
    if not ang > 4 * math.pi / 3:
        raise AssertionError(f"core angle sum {ang} not above 4 pi / 3")
    return CoreResult(r, topo.sub[k], core_area, ang, disks), ""


def _min_on_piece(f1, pc, k=33):
    """Minimum of a single-source distance along a level arc."""
    phis = np.linspace(pc.phi0, pc.phi1, k)
    vals = f1.value(pc.t, np.array([pc.point(ph) for ph in phis]))
    j = int(np.argmin(vals))
    lo, hi = phis[max(j - 1, 0)], phis[min(j + 1, k - 1)]
    res = minimize_scalar(lambda ph: float(f1.value(pc.t, pc.point(ph)[None, :])[0]), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12})
    return min(float(vals[j]), float(res.fun))


def _sup_area_outside(cx, ls, r, topo, far_nodes):
    """Area of superlevel components that are not in far_nodes."""
    return sum(_sup_area(cx, ls, r, u) for (kind, u) in [("u", u) for u in topo.sup_chi] if ("u", u) not in far_nodes)


def _sup_area(cx, ls, r, root, n=16):
    """Area of a superlevel component: co-area over levels above r, curves labelled by Gamma nodes."""
    uf_r, _ = cx.superlevel_components(r)
    members = {i for i in range(len(cx.nodes)) if cx.nodes[i].value > r and uf_r.find(i) == root}
    top = max(cx.nodes[i].value for i in members)
    br = sorted({r, top} | {cx.nodes[i].value for i in members if r < cx.nodes[i].value < top})

    def fun(t):
        uf_t, _ = cx.superlevel_components(t)
        tot = 0.0
        for c in ls.components(t):
            nid = None
            for (tt, q, Xo, Xt) in c.switches:
                nid = cx.node_toward_higher(tt, q, Xo, Xt)
                if nid is not None:
                    break
            if nid is None:
                nid = cx.cell_boundary_node(c.sources[0], t)
            if nid is not None and nid in members:
                tot += c.length
            elif nid is not None:
                root_t = uf_t.find(nid)
                if any(uf_t.find(m) == root_t for m in members if cx.nodes[m].value > t):
                    tot += c.length
        return tot

    return integrate_levels(fun, br, n)


def disk_area_estimates(disk: BubbleDisk):
    """Nearest integer b for the area of a bubbling disk and the residual.

    Without cones |Area - 4 pi b| / 2 pi < (l / 2 pi)^2; with one cone of
    angle 2 pi theta, |Area - 4 pi (theta + b)| / 2 pi < lambda_1.
    """
    if disk.kind == 0:
        ell = disk.boundary_length
        if ell >= TWO_PI:
            raise EstimateInapplicable("boundary length must be < 2 pi")
        bound = (ell / TWO_PI) ** 2
        shift = 0.0
    else:
        bound = disk.lam
        if not bound < 0.5:
            raise EstimateInapplicable("lambda_1 must be < 1/2")
        shift = disk.theta
    b = max(0, int(round(disk.area / (4 * math.pi) - shift)))
    res = abs(disk.area - 4 * math.pi * (shift + b)) / TWO_PI
    if not res < bound:
        raise AssertionError(f"disk area residual {res} not below {bound}")
    disk.b, disk.residual = b, res
    return b, res


def ball_disk(rho: float) -> BubbleDisk:
    """Geodesic ball of radius rho on the round sphere as a disk without cone points."""
    return BubbleDisk(0, None, TWO_PI * (1 - math.cos(rho)), TWO_PI * math.sin(rho), math.nan, math.sin(rho) ** 2)


def cone_disk(theta: float, r: float) -> BubbleDisk:
    """Standard cone disk of angle 2 pi theta and radius r as a one-cone disk."""
    ell = TWO_PI * theta * math.sin(r)
    return BubbleDisk(1, 0, TWO_PI * theta * (1 - math.cos(r)), ell, r, ell / r, theta=theta)


@dataclass
class BubblingDecomposition:
    r0: float
    r1: float
    core: CoreResult
    eps: float
    lam0: list
    lam1: list
    level_length: float
    balls0_bound_ok: bool
    nb: float = math.nan


def epsilon_bubbling(s: ConeSurface, f: ExactField, r0: float, r1: float, complex: VoronoiComplex | None = None):
    """Bubbling decomposition cut at the level r0, with its parameter epsilon.

    epsilon = Area(core) / 2 pi + sum lambda_0 + sum lambda_1.  Any such
    decomposition forces NB < epsilon, which is asserted, as is the
    aggregate area estimate for the cone-free disks.
    """
    from .monodromy_nb import nb_parameter

    cx = complex or extract_complex(s, f, check=False)
    if any(r0 <= p.value <= r1 for p in cx.saddles):
        raise SaddleInInterval("saddle value inside [r0, r1]")
    core, reason = voronoi_core(s, f, r0, cx)
    if core is None:
        raise DomainError(f"no Voronoi core at {r0}: {reason}")
    lam0 = [d.lam for d in core.disks if d.kind == 0]
    lam1 = [d.lam for d in core.disks if d.kind == 1]
    eps = core.core_area / TWO_PI + math.fsum(lam0) + math.fsum(lam1)
    ell = level_length(f, r0, cx)
    b0 = [d for d in core.disks if d.kind == 0]
    ok = True
    if b0 and all(d.boundary_length < TWO_PI for d in b0):
        resid = math.fsum(disk_area_estimates(d)[1] for d in b0)
        ok = resid < (ell / TWO_PI) ** 2
        if not ok:
            raise AssertionError("cone-free disks violate the aggregate area estimate")
    nb = nb_parameter(s.theta, s.chi_dot).value
    if not nb < eps:
        raise AssertionError(f"NB = {nb} not below epsilon = {eps}")
    return BubblingDecomposition(r0, r1, core, eps, lam0, lam1, ell, ok, nb)


# ---------------------------------------------------------------------------
# small angles


def _exit_param(N, p, d):
    """First parameter s > 0 where the arc cos s p + sin s d leaves the triangle, with the side index."""
    best = (math.pi, -1)
    for k in range(3):
        a = float(np.dot(N[k], p))
        b = float(np.dot(N[k], d))
        if abs(a) <= 1e-13 and abs(b) <= 1e-12:
            continue  # running along side k
        if a < -1e-13 or (abs(a) <= 1e-13 and b < 0):
            return (0.0, k)
        # zeros of a cos s + b sin s with negative derivative
        phi = math.atan2(b, a)
        for z in (phi + math.pi / 2, phi - math.pi / 2, phi + 1.5 * math.pi, phi - 1.5 * math.pi):
            if z > 1e-15 and -a * math.sin(z) + b * math.cos(z) < 0 and z < best[0]:
                best = (z, k)
    return best


def shoot(s: ConeSurface, v: int, alpha: float, length: float):
    """End point (t, p) of the geodesic of the given length leaving vertex v at angle alpha.

    Angles are measured counterclockwise from the first corner returned by
    corners_around; the geodesic stops early at a boundary side.
    """
    corners = s.corners_around(v)
    alpha = alpha % float(s.vertex_angle[v])
    for t, c in corners:
        ang = float(s.angles[t, c])
        if alpha <= ang or (t, c) == corners[-1]:
            break
        alpha -= ang
    P = s.charts[t, c]
    Tn = s.tan_next[t, c]
    Tp = s.tan_prev[t, c]
    W = unit(Tp - np.dot(Tp, Tn) * Tn)
    d = math.cos(alpha) * Tn + math.sin(alpha) * W
    p = P
    left = float(length)
    for _ in range(100000):
        N = np.array([n / np.linalg.norm(n) for n in (np.cross(s.charts[t, k], s.charts[t, (k + 1) % 3]) for k in range(3))])
        sx, k = _exit_param(N, p, d)
        if sx >= left or k < 0:
            return t, math.cos(left) * p + math.sin(left) * d
        e = math.cos(sx) * p + math.sin(sx) * d
        de = -math.sin(sx) * p + math.cos(sx) * d
        left -= sx
        nb = s.neighbor(t, k)
        if nb is None:
            return t, e
        R = s.transition[t, k]
        t, p, d = nb[0], R @ e, R @ de
    raise NeedsRefinement("geodesic shooting did not terminate")


def small_angle_checks(s: ConeSurface, f: ExactField, i: int, complex: VoronoiComplex | None = None,
                       tol: float = 1e-6, samples: int = 64):
    """Neighbourhood of a cone of angle at most 2 pi / 3.

    B^max is the immersed ball of radius d_i about x_i; its boundary is sampled
    by shooting geodesics of length d_i from x_i.
    """
    th = float(s.theta[i])
    if th > 1 / 3 + 1e-12:
        raise DomainError("small-angle checks need theta_i <= 1/3")
    cx = complex or extract_complex(s, f, check=False)
    n = s.n
    fields = [single_source_field(s, s.marked[a]) for a in range(n)]
    D = np.array([[fields[a].vdist[s.marked[b]] for b in range(n)] for a in range(n)])
    others = [j for j in range(n) if j != i]
    j = min(others, key=lambda k: D[i, k])
    di = float(D[i, j])
    rep = {"i": i, "j": j, "d_i": di, "violations": []}
    sad = [p.value for p in cx.saddles if i in p.sources]
    rep["saddle_values"] = sad
    if not all(di / 2 - tol <= v < di for v in sad):
        rep["violations"].append("a:saddle")
    # the Voronoi cell of x_i lies inside B^max: V on its boundary stays below d_i
    cell_max = max((nd.value for nd in cx.nodes if i in nd.sources), default=0.0)
    rep["cell_max"] = cell_max
    if not cell_max < di:
        rep["violations"].append("a:cell")
    for k in range(n):
        if k in (i, j):
            continue
        if not D[k, i] > D[k, j] or D[k, i] < D[k, j] + di - math.pi * th - tol:
            rep["violations"].append(f"b:{k}")
    v = s.marked[i]
    dj = 0.0
    for a in np.linspace(0.0, float(s.vertex_angle[v]), samples, endpoint=False):
        t, q = shoot(s, v, a, di)
        dj = max(dj, float(fields[j].value(t, q[None, :])[0]))
    rep["max_dist_to_xj"] = dj
    if dj > math.pi * th + tol:
        rep["violations"].append("c")
    if th < 1 / 7 and not dj < di / 2:
        rep["violations"].append("d")
    rep["ok"] = not rep["violations"]
    return rep
