"""Geodesic distance fields, geodesic paths and loops on cone surfaces.

Two engines compute distance fields from a set of marked points:

* ``exact``: continuous-Dijkstra window propagation.  A window is an
  interval on a triangle side lit by one developed image of a source; it
  is unfolded across the side into the neighbouring chart, split at the
  opposite corner and pushed on in order of its smallest distance.  Field
  values are minima over the images stored in each triangle, so they are
  exact up to rounding.
* ``steiner``: Dijkstra on a graph of edge-subdivision points with chord
  weights, refined by doubling until successive fields agree.

Distances are capped at ``cap`` (default pi): the developed segment from an
image must be a minor arc.  The Voronoi function is below pi everywhere, so
this loses nothing for it.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .cone_surface import ConeSurface
from .errors import BudgetExceeded, ConvergenceError, DomainError
from .sphere_kernel import geodesic_dist, tangent_towards, unit

EPS_LUNE = 1e-15
EPS_EVAL = 1e-13
TRIM_MARGIN = 1e-13
TWO_PI = 2.0 * math.pi


def _pairwise_dist(X, P):
    """Distances between rows of X (M,3) and rows of P (N,3)."""
    cr = np.linalg.norm(np.cross(X[:, None, :], P[None, :, :]), axis=-1)
    dt = X @ P.T
    return np.arctan2(cr, dt)


def _halfspace_interval(n, P0, T0, L, eps=EPS_LUNE):
    """Sub-interval of [0, L] where n . (cos w P0 + sin w T0) >= -eps."""
    a = float(np.dot(n, P0))
    b = float(np.dot(n, T0))
    R = math.hypot(a, b)
    if R <= eps:
        return 0.0, L
    phi = math.atan2(b, a)
    h = math.acos(max(-1.0, min(1.0, -eps / R)))
    best = None
    for shift in (-TWO_PI, 0.0, TWO_PI):
        lo = max(0.0, phi + shift - h)
        hi = min(L, phi + shift + h)
        if hi >= lo and (best is None or hi - lo > best[1] - best[0]):
            best = (lo, hi)
    return best


@dataclass
class GeodesicPath:
    """Geodesic as a chain of great-circle segments, one per triangle chart.

    segments[i] = (triangle, start, end); crossings[i] = (triangle, side)
    crossed between segments i and i+1 (None where the path passes through a
    vertex).
    """

    segments: list
    crossings: list
    source: int = -1
    end_vertex: int = -1

    @property
    def length(self) -> float:
        return math.fsum(geodesic_dist(a, b) for _, a, b in self.segments)

    def straightness_defect(self, s: ConeSurface) -> float:
        """Largest bend angle at the side crossings."""
        worst = 0.0
        for i, cr in enumerate(self.crossings):
            if cr is None:
                continue
            t, k = cr
            ta, a0, a1 = self.segments[i]
            tb, b0, b1 = self.segments[i + 1]
            if geodesic_dist(a0, a1) < 1e-300 or geodesic_dist(b0, b1) < 1e-300:
                continue
            R = s.transition[t, k]
            d_in = -tangent_towards(a1, a0)
            d_in = R @ d_in
            d_out = tangent_towards(b0, b1)
            worst = max(worst, geodesic_dist(unit(d_in), unit(d_out)))
        return worst

    def reversed(self, s: ConeSurface) -> "GeodesicPath":
        segs = [(t, b, a) for t, a, b in reversed(self.segments)]
        cr = []
        for c in reversed(self.crossings):
            if c is None:
                cr.append(None)
            else:
                cr.append(s.neighbor(*c))
        return GeodesicPath(segs, cr, self.end_vertex, self.source)


class _Img:
    __slots__ = ("tri", "X", "sigma", "src", "n1", "n2", "parent", "via", "direct")

    def __init__(self, tri, X, sigma, src, n1, n2, parent, via, direct):
        self.tri = tri
        self.X = X
        self.sigma = sigma
        self.src = src
        self.n1 = n1
        self.n2 = n2
        self.parent = parent
        self.via = via
        self.direct = direct


class DistanceField:
    """Common interface of both engines."""

    surface: ConeSurface
    sources: list
    err: float
    cap: float

    def value(self, t: int, P):
        raise NotImplementedError

    def labels(self, t: int, P):
        raise NotImplementedError

    def value_at_vertex(self, v: int) -> float:
        return float(self.vdist[v])

    def sample_points(self, k: int = 8):
        """Barycentric sample points per triangle: list of (t, P)."""
        out = []
        s = self.surface
        ij = [(i, j) for i in range(k + 1) for j in range(k + 1 - i)]
        W = np.array([[i / k, j / k, 1 - (i + j) / k] for i, j in ij])
        for t in range(s.F):
            P = unit(W @ s.charts[t])
            out.append((t, P))
        return out

    def to_csv(self) -> str:
        lines = ["triangle,b0,b1,b2," + ",".join(f"d{i}" for i in range(len(self.sources)))]
        k = 4
        ij = [(i, j) for i in range(k + 1) for j in range(k + 1 - i)]
        W = np.array([[i / k, j / k, 1 - (i + j) / k] for i, j in ij])
        s = self.surface
        per = [single_source_field(s, v, cap=self.cap) for v in self.sources] if len(self.sources) > 1 else [self]
        for t in range(s.F):
            P = unit(W @ s.charts[t])
            vals = [f.value(t, P) for f in per]
            for r in range(len(W)):
                lines.append(
                    f"{t},{W[r,0]:.6f},{W[r,1]:.6f},{W[r,2]:.6f},"
                    + ",".join(format(float(v[r]), ".17g") for v in vals)
                )
        return "\n".join(lines) + "\n"


class ExactField(DistanceField):
    def __init__(self, s: ConeSurface, sources, cap=math.pi, trim=True, max_windows=400_000):
        self.surface = s
        self.sources = [int(v) for v in sources]
        if not self.sources:
            raise DomainError("at least one source required")
        self.cap = float(cap)
        self.trim = trim
        self.max_windows = max_windows
        self.err = 1e-11
        V = s.V
        self.vdist = np.full(V, np.inf)
        self.vimg = [-1] * V
        self.vhits = [[] for _ in range(V)]
        self.imgs: list[_Img] = []
        self.tri_imgs = [[] for _ in range(s.F)]
        self._edge_windows = {}
        self._heap = []
        self._wcount = 0
        self._source_set = set(self.sources)
        self._run()
        self._pack()

    # ------------------------------------------------------------------ propagation
    def _new_img(self, **kw) -> int:
        img = _Img(**kw)
        self.imgs.append(img)
        idx = len(self.imgs) - 1
        self.tri_imgs[img.tri].append(idx)
        return idx

    def _push(self, img_id, side, w0, w1):
        img = self.imgs[img_id]
        s = self.surface
        t = img.tri
        P0, T0 = s.charts[t, side], s.tan_next[t, side]
        X = img.X
        wstar = math.atan2(float(np.dot(X, T0)), float(np.dot(X, P0)))
        wc = min(max(wstar, w0), w1)
        dmin = img.sigma + geodesic_dist(X, math.cos(wc) * P0 + math.sin(wc) * T0)
        if dmin >= self.cap:
            return
        self._wcount += 1
        if self._wcount > self.max_windows:
            raise BudgetExceeded("window budget exhausted")
        heapq.heappush(self._heap, (dmin, self._wcount, img_id, side, w0, w1))

    def _hit_vertex(self, v, d, img_id):
        self.vhits[v].append((d, img_id))
        if d < self.vdist[v] - 1e-15 * max(1.0, d):
            self.vdist[v] = d
            self.vimg[v] = img_id
            s = self.surface
            if (
                v not in self._source_set
                and v not in s.boundary_vertices
                and s.vertex_angle[v] > TWO_PI + 1e-9
                and d < self.cap
            ):
                self._spawn_vertex(v, d, self.imgs[img_id].src, img_id)

    def _spawn_vertex(self, v, sigma, src, parent):
        s = self.surface
        for t, c in s.corners_of[v]:
            idx = self._new_img(
                tri=t, X=s.charts[t, c], sigma=sigma, src=src, n1=None, n2=None,
                parent=parent, via=("vertex", v), direct=parent < 0,
            )
            c1, c2 = (c + 1) % 3, (c + 2) % 3
            self._hit_vertex(int(s.vertex_of[t, c1]), sigma + s.sides[t, c], idx)
            self._hit_vertex(int(s.vertex_of[t, c2]), sigma + s.sides[t, c2], idx)
            self._push(idx, c1, 0.0, s.sides[t, c1])

    def _run(self):
        s = self.surface
        for label, v in enumerate(self.sources):
            self.vdist[v] = 0.0
        for label, v in enumerate(self.sources):
            for t, c in s.corners_of[v]:
                idx = self._new_img(
                    tri=t, X=s.charts[t, c], sigma=0.0, src=label, n1=None, n2=None,
                    parent=-1, via=None, direct=True,
                )
                c1, c2 = (c + 1) % 3, (c + 2) % 3
                self._hit_vertex(int(s.vertex_of[t, c1]), s.sides[t, c], idx)
                self._hit_vertex(int(s.vertex_of[t, c2]), s.sides[t, c2], idx)
                self._push(idx, c1, 0.0, s.sides[t, c1])
        while self._heap:
            dmin, _, img_id, side, w0, w1 = heapq.heappop(self._heap)
            if dmin >= self.cap:
                break
            self._process(img_id, side, w0, w1)

    def _edge_key(self, t, k):
        nb = self.surface.neighbor(t, k)
        if nb is None or (t, k) <= nb:
            return (t, k), False
        return nb, True

    def _window_dist(self, X, sigma, P0, T0, w):
        return sigma + geodesic_dist(X, math.cos(w) * P0 + math.sin(w) * T0)

    def _trim_window(self, X, sigma, key, w0, w1):
        s = self.surface
        tc, kc = key
        L = s.sides[tc, kc]
        P0, T0 = s.charts[tc, kc], s.tan_next[tc, kc]
        dA = self.vdist[s.vertex_of[tc, kc]]
        dB = self.vdist[s.vertex_of[tc, (kc + 1) % 3]]
        f = lambda w: self._window_dist(X, sigma, P0, T0, w)
        m = TRIM_MARGIN
        if np.isfinite(dA):
            g = lambda w: f(w) - dA - w
            if g(w1) > m:
                return None
            if g(w0) > m:
                lo, hi = w0, w1
                for _ in range(60):
                    mid = 0.5 * (lo + hi)
                    if g(mid) > m:
                        lo = mid
                    else:
                        hi = mid
                w0 = lo
        if np.isfinite(dB):
            g = lambda w: f(w) - dB - (L - w)
            if g(w0) > m:
                return None
            if g(w1) > m:
                lo, hi = w0, w1
                for _ in range(60):
                    mid = 0.5 * (lo + hi)
                    if g(mid) > m:
                        hi = mid
                    else:
                        lo = mid
                w1 = hi
        for Xo, so, o0, o1 in self._edge_windows.get(key, ()):
            a, b = max(w0, o0), min(w1, o1)
            if b <= a:
                continue
            same = np.max(np.abs(Xo - X)) < 1e-15 and abs(so - sigma) <= 1e-15 * max(1.0, sigma)
            K = 16
            ws = np.linspace(a, b, K + 1)
            Q = np.cos(ws)[:, None] * P0 + np.sin(ws)[:, None] * T0
            h = (sigma + geodesic_dist(X[None, :], Q)) - (so + geodesic_dist(Xo[None, :], Q))
            if same:
                h = np.full_like(h, np.inf)
            need = m + 2.0 * (b - a) / K
            ok = h > need
            if a <= w0 and ok.all():
                if b >= w1:
                    return None
                w0 = b
                continue
            if a <= w0:
                j = 0
                while j < len(ok) and ok[j]:
                    j += 1
                if j > 0:
                    w0 = ws[j - 1]
            if b >= w1:
                j = len(ok) - 1
                while j >= 0 and ok[j]:
                    j -= 1
                if j < len(ok) - 1:
                    w1 = ws[j + 1]
            if w1 <= w0:
                return None
        return w0, w1

    def _process(self, img_id, side, w0, w1):
        s = self.surface
        img = self.imgs[img_id]
        t = img.tri
        L = s.sides[t, side]
        key, flipped = self._edge_key(t, side)
        if flipped:
            Xc = s.transition[t, side] @ img.X
            c0, c1 = L - w1, L - w0
        else:
            Xc = img.X
            c0, c1 = w0, w1
        if self.trim:
            res = self._trim_window(Xc, img.sigma, key, c0, c1)
            if res is None:
                return
            c0, c1 = res
            if flipped:
                w0, w1 = L - c1, L - c0
            else:
                w0, w1 = c0, c1
        if w1 - w0 <= 1e-13 * L:
            return
        self._edge_windows.setdefault(key, []).append((Xc, img.sigma, c0, c1))
        nb = s.neighbor(t, side)
        if nb is None:
            return
        u, j = nb
        X2 = s.transition[t, side] @ img.X
        a0, a1 = L - w1, L - w0
        A = s.point_on_side(u, j, a0)
        B = s.point_on_side(u, j, a1)
        n1 = np.cross(A, X2)
        n2 = np.cross(X2, B)
        n1 = n1 / np.linalg.norm(n1)
        n2 = n2 / np.linalg.norm(n2)
        new_id = self._new_img(
            tri=u, X=X2, sigma=img.sigma, src=img.src, n1=n1, n2=n2,
            parent=img_id, via=(t, side), direct=img.direct,
        )
        for e in ((j + 1) % 3, (j + 2) % 3):
            P0, T0, Le = s.charts[u, e], s.tan_next[u, e], s.sides[u, e]
            i1 = _halfspace_interval(n1, P0, T0, Le)
            if i1 is None:
                continue
            i2 = _halfspace_interval(n2, P0, T0, Le)
            if i2 is None:
                continue
            lo, hi = max(i1[0], i2[0]), min(i1[1], i2[1])
            if hi - lo > 1e-13 * Le:
                self._push(new_id, e, lo, hi)
        C = s.charts[u, (j + 2) % 3]
        if np.dot(n1, C) >= -EPS_LUNE and np.dot(n2, C) >= -EPS_LUNE:
            self._hit_vertex(int(s.vertex_of[u, (j + 2) % 3]), img.sigma + geodesic_dist(X2, C), new_id)

    # ------------------------------------------------------------------ evaluation
    def _pack(self):
        s = self.surface
        self._packed = []
        for t in range(s.F):
            ids = self.tri_imgs[t]
            X = np.array([self.imgs[i].X for i in ids]).reshape(-1, 3)
            sig = np.array([self.imgs[i].sigma for i in ids])
            src = np.array([self.imgs[i].src for i in ids], dtype=int)
            full = np.array([self.imgs[i].n1 is None for i in ids], dtype=bool)
            n1 = np.array([self.imgs[i].n1 if self.imgs[i].n1 is not None else np.zeros(3) for i in ids]).reshape(-1, 3)
            n2 = np.array([self.imgs[i].n2 if self.imgs[i].n2 is not None else np.zeros(3) for i in ids]).reshape(-1, 3)
            self._packed.append((np.array(ids, dtype=int), X, sig, src, full, n1, n2))
        self.vsrc = np.full(s.V, -1)
        for v in range(s.V):
            if self.vimg[v] >= 0:
                self.vsrc[v] = self.imgs[self.vimg[v]].src
        for lab, v in enumerate(self.sources):
            self.vsrc[v] = lab

    def image_table(self, t):
        """(ids, X, sigma, src, full, n1, n2) for the images stored in triangle t."""
        return self._packed[t]

    def image_distances(self, t, P, eps=EPS_EVAL):
        """Matrix (M, N) of image distances, +inf where an image does not see the point."""
        P = np.atleast_2d(np.asarray(P, dtype=float))
        ids, X, sig, src, full, n1, n2 = self._packed[t]
        if len(ids) == 0:
            return np.full((0, len(P)), np.inf)
        D = sig[:, None] + _pairwise_dist(X, P)
        vis = full[:, None] | ((n1 @ P.T >= -eps) & (n2 @ P.T >= -eps))
        D[~vis] = np.inf
        return D

    def _corner_bound(self, t, P):
        s = self.surface
        out = np.full(len(P), np.inf)
        lab = np.full(len(P), -1)
        for c in range(3):
            v = s.vertex_of[t, c]
            if np.isfinite(self.vdist[v]):
                d = self.vdist[v] + geodesic_dist(s.charts[t, c][None, :], P)
                better = d < out
                out = np.where(better, d, out)
                lab = np.where(better, self.vsrc[v], lab)
        return out, lab

    def _eval(self, t, P):
        P = np.atleast_2d(np.asarray(P, dtype=float))
        vals = np.empty(len(P))
        labs = np.empty(len(P), dtype=int)
        second = np.empty(len(P))
        step = 2048
        ids, X, sig, src, full, n1, n2 = self._packed[t]
        for a in range(0, len(P), step):
            Q = P[a : a + step]
            D = self.image_distances(t, Q)
            cb, cl = self._corner_bound(t, Q)
            if len(D):
                i = np.argmin(D, axis=0)
                best = D[i, np.arange(len(Q))]
                lab = src[i]
                use_c = cb < best - 1e-15
                best = np.where(use_c, cb, best)
                lab = np.where(use_c, cl, lab)
                D2 = np.where(src[:, None] == lab[None, :], np.inf, D)
                sec = D2.min(axis=0) if len(D2) else np.full(len(Q), np.inf)
            else:
                best, lab, sec = cb, cl, np.full(len(Q), np.inf)
            vals[a : a + step] = np.minimum(best, self.cap)
            labs[a : a + step] = lab
            second[a : a + step] = sec
        return vals, labs, second

    def value(self, t, P):
        v, _, _ = self._eval(t, P)
        return v

    def labels(self, t, P):
        _, lab, _ = self._eval(t, P)
        return lab

    def two_smallest(self, t, P):
        """(best value, best label, best value among other labels)."""
        return self._eval(t, P)

    # ------------------------------------------------------------------ paths
    def best_image(self, t, p):
        D = self.image_distances(t, p[None, :])[:, 0]
        if len(D) == 0 or not np.isfinite(D.min()):
            return None
        return int(self._packed[t][0][int(np.argmin(D))])

    def path_from_image(self, img_id, t, p) -> GeodesicPath:
        """Geodesic from the source of image img_id to the point p of triangle t."""
        s = self.surface
        segs = []
        cross = []
        cur_t, cur_end, cur = t, np.asarray(p, dtype=float), img_id
        guard = 0
        while True:
            guard += 1
            if guard > 100_000:
                raise DomainError("path reconstruction did not terminate")
            img = self.imgs[cur]
            assert img.tri == cur_t
            if img.via is None:
                segs.append((cur_t, img.X, cur_end))
                break
            if img.via[0] == "vertex":
                segs.append((cur_t, img.X, cur_end))
                par = self.imgs[img.parent]
                v = img.via[1]
                c = [cc for cc in range(3) if s.vertex_of[par.tri, cc] == v][0]
                cross.append(None)
                cur_t, cur_end, cur = par.tri, s.charts[par.tri, c], img.parent
                continue
            tp, kp = img.via
            u, j = s.neighbor(tp, kp)
            P0, P1 = s.charts[u, j], s.charts[u, (j + 1) % 3]
            e = _arc_side_point(img.X, cur_end, P0, P1)
            segs.append((cur_t, e, cur_end))
            cross.append((tp, kp))
            R = s.transition[tp, kp]
            cur_t, cur_end, cur = tp, R.T @ e, img.parent
        segs.reverse()
        cross.reverse()
        src_vertex = self.sources[self.imgs[img_id].src]
        return GeodesicPath(segs, cross, src_vertex, -1)

    def path_to_vertex(self, v) -> GeodesicPath | None:
        img_id = self.vimg[v]
        if img_id < 0:
            return None
        s = self.surface
        img = self.imgs[img_id]
        c = [cc for cc in range(3) if s.vertex_of[img.tri, cc] == v][0]
        path = self.path_from_image(img_id, img.tri, s.charts[img.tri, c])
        path.end_vertex = v
        return path


def _arc_side_point(X, p, P0, P1):
    """Point where the minor arc X->p crosses the great circle through P0, P1."""
    n_path = np.cross(X, p)
    n_side = np.cross(P0, P1)
    if np.linalg.norm(n_path) < 1e-300:
        return p
    d = np.cross(n_path, n_side)
    nd = np.linalg.norm(d)
    if nd < 1e-300:
        return p
    d = d / nd
    # the crossing lies between X and p
    if np.dot(d, X + p) < 0 and np.dot(d, P0 + P1) < 0:
        d = -d
    if np.dot(d, P0 + P1) < 0:
        d = -d
    return d


# ---------------------------------------------------------------------------
# Steiner engine


class SteinerField(DistanceField):
    def __init__(self, s: ConeSurface, sources, k: int, cap=math.inf):
        self.surface = s
        self.sources = [int(v) for v in sources]
        self.k = int(k)
        self.cap = cap
        self.err = math.inf
        self._build()

    def _build(self):
        s = self.surface
        k = self.k
        node_of_vertex = np.arange(s.V)
        nid = s.V
        edge_nodes = {}
        for t in range(s.F):
            for e in range(3):
                nb = s.neighbor(t, e)
                key = (t, e) if nb is None or (t, e) <= nb else nb
                if key in edge_nodes:
                    continue
                edge_nodes[key] = np.arange(nid, nid + k)
                nid += k
        self.n_nodes = nid
        self.tri_nodes = []
        rows, cols, vals = [], [], []
        for t in range(s.F):
            pts = []
            ids = []
            for c in range(3):
                pts.append(s.charts[t, c])
                ids.append(node_of_vertex[s.vertex_of[t, c]])
            for e in range(3):
                nb = s.neighbor(t, e)
                L = s.sides[t, e]
                if nb is None or (t, e) <= nb:
                    key, params = (t, e), [(i + 1) * L / (k + 1) for i in range(k)]
                    nodes = edge_nodes[key]
                else:
                    key = nb
                    nodes = edge_nodes[key]
                    params = [L - (i + 1) * L / (k + 1) for i in range(k)]
                for i in range(k):
                    pts.append(s.point_on_side(t, e, params[i]))
                    ids.append(nodes[i])
            pts = np.array(pts)
            ids = np.array(ids)
            self.tri_nodes.append((ids, pts))
            D = _pairwise_dist(pts, pts)
            iu = np.triu_indices(len(ids), 1)
            rows.append(ids[iu[0]])
            cols.append(ids[iu[1]])
            vals.append(D[iu])
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        keep = rows != cols
        rows, cols, vals = rows[keep], cols[keep], vals[keep]
        # a vertex can occupy two corners of one triangle; keep the shortest duplicate edge
        lo, hi = np.minimum(rows, cols), np.maximum(rows, cols)
        order = np.lexsort((vals, hi, lo))
        lo, hi, vals = lo[order], hi[order], vals[order]
        first = np.ones(len(lo), dtype=bool)
        first[1:] = (lo[1:] != lo[:-1]) | (hi[1:] != hi[:-1])
        G = coo_matrix((vals[first], (lo[first], hi[first])), shape=(nid, nid)).tocsr()
        dist = dijkstra(G, directed=False, indices=self.sources, min_only=False)
        dist = np.atleast_2d(dist)
        self.node_dist_all = dist
        self.node_dist = dist.min(axis=0)
        self.node_label = dist.argmin(axis=0)
        self.vdist = self.node_dist[: s.V]

    def value(self, t, P):
        P = np.atleast_2d(np.asarray(P, dtype=float))
        ids, pts = self.tri_nodes[t]
        D = self.node_dist[ids][:, None] + _pairwise_dist(pts, P)
        return D.min(axis=0)

    def labels(self, t, P):
        P = np.atleast_2d(np.asarray(P, dtype=float))
        ids, pts = self.tri_nodes[t]
        best = None
        lab = None
        for i in range(len(self.sources)):
            D = (self.node_dist_all[i][ids][:, None] + _pairwise_dist(pts, P)).min(axis=0)
            if best is None:
                best, lab = D, np.zeros(len(P), dtype=int)
            else:
                lab = np.where(D < best, i, lab)
                best = np.minimum(best, D)
        return lab


def steiner_field(s, sources, tol=1e-4, k0=2, max_refinements=8):
    """Steiner field refined by doubling until successive fields differ by < tol/2."""
    probe = []
    for t in range(s.F):
        W = np.array([[1, 1, 1], [2, 1, 1], [1, 2, 1], [1, 1, 2]], dtype=float)
        probe.append((t, unit(W @ s.charts[t])))
    prev = None
    k = k0
    for _ in range(max_refinements + 1):
        f = SteinerField(s, sources, k)
        vals = np.concatenate([f.value(t, P) for t, P in probe] + [f.vdist])
        if prev is not None:
            diff = float(np.max(np.abs(vals - prev)))
            if diff < tol / 2:
                f.err = 2 * diff
                return f
        prev = vals
        k *= 2
    raise ConvergenceError(f"Steiner field did not converge to {tol}")


def build_field(s: ConeSurface, sources=None, tol=1e-4, engine="exact", cap=math.pi, **kw) -> DistanceField:
    """Distance field from the given marked vertices (default: all marked points)."""
    if tol <= 0:
        raise DomainError("tol must be positive")
    if sources is None:
        sources = list(s.marked)
    if engine == "exact":
        f = ExactField(s, sources, cap=cap, **kw)
        if f.err > tol:
            raise ConvergenceError("exact engine error above tolerance")
        return f
    if engine == "steiner":
        return steiner_field(s, sources, tol=tol, **kw)
    raise DomainError(f"unknown engine {engine!r}")


def single_source_field(s: ConeSurface, v: int, cap=math.pi, trim=True) -> ExactField:
    return ExactField(s, [v], cap=cap, trim=trim)


# ---------------------------------------------------------------------------
# arcs and loops


@dataclass
class ConeArc:
    i: int
    j: int
    length: float
    path: GeodesicPath | None


@dataclass
class ConeLoop:
    cone: int
    length: float
    midpoint: tuple
    path: GeodesicPath | None
    continuum: bool = False
    images: tuple = field(default=())


def shortest_arcs_between_cones(s: ConeSurface, field=None, cap=math.pi):
    """Minimizing arc d(x_i, x_j) for every pair of marked points (inf above cap)."""
    out = []
    n = s.n
    for i in range(n):
        f = single_source_field(s, s.marked[i], cap=cap)
        for j in range(i + 1, n):
            v = s.marked[j]
            d = float(f.vdist[v])
            out.append(ConeArc(i, j, d, f.path_to_vertex(v) if np.isfinite(d) else None))
    return out


def _loop_candidates(f: ExactField, realize_only: bool, tol: float):
    """Tie points of two direct images with opposite directions, per triangle."""
    s = f.surface
    found = []
    for t in range(s.F):
        ids, X, sig, src, full, n1, n2 = f.image_table(t)
        direct = np.array([f.imgs[i].direct for i in ids], dtype=bool)
        sel = np.where(direct)[0]
        if len(sel) < 2:
            continue
        V = s.charts[t]
        normals = [np.cross(V[k], V[(k + 1) % 3]) for k in range(3)]
        normals = [nv / np.linalg.norm(nv) for nv in normals]
        for ai in range(len(sel)):
            for bi in range(ai + 1, len(sel)):
                a, b = sel[ai], sel[bi]
                D = geodesic_dist(X[a], X[b])
                if D < 1e-14:
                    continue
                if D > math.pi - 1e-9:
                    m = _bisector_point_in_triangle(X[a], V)
                    if m is None:
                        continue
                    length = sig[a] + sig[b] + math.pi
                    cont = True
                else:
                    u = 0.5 * (D + sig[b] - sig[a])
                    if not (0 < u < D):
                        continue
                    T = tangent_towards(X[a], X[b])
                    m = math.cos(u) * X[a] + math.sin(u) * T
                    length = sig[a] + sig[b] + D
                    cont = False
                if min(float(np.dot(nv, m)) for nv in normals) < -1e-12:
                    continue
                da = f.image_distances(t, m[None, :])[[a, b], 0]
                if not np.all(np.isfinite(da)):
                    continue
                if realize_only:
                    val = f.value(t, m[None, :])[0]
                    if length / 2 > val + tol:
                        continue
                found.append((length, t, m, int(ids[a]), int(ids[b]), cont))
    return found


def _bisector_point_in_triangle(Xa, V):
    """A point of the triangle on the great circle orthogonal to Xa, if any."""
    best = None
    for w in np.linspace(0, 1, 41):
        for k in range(3):
            p = unit((1 - w) * V[k] + w * V[(k + 1) % 3])
            val = float(np.dot(p, Xa))
            if best is None or abs(val) < abs(best[0]):
                best = (val, p)
    c = unit(V.sum(axis=0))
    q = c - np.dot(c, Xa) * Xa
    if np.linalg.norm(q) > 1e-12:
        q = unit(q)
        normals = [np.cross(V[k], V[(k + 1) % 3]) for k in range(3)]
        if all(np.dot(nv, q) >= -1e-12 for nv in normals):
            return q
    if best is not None and abs(best[0]) < 1e-9:
        return best[1]
    return None


def shortest_loops_at_cone(s: ConeSurface, i: int, length_cap=math.pi, exhaustive=False, tol=1e-9):
    """Geodesic loops based at the i-th marked point, sorted by length.

    Loops are found as pairs of direct developed images of x_i in one chart
    meeting with opposite directions.  By default only loops whose midpoint
    is a cut point (both halves minimizing) are reported; these are the
    loops that bound the injectivity radius and produce saddles.  With
    exhaustive=True window trimming is switched off and every locally
    geodesic loop up to the cap is reported.
    """
    if length_cap > math.pi + 1e-12 and not exhaustive:
        length_cap = min(length_cap, 2 * math.pi)
    v = s.marked[i]
    cap = min(math.pi, length_cap / 2 + 1e-12) if not exhaustive else min(math.pi, length_cap)
    f = ExactField(s, [v], cap=max(cap, 1e-12), trim=not exhaustive)
    cands = _loop_candidates(f, realize_only=not exhaustive, tol=tol)
    loops = []
    for length, t, m, a, b, cont in sorted(cands, key=lambda c: c[0]):
        if length > length_cap + tol:
            continue
        dup = False
        for lp in loops:
            if abs(lp.length - length) < 1e-9 * max(1, length) and _same_point(s, lp.midpoint, (t, m)):
                dup = True
                break
        if dup:
            continue
        try:
            pa = f.path_from_image(a, t, m)
            pb = f.path_from_image(b, t, m)
            path = GeodesicPath(pa.segments + pb.reversed(s).segments, pa.crossings + [None] + pb.reversed(s).crossings, v, v)
        except Exception:
            path = None
        loops.append(ConeLoop(i, length, (t, m), path, cont, (a, b)))
    return loops


def _same_point(s, loc1, loc2, tol=1e-9):
    t1, p1 = loc1
    t2, p2 = loc2
    if t1 == t2:
        return geodesic_dist(p1, p2) < tol
    for k in range(3):
        nb = s.neighbor(t1, k)
        if nb is not None and nb[0] == t2:
            if geodesic_dist(s.transition[t1, k] @ p1, p2) < tol:
                return True
    return False


# ---------------------------------------------------------------------------
# billiard unfolding for doubled triangles


def _reflect(p, a, b):
    n = unit(np.cross(a, b))
    return p - 2 * np.dot(p, n) * n


def _double_coordinates(s: ConeSurface):
    """Linear maps taking each sheet's chart into sheet A's triangle coordinates."""
    if s.F != 2 or s.n < 3:
        raise DomainError("billiard unfolding needs a doubled triangle")
    W = s.charts[0]
    MA = np.eye(3)
    CB = s.charts[1].T
    WB = W[[0, 2, 1]].T
    MB = WB @ np.linalg.inv(CB)
    return W, (MA, MB)


def exact_double_distance(s: ConeSurface, p, q, budget: int = 32, cap=math.pi) -> float:
    """Distance on a doubled triangle by reflecting the triangle across its sides.

    p and q are (triangle, point-in-chart) pairs with triangle 0 the front
    sheet and 1 the back sheet.  Geodesics crossing the fold correspond to
    billiard paths; each reflection switches sheets.
    """
    W, maps = _double_coordinates(s)
    sa, pa = p
    sb, pb = q
    P = unit(maps[sa] @ np.asarray(pa, dtype=float))
    Q = unit(maps[sb] @ np.asarray(pb, dtype=float))
    if sa == sb and geodesic_dist(P, Q) < 1e-15:
        return 0.0
    best = [cap]
    on_fold = _on_fold(P, W) or _on_fold(Q, W)
    parity_needed = (sa != sb)
    if not parity_needed or on_fold:
        best[0] = min(best[0], geodesic_dist(P, Q))

    def corner_of(x):
        for c in range(3):
            if geodesic_dist(x, W[c]) < 1e-12:
                return c
        return None

    cp = corner_of(P)
    stack = []
    for e in range(3):
        if cp is not None and e != (cp + 1) % 3:
            continue
        A, B = W[e], W[(e + 1) % 3]
        stack.append((W.copy(), e, A, B, 0, Q))

    while stack:
        tri, e, A, B, depth, q_img = stack.pop()
        # lower bound for anything beyond this window
        lb = _seg_min_dist(P, A, B)
        if lb >= best[0]:
            continue
        if depth >= budget:
            raise BudgetExceeded("unfolding depth budget exceeded")
        # reflect across side e
        a, b = tri[e], tri[(e + 1) % 3]
        new_tri = np.array([_reflect(x, a, b) for x in tri])
        new_q = _reflect(q_img, a, b)
        par = (depth + 1) % 2 == 1
        n1 = np.cross(P, A)
        n2 = np.cross(B, P)
        if np.dot(n1, B) < 0:
            n1 = -n1
        if np.dot(n2, A) < 0:
            n2 = -n2
        n1 = unit(n1)
        n2 = unit(n2)
        if par == parity_needed or on_fold:
            if np.dot(n1, new_q) >= -1e-14 and np.dot(n2, new_q) >= -1e-14:
                d = geodesic_dist(P, new_q)
                if d < best[0]:
                    best[0] = d
        for e2 in range(3):
            if e2 == e:
                continue
            U, Vv = new_tri[e2], new_tri[(e2 + 1) % 3]
            T = tangent_towards(U, Vv)
            L = geodesic_dist(U, Vv)
            i1 = _halfspace_interval(n1, U, T, L, eps=1e-15)
            i2 = _halfspace_interval(n2, U, T, L, eps=1e-15)
            if i1 is None or i2 is None:
                continue
            lo, hi = max(i1[0], i2[0]), min(i1[1], i2[1])
            if hi - lo <= 1e-14:
                continue
            A2 = math.cos(lo) * U + math.sin(lo) * T
            B2 = math.cos(hi) * U + math.sin(hi) * T
            stack.append((new_tri, e2, A2, B2, depth + 1, new_q))
    return best[0]


def _on_fold(x, W, tol=1e-12):
    for k in range(3):
        n = unit(np.cross(W[k], W[(k + 1) % 3]))
        if abs(float(np.dot(n, x))) < tol:
            return True
    return False


def _seg_min_dist(P, A, B):
    from .sphere_kernel import point_arc_distance

    return point_arc_distance(P, A, B)


def billiard_loop_lengths(s: ConeSurface, corner: int, cap=math.pi, budget: int = 24):
    """Lengths of geodesic loops at a corner of a doubled triangle, by unfolding."""
    W, _ = _double_coordinates(s)
    P = W[corner]
    found = []
    e0 = (corner + 1) % 3
    stack = [(W.copy(), e0, W[e0], W[(e0 + 1) % 3], 0)]
    while stack:
        tri, e, A, B, depth = stack.pop()
        if _seg_min_dist(P, A, B) > cap / 2 + 1e-12:
            continue
        if depth >= budget:
            raise BudgetExceeded("unfolding depth budget exceeded")
        a, b = tri[e], tri[(e + 1) % 3]
        new_tri = np.array([_reflect(x, a, b) for x in tri])
        n1 = np.cross(P, A)
        n2 = np.cross(B, P)
        if np.dot(n1, B) < 0:
            n1 = -n1
        if np.dot(n2, A) < 0:
            n2 = -n2
        n1, n2 = unit(n1), unit(n2)
        target = new_tri[corner]
        if np.dot(n1, target) >= -1e-12 and np.dot(n2, target) >= -1e-12:
            d = geodesic_dist(P, target)
            if d <= cap + 1e-12:
                found.append(d)
        for e2 in range(3):
            if e2 == e:
                continue
            U, Vv = new_tri[e2], new_tri[(e2 + 1) % 3]
            T = tangent_towards(U, Vv)
            L = geodesic_dist(U, Vv)
            i1 = _halfspace_interval(n1, U, T, L, eps=1e-15)
            i2 = _halfspace_interval(n2, U, T, L, eps=1e-15)
            if i1 is None or i2 is None:
                continue
            lo, hi = max(i1[0], i2[0]), min(i1[1], i2[1])
            if hi - lo <= 1e-14:
                continue
            A2 = math.cos(lo) * U + math.sin(lo) * T
            B2 = math.cos(hi) * U + math.sin(hi) * T
            stack.append((new_tri, e2, A2, B2, depth + 1))
    out = []
    for d in sorted(found):
        if not out or abs(d - out[-1]) > 1e-9:
            out.append(d)
    return out
