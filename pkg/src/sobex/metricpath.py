"""Curves with singular boundary-distance weights.

The cost of a curve is the integral of ``dist(z, boundary)**e`` along it, with
``e = 1 - p`` on the complement side and ``e = 1/(1 - q)`` on the interior side.
Near-optimal curves come from Dijkstra on a quadtree graph graded by the
boundary distance, followed by a shortcut pass that adds straight chords along
the found paths to the graph and solves again.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from .geom import (DomainSpec, as_complex, classify, diameter, distance_to_boundary,
                   segments_meet_boundary, RegionTag)
from .whitney import square_boundary_distance

STABLE_BAND = 1.25
GROWTH_FACTOR = 2.0

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)
_GL_X = 0.5 * (_GL_X + 1)
_GL_W = 0.5 * _GL_W


class Inconclusive(RuntimeError):
    """Quadrature or search did not converge; ``partial`` holds the best value found."""

    def __init__(self, msg, partial=float("nan")):
        super().__init__(msg)
        self.partial = partial


@dataclass(frozen=True)
class CostFunctional:
    """``p`` is the complement exponent, or ``q`` when ``side == 'interior'``."""

    p: float
    side: str = "complement"

    def __post_init__(self):
        if self.side not in ("complement", "interior"):
            raise ValueError(f"side must be 'complement' or 'interior', got {self.side!r}")
        if self.side == "complement" and not 1 <= self.p < 2:
            raise ValueError("complement exponent p must lie in [1, 2)")
        if self.side == "interior" and not self.p > 2:
            raise ValueError("interior exponent q must be > 2 (math.inf for length)")

    @classmethod
    def length(cls, side="complement") -> CostFunctional:
        return cls(1.0, "complement") if side == "complement" else cls(math.inf, "interior")

    @property
    def weight_exponent(self) -> float:
        if self.side == "complement":
            return 1.0 - self.p
        return 0.0 if math.isinf(self.p) else 1.0 / (1.0 - self.p)

    @property
    def target_exponent(self) -> float:
        if self.side == "complement":
            return 2.0 - self.p
        return 1.0 if math.isinf(self.p) else (self.p - 2.0) / (self.p - 1.0)

    @property
    def region(self) -> RegionTag:
        return RegionTag.EXTERIOR if self.side == "complement" else RegionTag.INTERIOR


# -- quadrature ---------------------------------------------------------------

def segment_costs(a, b, d: DomainSpec, e: float, rtol: float = 1e-9, max_level: int = 48,
                  strict: bool = True, chunk: int = 4096) -> np.ndarray:
    """Integral of ``dist**e`` over each straight segment ``[a_i, b_i]``.

    Pieces that start close to the boundary are integrated in the variable
    ``s`` with ``t = s**(1/(1+e))``, which flattens the ``t**e`` endpoint
    singularity; everything is then bisected adaptively with 8-point
    Gauss-Legendre until whole and half-interval values agree.  Segments that
    do not converge (e.g. leaving the boundary tangentially, where the integral
    diverges) raise ``Inconclusive``, or get cost ``inf`` when ``strict`` is off.
    """
    a = np.atleast_1d(as_complex(a)).astype(complex)
    b = np.atleast_1d(as_complex(b)).astype(complex)
    if e == 0:
        return np.abs(b - a)
    if len(a) > chunk:
        return np.concatenate([_segment_costs(a[s:s + chunk], b[s:s + chunk], d, e, rtol, max_level, strict)
                               for s in range(0, len(a), chunk)])
    return _segment_costs(a, b, d, e, rtol, max_level, strict)


MAX_PIECES = 512


def _segment_costs(a, b, d, e, rtol, max_level, strict):
    L = np.abs(b - a)
    m = 1.0 / (1.0 + e)
    da = distance_to_boundary(a, d)
    db = distance_to_boundary(b, d)
    sa = da < 0.1 * L
    sb = db < 0.1 * L
    both = sa & sb
    mid = (a + b) / 2
    # pieces (start, end, mapped): the singular end is always the start
    starts = [np.where(sb & ~sa, b, a)[~both], a[both], b[both]]
    ends = [np.where(sb & ~sa, a, b)[~both], mid[both], mid[both]]
    mapped = [(sa | sb)[~both], np.ones(both.sum(), bool), np.ones(both.sum(), bool)]
    owner = [np.nonzero(~both)[0], np.nonzero(both)[0], np.nonzero(both)[0]]
    A = np.concatenate(starts)
    B = np.concatenate(ends)
    M = np.concatenate(mapped)
    own = np.concatenate(owner)
    total = np.zeros(len(a))
    piece = np.arange(len(A))
    s0 = np.zeros(len(A))
    s1 = np.ones(len(A))
    D0 = distance_to_boundary(A, d)
    whole = _gl(A, B, M, m, s0, s1, d, e)
    # absolute per-piece tolerance scaled by the first estimate of the whole segment
    ref = np.abs(whole) + 1e-300
    per = np.zeros(len(a))
    np.add.at(per, own, ref)
    ref = per[own]
    for _ in range(max_level):
        if len(piece) == 0:
            return total
        h = (s0 + s1) / 2
        left = _gl(A[piece], B[piece], M[piece], m, s0, h, d, e)
        right = _gl(A[piece], B[piece], M[piece], m, h, s1, d, e)
        halves = left + right
        with np.errstate(invalid="ignore"):
            err = np.abs(halves - whole)
        ok = err <= rtol * ref[piece]
        # innermost piece at a singular end: integrate the linear model of dist exactly
        tip = M[piece] & (s0 == 0) & (s1 ** m < 1e-8)
        if tip.any():
            halves[tip] = _tip_integral(A[piece[tip]], B[piece[tip]], s1[tip] ** m, D0[piece[tip]], d, e)
            ok |= tip
        np.add.at(total, own[piece[ok]], halves[ok])
        keep = ~ok
        # a segment whose pieces keep multiplying is not converging
        busy = np.bincount(own[piece[keep]], minlength=len(a)) > MAX_PIECES // 2
        if busy.any():
            if strict:
                raise Inconclusive("segment quadrature did not converge", partial=total)
            total[busy] = np.inf
            keep &= ~busy[own[piece]]
        piece = np.concatenate([piece[keep], piece[keep]])
        s0, s1 = np.concatenate([s0[keep], h[keep]]), np.concatenate([h[keep], s1[keep]])
        whole = np.concatenate([left[keep], right[keep]])
    if len(piece):
        np.add.at(total, own[piece], whole)
        if strict:
            raise Inconclusive("segment quadrature did not converge", partial=total)
        total[own[piece]] = np.inf
    return total


def _tip_integral(A, B, t1, d0, d, e):
    L = np.abs(B - A)
    X = t1 * L
    d1 = distance_to_boundary(A + t1 * (B - A), d)
    g = (d1 - d0) / X
    with np.errstate(divide="ignore", invalid="ignore"):
        lin = ((d0 + g * X) ** (1 + e) - d0 ** (1 + e)) / (g * (1 + e))
        flat = np.maximum(d0, d1) ** e * X
    return np.where(g > 0, lin, flat)


def _gl(A, B, M, m, s0, s1, d, e):
    s = s0[:, None] + (s1 - s0)[:, None] * _GL_X[None, :]
    w = (s1 - s0)[:, None] * _GL_W[None, :]
    t = np.where(M[:, None], s ** m, s)
    jac = np.where(M[:, None], m * np.where(s > 0, s, 1.0) ** (m - 1), 1.0)
    z = A[:, None] + t * (B - A)[:, None]
    dist = distance_to_boundary(z.ravel(), d).reshape(z.shape)
    with np.errstate(divide="ignore"):
        f = dist ** e
    return (f * jac * w).sum(axis=1) * np.abs(B - A)


def path_cost(gamma, d: DomainSpec, f: CostFunctional, rtol: float = 1e-9) -> float:
    """Weighted length of a polyline (single points cost 0)."""
    g = np.atleast_1d(as_complex(gamma)).astype(complex)
    if len(g) < 2:
        return 0.0
    a, b = g[:-1], g[1:]
    keep = a != b
    return float(segment_costs(a[keep], b[keep], d, f.weight_exponent, rtol).sum())


# -- graded graph -------------------------------------------------------------

@dataclass
class PathResult:
    path: np.ndarray
    cost: float
    length: float
    touched_boundary: bool


class PathGraph:
    """Quadtree graph on one side of ``d`` with extra terminal points attached.

    Leaves are dyadic squares lying strictly on the side, with side length at
    most ``grading * dist`` unless already at the floor ``2**-depth``.  Nodes are
    leaf corners (including hanging corners of finer neighbours) and leaf
    centres; each leaf connects its centre to all its nodes and its nodes to
    each other across the leaf.
    """

    def __init__(self, d: DomainSpec, side: str, depth: int, points=(), grading: float = 0.5,
                 radius: float | None = None):
        self.d = d
        self.side = side
        self.depth = depth
        self.floor = 2.0 ** -depth
        self.region = RegionTag.EXTERIOR if side == "complement" else RegionTag.INTERIOR
        pts = np.atleast_1d(as_complex(points)).astype(complex) if len(points) else np.zeros(0, complex)
        self._build(grading, pts, radius)
        self.terminals = self._attach(pts)
        self._costs: dict[float, np.ndarray] = {}
        self._extra: dict[float, tuple] = {}

    # construction

    def _build(self, grading, pts, radius):
        d = self.d
        diam = diameter(d)
        x0 = d.base_point
        if self.region is RegionTag.INTERIOR:
            xmin, xmax, ymin, ymax = d.bbox()
        else:
            r = 2 * diam if radius is None else radius
            if len(pts):
                r = max(r, np.abs(pts - x0).max() + 0.5 * diam)
            xmin, xmax, ymin, ymax = x0.real - r, x0.real + r, x0.imag - r, x0.imag + r
        k = -math.floor(math.log2(max(xmax - xmin, ymax - ymin) / 4))
        k = min(k, self.depth)
        l = 2.0 ** -k
        i = np.arange(math.floor(xmin / l), math.floor(xmax / l) + 1)
        j = np.arange(math.floor(ymin / l), math.floor(ymax / l) + 1)
        I, J = np.meshgrid(i, j, indexing="ij")
        c1, c2 = I.ravel().astype(np.int64), J.ravel().astype(np.int64)
        leaves = []
        want_inside = self.region is RegionTag.INTERIOR
        while len(c1):
            l = 2.0 ** -k
            lev = np.full(c1.shape, k)
            dist = square_boundary_distance(d, lev, c1, c2)
            ctr = (c1 + 0.5) * l + 1j * (c2 + 0.5) * l
            inside = np.asarray(d.contains(ctr), dtype=bool)
            right = (inside == want_inside) & (dist > 0)
            wrong = (inside != want_inside) & (dist > 0)
            leaf = right & ((l <= grading * dist) | (k >= self.depth))
            leaves.append(np.c_[lev[leaf], c1[leaf], c2[leaf]])
            split = ~leaf & ~wrong & (k < self.depth)
            s1, s2 = c1[split], c2[split]
            c1 = np.concatenate([2 * s1, 2 * s1 + 1, 2 * s1, 2 * s1 + 1])
            c2 = np.concatenate([2 * s2, 2 * s2, 2 * s2 + 1, 2 * s2 + 1])
            k += 1
        sq = np.concatenate(leaves).astype(np.int64)
        self.leaves = sq
        # integer lattice with unit floor/2; a level-k leaf has size 2**(depth-k+1)
        size = np.left_shift(1, self.depth - sq[:, 0] + 1)
        X0, Y0 = sq[:, 1] * size, sq[:, 2] * size
        self.unit = self.floor / 2
        corners = np.concatenate([np.c_[X0, Y0], np.c_[X0 + size, Y0], np.c_[X0, Y0 + size],
                                  np.c_[X0 + size, Y0 + size], np.c_[X0 + size // 2, Y0 + size // 2]])
        keys = np.unique(_key(corners[:, 0], corners[:, 1]))
        self.node_keys = keys
        nx, ny = _unkey(keys)
        self.nodes = nx * self.unit + 1j * ny * self.unit
        edges = []
        for s in np.unique(size):
            sel = size == s
            edges.append(self._leaf_edges(X0[sel], Y0[sel], int(s)))
        e = np.concatenate(edges)
        e = np.sort(e, axis=1)
        self.base_edges = np.unique(e, axis=0)
        self.leaf_size = size * self.unit

    def _leaf_edges(self, X0, Y0, s):
        """Edges for all leaves of one size."""
        keys = self.node_keys
        t = np.arange(0, s, 2)
        # perimeter lattice, counter-clockwise; a corner also belongs to the previous side
        px = np.concatenate([t, np.full_like(t, s), s - t, np.zeros_like(t)])
        py = np.concatenate([np.zeros_like(t), t, np.full_like(t, s), s - t])
        side = np.repeat(np.arange(4), len(t))
        prev = np.where(np.tile(t == 0, 4), (side - 1) % 4, side)
        q = _key(X0[:, None] + px[None, :], Y0[:, None] + py[None, :])
        pos = np.clip(np.searchsorted(keys, q), 0, len(keys) - 1)
        exists = keys[pos] == q
        centre = np.searchsorted(keys, _key(X0 + s // 2, Y0 + s // 2))
        out = [np.c_[np.repeat(centre, exists.sum(axis=1)), pos[exists]]]
        for r in range(len(X0)):
            idx = np.nonzero(exists[r])[0]
            nodes = pos[r, idx]
            out.append(np.c_[nodes, np.roll(nodes, -1)])
            ii, jj = np.triu_indices(len(idx), k=1)
            a, b = idx[ii], idx[jj]
            share = ((side[a] == side[b]) | (side[a] == prev[b]) | (prev[a] == side[b])
                     | (prev[a] == prev[b]))
            out.append(np.c_[nodes[ii[~share]], nodes[jj[~share]]])
        return np.concatenate(out)

    def _attach(self, pts):
        """Connect each terminal point to nearby graph nodes by clear straight segments."""
        n0 = len(self.nodes)
        self.term_edges = np.zeros((0, 2), dtype=np.int64)
        if len(pts) == 0:
            return np.zeros(0, dtype=np.int64)
        tree = cKDTree(np.c_[self.nodes.real, self.nodes.imag])
        dist = distance_to_boundary(pts, self.d)
        edges = []
        for i, z in enumerate(pts):
            r = 3 * max(self.floor, 0.5 * dist[i])
            for _ in range(6):
                dd, cand = tree.query([z.real, z.imag], k=min(48, len(self.nodes)),
                                      distance_upper_bound=r)
                cand = cand[np.isfinite(dd)].astype(np.int64)
                if len(cand):
                    ok = self._clear(np.full(len(cand), z), self.nodes[cand])
                    if ok.sum() >= 3:
                        break
                r *= 2
            else:
                ok = np.zeros(len(cand), bool)
            edges.append(np.c_[np.full(int(ok.sum()), n0 + i), cand[ok]])
        self.term_edges = np.concatenate(edges) if edges else np.zeros((0, 2), np.int64)
        self.nodes = np.concatenate([self.nodes, pts])
        return n0 + np.arange(len(pts))

    def _clear(self, p, q):
        """Segments whose relative interior stays strictly on the graph's side."""
        tau = 1e-7
        pp = p + tau * (q - p)
        qq = q + tau * (p - q)
        hit = segments_meet_boundary(self.d, pp, qq)
        mid = classify((p + q) / 2, self.d)
        return ~hit & (mid == int(self.region))

    # costs and search

    def _matrix(self, e, extra=()):
        if e not in self._costs:
            ed = np.concatenate([self.base_edges, self.term_edges])
            w = segment_costs(self.nodes[ed[:, 0]], self.nodes[ed[:, 1]], self.d, e,
                              rtol=1e-7, max_level=30, strict=False)
            fin = np.isfinite(w)
            self._costs[e] = (ed[fin], w[fin])
        ed, w = self._costs[e]
        if e in self._extra:
            xe, xw = self._extra[e]
            ed = np.concatenate([ed, xe])
            w = np.concatenate([w, xw])
        n = len(self.nodes)
        w = np.maximum(w, 1e-300)
        return coo_matrix((w, (ed[:, 0], ed[:, 1])), shape=(n, n)).tocsr()

    def solve(self, pairs, f: CostFunctional, shortcut_rounds: int = 2):
        """Costs and node paths for terminal index pairs (graph metric, exactly symmetric)."""
        e = f.weight_exponent
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        src = np.minimum(pairs[:, 0], pairs[:, 1])
        dst = np.maximum(pairs[:, 0], pairs[:, 1])
        for _ in range(shortcut_rounds):
            costs, paths = self._search(src, dst, e)
            self._add_shortcuts(paths, e)
        costs, paths = self._search(src, dst, e)
        flip = pairs[:, 0] != src
        paths = [p[::-1] if fl else p for p, fl in zip(paths, flip)]
        return costs, paths

    def _search(self, src, dst, e):
        G = self._matrix(e)
        T = self.terminals
        costs = np.full(len(src), np.inf)
        paths = [np.zeros(0, np.int64)] * len(src)
        usrc = np.unique(src)
        for s in range(0, len(usrc), 32):
            chunk = usrc[s:s + 32]
            dist, pred = dijkstra(G, directed=False, indices=T[chunk], return_predecessors=True)
            for row, si in enumerate(chunk):
                for k in np.nonzero(src == si)[0]:
                    t = T[dst[k]]
                    costs[k] = dist[row, t]
                    if np.isfinite(costs[k]):
                        paths[k] = _walk(pred[row], t)
        return costs, paths

    def _add_shortcuts(self, paths, e):
        cand = set()
        for p in paths:
            n = len(p)
            for i in range(n - 2):
                j = 2
                while i + j < n:
                    a, b = int(p[i]), int(p[i + j])
                    cand.add((min(a, b), max(a, b)))
                    j = j + 1 if j < 4 else int(j * 1.5)
                cand.add((min(int(p[i]), int(p[-1])), max(int(p[i]), int(p[-1]))))
        if not cand:
            return
        old = self._extra.get(e, (np.zeros((0, 2), np.int64), np.zeros(0)))
        have = set(map(tuple, old[0].tolist()))
        c = np.array(sorted(cand - have), dtype=np.int64).reshape(-1, 2)
        if len(c) == 0:
            return
        ok = self._clear(self.nodes[c[:, 0]], self.nodes[c[:, 1]])
        c = c[ok]
        w = segment_costs(self.nodes[c[:, 0]], self.nodes[c[:, 1]], self.d, e,
                          rtol=1e-7, max_level=30, strict=False)
        fin = np.isfinite(w)
        c, w = c[fin], w[fin]
        self._extra[e] = (np.concatenate([old[0], c]), np.concatenate([old[1], w]))


def _walk(pred, t):
    out = [t]
    while pred[out[-1]] >= 0:
        out.append(pred[out[-1]])
    return np.array(out[::-1], dtype=np.int64)


def _key(x, y):
    return (np.asarray(x, np.int64) + (1 << 30)) * (1 << 31) + (np.asarray(y, np.int64) + (1 << 30))


def _unkey(k):
    return k // (1 << 31) - (1 << 30), k % (1 << 31) - (1 << 30)


# -- single-pair operations ------------------------------------------------------

def _check_endpoints(pts, d, f):
    tags = np.atleast_1d(classify(pts, d))
    bad = (tags != int(f.region)) & (tags != int(RegionTag.BOUNDARY))
    if bad.any():
        z = np.atleast_1d(pts)[bad][0]
        raise ValueError(f"endpoint {z} is not in the {f.side} of the domain")


def optimal_path(z1, z2, d: DomainSpec, f: CostFunctional, depth: int = 7,
                 polish: bool = True) -> PathResult:
    """Graph search, then local polishing of the vertices (costs only ever decrease)."""
    z1, z2 = complex(as_complex(z1)), complex(as_complex(z2))
    if z1 == z2:
        raise ValueError("endpoints must differ")
    swap = (z2.real, z2.imag) < (z1.real, z1.imag)
    a, b = (z2, z1) if swap else (z1, z2)
    pts = np.array([a, b])
    _check_endpoints(pts, d, f)
    g = PathGraph(d, f.side, depth, pts)
    costs, paths = g.solve([(0, 1)], f)
    if not np.isfinite(costs[0]):
        raise Inconclusive("endpoints are not connected within the declared side", partial=np.inf)
    poly = g.nodes[paths[0]]
    cost = float(costs[0])
    if polish:
        poly, cost = polish_path(poly, d, f, g.floor)
    if swap:
        poly = poly[::-1]
    return _result(d, poly, cost)


def polish_path(poly, d: DomainSpec, f: CostFunctional, floor: float, sweeps: int = 40):
    """Densify a polyline, then move vertices along chord normals while the cost drops."""
    e = f.weight_exponent
    region = int(f.region)

    def seg(p, q):
        return segment_costs(p, q, d, e, rtol=1e-8, max_level=40, strict=False)

    def clear(p, q):
        tau = 1e-7
        hit = segments_meet_boundary(d, p + tau * (q - p), q + tau * (p - q))
        return ~hit & (np.asarray(classify((p + q) / 2, d)) == region)

    P = np.asarray(poly, dtype=complex)
    for _ in range(6):
        mid = (P[:-1] + P[1:]) / 2
        long = np.abs(np.diff(P)) > 0.15 * distance_to_boundary(mid, d) + floor
        if not long.any() or len(P) > 400:
            break
        P = np.insert(P, np.nonzero(long)[0] + 1, mid[long])
    n = len(P)
    P0 = P.copy()
    start_cost = float(seg(P[:-1], P[1:]).sum())
    if n < 3:
        return P, start_cost
    L = np.abs(np.diff(P))
    step = np.zeros(n)
    step[1:-1] = 0.25 * np.minimum(L[:-1], L[1:])
    for _ in range(sweeps):
        moved = False
        for parity in (1, 2):
            idx = np.arange(parity, n - 1, 2)
            prev, cur, nxt = P[idx - 1], P[idx], P[idx + 1]
            chord = nxt - prev
            nrm = 1j * chord / np.where(np.abs(chord) > 0, np.abs(chord), 1)
            best = seg(prev, cur) + seg(cur, nxt)
            best_pt = cur.copy()
            for sign in (1.0, -1.0):
                X = cur + sign * step[idx] * nrm
                ok = clear(prev, X) & clear(X, nxt)
                c = np.full(len(idx), np.inf)
                if ok.any():
                    c[ok] = seg(prev[ok], X[ok]) + seg(X[ok], nxt[ok])
                better = c < best * (1 - 1e-12)
                best = np.where(better, c, best)
                best_pt = np.where(better, X, best_pt)
            improved = best_pt != cur
            P[idx] = best_pt
            step[idx] = np.where(improved, step[idx], 0.5 * step[idx])
            moved |= bool(improved.any())
        if not moved and step.max() < 1e-6 * floor:
            break
    cost = float(seg(P[:-1], P[1:]).sum())
    if cost > start_cost:
        return P0, start_cost
    return P, cost


def _result(d: DomainSpec, pts, cost):
    dist = distance_to_boundary(pts, d)
    return PathResult(pts, float(cost), float(np.abs(np.diff(pts)).sum()),
                      bool((dist <= d.tol).any()))


def condition_ratio(z1, z2, d: DomainSpec, f: CostFunctional, depth: int = 7) -> float:
    r = optimal_path(z1, z2, d, f, depth)
    return r.cost / abs(complex(as_complex(z1)) - complex(as_complex(z2))) ** f.target_exponent


def quasiconvexity_ratio(z1, z2, d: DomainSpec, side: str = "complement", depth: int = 7) -> float:
    z1, z2 = complex(as_complex(z1)), complex(as_complex(z2))
    r = optimal_path(z1, z2, d, CostFunctional.length(side), depth)
    return r.length / abs(z1 - z2)


# -- sampling and verdicts -------------------------------------------------------

@dataclass
class SamplingPlan:
    points: np.ndarray
    pairs: np.ndarray
    scale: np.ndarray
    seed: int
    levels: int = 6

    def upto(self, j: int) -> np.ndarray:
        """Indices of pairs whose finest scale index is at most ``j``."""
        return np.nonzero(self.scale <= j)[0]


def default_plan(d: DomainSpec, side: str, n_pairs: int = 200, seed: int = 0,
                 levels: int = 6) -> SamplingPlan:
    """Pairs drawn from offset rings at ``2**-j * diam`` and from the boundary.

    Kinds, in rotation: two points of one ring at a dyadic separation; two
    boundary points at a dyadic separation; two random pool points; and an
    "across" pair, a point with the nearest pool point whose boundary foot is
    far away along the boundary (slits, cusps, narrow necks).  Each pair gets a
    scale index, the largest of its ring indices and its separation index, so
    coarse levels only see coarse pairs.  Boundary points are used on the
    interior side only for Jordan domains.
    """
    rng = np.random.default_rng(seed)
    diam = diameter(d)
    region = RegionTag.EXTERIOR if side == "complement" else RegionTag.INTERIOR
    bnd = d.boundary_polyline(2048)
    arc = np.concatenate([[0.0], np.cumsum(np.abs(np.diff(np.append(bnd, bnd[0]))))])
    perim = arc[-1]
    arc = arc[:-1]
    nrm = _normals(bnd, d)
    sign = 1.0 if region is RegionTag.EXTERIOR else -1.0
    pool_z, pool_j, pool_s = [], [], []
    if region is RegionTag.EXTERIOR or d.is_jordan:
        pool_z.append(bnd)
        pool_j.append(np.zeros(len(bnd), int))
        pool_s.append(arc)
    for j in range(1, levels + 1):
        t = diam * 2.0 ** -j
        z = bnd + sign * t * nrm
        ok = np.asarray(classify(z, d)) == int(region)
        ok &= np.abs(distance_to_boundary(z, d) - t) <= 0.25 * t
        if region is RegionTag.EXTERIOR:
            ok &= np.abs(z - d.base_point) <= 2 * diam
        pool_z.append(z[ok])
        pool_j.append(np.full(int(ok.sum()), j))
        pool_s.append(arc[ok])
    Z = np.concatenate(pool_z)
    J = np.concatenate(pool_j)
    S = np.concatenate(pool_s)
    if len(Z) < 2:
        raise ValueError("no sample points could be placed on this side")
    has_bnd = bool((J == 0).any())

    def sep_index(a, b):
        return max(0, int(math.ceil(-math.log2(max(abs(a - b), 1e-300) / diam) - 1e-9)))

    def along(i, k):
        dd = np.abs(S[i] - S[k])
        return np.minimum(dd, perim - dd)

    kinds = ["ring", "random", "across"] + (["boundary"] if has_bnd else [])
    pairs: list[tuple[int, int]] = []
    scale: list[int] = []
    tries = 0
    while len(pairs) < n_pairs:
        tries += 1
        if tries > 50 * n_pairs:
            raise ValueError("could not draw enough distinct pairs")
        kind = kinds[tries % len(kinds)]
        if kind == "ring":
            j = int(rng.integers(1, levels + 1))
            ring = np.nonzero(J == j)[0]
            if len(ring) < 2:
                continue
            i = ring[rng.integers(len(ring))]
            sep = diam * 2.0 ** -(j + rng.integers(-1, 2))
            k = ring[np.argmin(np.abs(np.abs(Z[ring] - Z[i]) - sep))]
        elif kind == "boundary":
            ring = np.nonzero(J == 0)[0]
            i = ring[rng.integers(len(ring))]
            sep = diam * 2.0 ** -int(rng.integers(0, levels + 1))
            k = ring[np.argmin(np.abs(np.abs(Z[ring] - Z[i]) - sep))]
        elif kind == "random":
            i, k = rng.integers(len(Z), size=2)
        else:
            i = int(rng.integers(len(Z)))
            cand = np.nonzero(J >= J[i])[0]
            gap = np.abs(Z[cand] - Z[i])
            far = along(i, cand) >= 4 * gap + 4 * diam * 2.0 ** -levels
            if not far.any():
                continue
            k = cand[far][np.argmin(gap[far])]
        if Z[i] == Z[k]:
            continue
        pairs.append((int(i), int(k)))
        scale.append(max(int(J[i]), int(J[k]), sep_index(Z[i], Z[k])))
    return SamplingPlan(Z, np.array(pairs, dtype=np.int64), np.array(scale), seed, levels)


def _normals(bnd, d):
    tangent = np.roll(bnd, -1) - np.roll(bnd, 1)
    n = -1j * tangent
    n = n / np.where(np.abs(n) > 0, np.abs(n), 1)
    return n


@dataclass
class ConditionReport:
    p: float
    side: str
    pairs: list
    max_ratio: float
    refinement_trend: list
    verdict: str
    depth: int
    seed: int
    thresholds: dict = field(default_factory=lambda: {"stable_band": STABLE_BAND,
                                                      "growth_factor": GROWTH_FACTOR})

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "side": self.side,
            "max_ratio": _finite_or_str(self.max_ratio),
            "verdict": self.verdict,
            "refinement_trend": [_finite_or_str(v) for v in self.refinement_trend],
            "thresholds": self.thresholds,
            "pairs": [{"z1": [z1.real, z1.imag], "z2": [z2.real, z2.imag],
                       "cost": _finite_or_str(c), "ratio": _finite_or_str(r)}
                      for z1, z2, c, r in self.pairs],
        }


def _finite_or_str(v):
    return float(v) if np.isfinite(v) else "inf"


def verdict_from_trend(trend) -> str:
    t = np.asarray(trend, dtype=float)
    if np.isinf(t[-1]):
        return "Growing"
    if np.all(np.isfinite(t)) and t.max() <= STABLE_BAND * t.min():
        return "Bounded"
    if np.all(np.diff(t) > 0) and t[-1] >= GROWTH_FACTOR * t[0]:
        return "Growing"
    return "Inconclusive"


class ConditionStudy:
    """One domain and side, one sampling plan, graphs at three refinement levels.

    Level ``k`` (for ``k`` in ``depth-2 .. depth``) uses graph floor ``2**-k`` and
    the pairs of scale index at most ``k - 1``.
    """

    def __init__(self, d: DomainSpec, side: str, depth: int = 7, n_pairs: int = 200, seed: int = 0,
                 plan: SamplingPlan | None = None):
        self.d, self.side, self.depth, self.seed = d, side, depth, seed
        self.plan = plan or default_plan(d, side, n_pairs, seed, levels=depth - 1)
        if len(self.plan.pairs) < 100 and plan is None:
            raise ValueError("a condition estimate needs at least 100 pairs")
        self.levels = list(range(depth - 2, depth + 1))
        self._graphs: dict[int, tuple] = {}

    def _graph(self, k):
        if k not in self._graphs:
            idx = self.plan.upto(k - 1)
            used = np.unique(self.plan.pairs[idx])
            remap = -np.ones(len(self.plan.points), np.int64)
            remap[used] = np.arange(len(used))
            g = PathGraph(self.d, self.side, k, self.plan.points[used])
            self._graphs[k] = (g, idx, remap)
        return self._graphs[k]

    def run(self, f: CostFunctional) -> ConditionReport:
        if f.side != self.side:
            raise ValueError("functional side does not match the study")
        trend = []
        for k in self.levels:
            g, idx, remap = self._graph(k)
            pr = remap[self.plan.pairs[idx]]
            costs, _ = g.solve(pr, f)
            z = self.plan.points[self.plan.pairs[idx]]
            ratios = costs / np.abs(z[:, 0] - z[:, 1]) ** f.target_exponent
            trend.append(float(ratios.max()) if len(ratios) else 0.0)
        z = self.plan.points[self.plan.pairs[idx]]
        rows = [(complex(a), complex(b), float(c), float(r))
                for (a, b), c, r in zip(z, costs, ratios)]
        return ConditionReport(f.p, f.side, rows, trend[-1], trend, verdict_from_trend(trend),
                               self.depth, self.seed)


def estimate_condition_constant(d: DomainSpec, f: CostFunctional, plan: SamplingPlan | None = None,
                                depth: int = 7, n_pairs: int = 200, seed: int = 0) -> ConditionReport:
    return ConditionStudy(d, f.side, depth, n_pairs, seed, plan).run(f)


def exponent_sweep(d: DomainSpec, side: str, p_list, depth: int = 7, n_pairs: int = 200,
                   seed: int = 0) -> list[tuple[float, float, str]]:
    """Per-exponent verdicts on one shared plan and graph set (p = 1 gives length ratios)."""
    p_list = list(p_list)
    if p_list != sorted(p_list):
        raise ValueError("p_list must be sorted")
    study = ConditionStudy(d, side, depth, n_pairs, seed)
    out = []
    for p in p_list:
        rep = study.run(CostFunctional(p, side))
        out.append((p, rep.max_ratio, rep.verdict))
    return out


def duality_check(d: DomainSpec, p: float, depth: int = 7, n_pairs: int = 200, seed: int = 0) -> dict:
    if not d.is_jordan:
        raise ValueError("duality check needs a Jordan domain")
    if not 1 < p < 2:
        raise ValueError("p must lie in (1, 2)")
    q = p / (p - 1)
    comp = estimate_condition_constant(d, CostFunctional(p, "complement"), depth=depth,
                                       n_pairs=n_pairs, seed=seed)
    inner = estimate_condition_constant(d, CostFunctional(q, "interior"), depth=depth,
                                        n_pairs=n_pairs, seed=seed)
    return {"p": p, "q": q, "complement": comp, "interior": inner,
            "agree": comp.verdict == inner.verdict}
