"""Dyadic Whitney decompositions of a domain and of the bounded part of its complement.

A square is the triple ``(k, m1, m2)`` with side ``l = 2**-k`` and lower-left
corner ``(m1*l, m2*l)``.  Decompositions store the triples as parallel integer
arrays in canonical ``(level, m1, m2)`` order; a square id is its row index.
"""

from __future__ import annotations

import csv
import enum
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geom import DomainSpec, as_complex, box_polyline_distance, clip_segments, diameter

UPPER = 4 * math.sqrt(2)


class Side(str, enum.Enum):
    INTERIOR = "interior"
    EXTERIOR = "exterior"


class WhitneyError(RuntimeError):
    pass


@dataclass
class WhitneyDecomposition:
    side: Side
    level: np.ndarray
    m1: np.ndarray
    m2: np.ndarray
    max_depth: int
    domain: DomainSpec
    collar_area: float = 0.0
    ball: tuple[complex, float] | None = None
    _nbrs: list | None = field(default=None, repr=False)
    _keys: np.ndarray | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.level)

    @property
    def side_length(self) -> np.ndarray:
        return np.ldexp(1.0, -self.level)

    @property
    def corner(self) -> np.ndarray:
        l = self.side_length
        return self.m1 * l + 1j * self.m2 * l

    @property
    def center(self) -> np.ndarray:
        return self.corner + (0.5 + 0.5j) * self.side_length

    @property
    def collar_width(self) -> float:
        return (2 + 2 * math.sqrt(2)) * 2.0 ** -self.max_depth

    def square(self, i: int) -> tuple[int, int, int]:
        return int(self.level[i]), int(self.m1[i]), int(self.m2[i])

    def index_of(self, k: int, m1: int, m2: int) -> int:
        key = _encode(np.array([k]), np.array([m1]), np.array([m2]))[0]
        keys = self.keys
        pos = int(np.searchsorted(keys, key))
        if pos >= len(keys) or keys[pos] != key:
            raise KeyError((k, m1, m2))
        return pos

    @property
    def keys(self) -> np.ndarray:
        if self._keys is None:
            self._keys = _encode(self.level, self.m1, self.m2)
        return self._keys

    def locate(self, p) -> np.ndarray:
        """Id of the square containing each point, or -1 (ties go to the finer square)."""
        z = np.atleast_1d(as_complex(p))
        out = np.full(z.shape, -1, dtype=np.int64)
        keys = self.keys
        for k in np.unique(self.level)[::-1]:
            l = 2.0 ** -int(k)
            a = np.floor(z.real / l).astype(np.int64)
            b = np.floor(z.imag / l).astype(np.int64)
            q = _encode(np.full(a.shape, k), a, b)
            pos = np.clip(np.searchsorted(keys, q), 0, len(keys) - 1)
            hit = (keys[pos] == q) & (out < 0)
            out[hit] = pos[hit]
        return out

    def neighbors(self, q: int) -> list[int]:
        if not 0 <= q < len(self):
            raise KeyError(f"unknown square id {q}")
        if self._nbrs is None:
            self._nbrs = _neighbor_lists(self)
        return self._nbrs[q]

    def neighbor_pairs(self) -> np.ndarray:
        """All unordered neighbour pairs ``(i, j)`` with ``i < j``."""
        if self._nbrs is None:
            self._nbrs = _neighbor_lists(self)
        pairs = [(i, j) for i, ns in enumerate(self._nbrs) for j in ns if i < j]
        return np.array(pairs, dtype=np.int64).reshape(-1, 2)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["level", "m1", "m2"])
            for row in zip(self.level.tolist(), self.m1.tolist(), self.m2.tolist()):
                w.writerow(row)


def read_csv(path) -> list[tuple[int, int, int]]:
    with open(Path(path), newline="") as fh:
        return [(int(r["level"]), int(r["m1"]), int(r["m2"])) for r in csv.DictReader(fh)]


# -- square/boundary distance ------------------------------------------------

def square_boundary_distance(d: DomainSpec, level, m1, m2) -> np.ndarray:
    """Exact Euclidean distance from closed dyadic squares to the boundary of ``d``."""
    level = np.asarray(level)
    l = np.ldexp(1.0, -level)
    x0, y0 = m1 * l, m2 * l
    x1, y1 = x0 + l, y0 + l
    out = np.full(np.shape(l), np.inf)
    for c, r in d.circles():
        dx = np.maximum(np.maximum(x0 - c.real, c.real - x1), 0)
        dy = np.maximum(np.maximum(y0 - c.imag, c.imag - y1), 0)
        dmin = np.hypot(dx, dy)
        dmax = np.hypot(np.maximum(abs(x0 - c.real), abs(x1 - c.real)),
                        np.maximum(abs(y0 - c.imag), abs(y1 - c.imag)))
        dist = np.where(dmax < r, r - dmax, np.where(dmin > r, dmin - r, 0.0))
        out = np.minimum(out, dist)
    a, b = d.segments()
    if len(a):
        out = np.minimum(out, box_polyline_distance(x0, x1, y0, y1, a, b) - d.sag())
    return np.maximum(out, 0.0)


# -- construction -------------------------------------------------------------

def decompose(d: DomainSpec, side: Side | str = Side.INTERIOR, max_depth: int = 7,
              max_squares: int = 2_000_000) -> WhitneyDecomposition:
    """Top-down quadtree: accept a square once it lies on ``side`` with dist >= side length."""
    side = Side(side)
    if max_depth < 4:
        raise ValueError("max_depth must be >= 4")
    diam = diameter(d)
    x0 = d.base_point
    if side is Side.INTERIOR:
        xmin, xmax, ymin, ymax = d.bbox()
        k = -math.floor(math.log2(max(xmax - xmin, ymax - ymin)))
        ball = None
    else:
        k = -math.floor(math.log2(3 * diam))
        rb = 2 * diam
        xmin, xmax, ymin, ymax = x0.real - rb, x0.real + rb, x0.imag - rb, x0.imag + rb
        ball = (x0, rb)
    if k > max_depth:
        raise ValueError("max_depth too small for this domain")
    l = 2.0 ** -k
    i = np.arange(math.floor(xmin / l), math.floor(xmax / l) + 1)
    j = np.arange(math.floor(ymin / l), math.floor(ymax / l) + 1)
    I, J = np.meshgrid(i, j, indexing="ij")
    cand1, cand2 = I.ravel().astype(np.int64), J.ravel().astype(np.int64)

    acc = []
    collar = 0.0
    total = 0
    want_inside = side is Side.INTERIOR
    while len(cand1):
        l = 2.0 ** -k
        lev = np.full(cand1.shape, k)
        if ball is not None:
            keep = _box_meets_disk(cand1 * l, cand2 * l, l, *ball)
            cand1, cand2, lev = cand1[keep], cand2[keep], lev[keep]
        dist = square_boundary_distance(d, lev, cand1, cand2)
        ctr = (cand1 + 0.5) * l + 1j * (cand2 + 0.5) * l
        inside = np.asarray(d.contains(ctr), dtype=bool)
        right = inside == want_inside
        good = right & (dist >= l)
        wrong = ~right & (dist > 0)
        accept = good
        acc.append(np.c_[lev[accept], cand1[accept], cand2[accept]])
        total += int(accept.sum())
        if total > max_squares:
            raise WhitneyError(f"square-count cap {max_squares} exceeded")
        split = ~accept & ~wrong
        s1, s2 = cand1[split], cand2[split]
        if k == max_depth:
            collar += float(len(s1)) * l * l
            break
        cand1 = np.concatenate([2 * s1, 2 * s1 + 1, 2 * s1, 2 * s1 + 1])
        cand2 = np.concatenate([2 * s2, 2 * s2, 2 * s2 + 1, 2 * s2 + 1])
        if len(cand1) > 4 * max_squares:
            raise WhitneyError(f"square-count cap {max_squares} exceeded")
        k += 1
    sq = np.concatenate(acc) if acc else np.zeros((0, 3), dtype=np.int64)
    sq = sq.astype(np.int64)
    order = np.lexsort((sq[:, 2], sq[:, 1], sq[:, 0]))
    sq = sq[order]
    return WhitneyDecomposition(side, sq[:, 0], sq[:, 1], sq[:, 2], max_depth, d,
                                collar_area=collar, ball=ball)


def _box_meets_disk(x0, y0, l, c, r):
    dx = np.maximum(np.maximum(x0 - c.real, c.real - x0 - l), 0)
    dy = np.maximum(np.maximum(y0 - c.imag, c.imag - y0 - l), 0)
    return np.hypot(dx, dy) <= r


# -- neighbours ---------------------------------------------------------------

_OFF = 1 << 27


def _encode(k, m1, m2) -> np.ndarray:
    k = np.asarray(k, dtype=np.int64)
    return ((k + 64) << 56) | ((np.asarray(m1, dtype=np.int64) + _OFF) << 28) | (
        np.asarray(m2, dtype=np.int64) + _OFF)


def _neighbor_lists(w: WhitneyDecomposition) -> list[list[int]]:
    keys = w.keys
    n = len(keys)
    src, dst = [], []
    for a in np.unique(w.level):
        sel = np.nonzero(w.level >= a)[0]
        s = np.left_shift(1, w.level[sel] - a)
        lo1 = np.floor_divide(w.m1[sel], s) - (np.mod(w.m1[sel], s) == 0)
        hi1 = np.floor_divide(w.m1[sel] + 1, s)
        lo2 = np.floor_divide(w.m2[sel], s) - (np.mod(w.m2[sel], s) == 0)
        hi2 = np.floor_divide(w.m2[sel] + 1, s)
        for di in range(3):
            for dj in range(3):
                c1, c2 = lo1 + di, lo2 + dj
                valid = (c1 <= hi1) & (c2 <= hi2)
                q = _encode(np.full(c1.shape, a), c1, c2)
                pos = np.clip(np.searchsorted(keys, q), 0, n - 1)
                hit = valid & (keys[pos] == q) & (pos != sel)
                src.append(sel[hit])
                dst.append(pos[hit])
    src = np.concatenate(src) if src else np.zeros(0, np.int64)
    dst = np.concatenate(dst) if dst else np.zeros(0, np.int64)
    allsrc = np.concatenate([src, dst])
    alldst = np.concatenate([dst, src])
    pairs = np.unique(np.c_[allsrc, alldst], axis=0)
    out: list[list[int]] = [[] for _ in range(n)]
    for i, j in pairs.tolist():
        out[i].append(j)
    return out


# -- curves -------------------------------------------------------------------

@dataclass
class CurveSquareTrace:
    curve: np.ndarray
    hits: list[tuple[int, float]]
    histogram: dict[int, int]


def trace_curve(w: WhitneyDecomposition, gamma, check: bool = True) -> CurveSquareTrace:
    """Squares met by a polyline and the length of the polyline inside each."""
    g = np.atleast_1d(as_complex(gamma)).astype(complex)
    if check:
        _check_curve_in_region(w, g)
    if len(g) < 2 or len(w) == 0:
        return CurveSquareTrace(g, [], {})
    a, b = g[:-1], g[1:]
    seglen = np.abs(b - a)
    l = w.side_length
    X0, Y0 = w.corner.real, w.corner.imag
    # prefilter by bounding boxes
    gx0, gx1 = np.minimum(a.real, b.real), np.maximum(a.real, b.real)
    gy0, gy1 = np.minimum(a.imag, b.imag), np.maximum(a.imag, b.imag)
    near = ((X0 <= gx1.max()) & (X0 + l >= gx0.min()) & (Y0 <= gy1.max()) & (Y0 + l >= gy0.min()))
    ids = np.nonzero(near)[0]
    length = np.zeros(len(ids))
    met = np.zeros(len(ids), dtype=bool)
    step = max(1, 2_000_000 // max(len(a), 1))
    for s in range(0, len(ids), step):
        sub = ids[s:s + step]
        x0, y0, ll = X0[sub][:, None], Y0[sub][:, None], l[sub][:, None]
        ok, t0, t1 = clip_segments(x0, x0 + ll, y0, y0 + ll, a[None, :], b[None, :])
        met[s:s + step] = ok.any(axis=1)
        length[s:s + step] = (np.where(ok, t1 - t0, 0.0) * seglen[None, :]).sum(axis=1)
    hit_ids = ids[met]
    hits = [(int(i), float(v)) for i, v in zip(hit_ids, length[met])]
    hist = Counter(int(w.level[i]) for i in hit_ids)
    return CurveSquareTrace(g, hits, dict(sorted(hist.items())))


def _check_curve_in_region(w: WhitneyDecomposition, g: np.ndarray) -> None:
    from .geom import distance_to_boundary

    covered = w.locate(g) >= 0
    if covered.all():
        return
    rest = g[~covered]
    near = distance_to_boundary(rest, w.domain) <= w.collar_width
    if not near.all():
        bad = rest[~near][0]
        raise WhitneyError(f"curve leaves the decomposed region at {bad.real:.6g}{bad.imag:+.6g}i")


def whitney_sum(t: CurveSquareTrace, exponent: float) -> float:
    """Sum over hit squares of ``l(Q)**exponent``, i.e. sum_i n_i 2**(-i*exponent)."""
    return float(sum(n * 2.0 ** (-k * exponent) for k, n in t.histogram.items()))
