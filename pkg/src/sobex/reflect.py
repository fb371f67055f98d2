"""Shadows of squares, the exterior-to-interior square assignment, chains and sum checks.

Shadows live on the source circle as angle intervals ``[lo, lo + length]``;
the boundary image is only produced when a diameter is needed.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .conformal import ConformalMap
from .geom import as_complex, diameter
from .whitney import Side, WhitneyDecomposition

TWO_PI = 2 * math.pi
EDGE_SAMPLES = 16
ARC_SAMPLES = 24
FAKE_FLOOR = 1.15


class ChainError(RuntimeError):
    pass


@dataclass
class Shadow:
    lo: float
    length: float
    points: np.ndarray
    diam: float
    inner_diam: float

    @property
    def arc(self) -> tuple[float, float]:
        return self.lo, self.lo + self.length

    @property
    def source_diam(self) -> float:
        return chord(self.length)


def chord(length):
    """Diameter of an arc of the unit circle with the given angular length."""
    length = np.minimum(np.asarray(length, dtype=float), TWO_PI)
    return np.where(length >= math.pi, 2.0, 2 * np.sin(length / 2))


def _extent(angles):
    """Smallest arcs covering each row of angles: (lo, length)."""
    a = np.sort(np.mod(angles, TWO_PI), axis=1)
    gaps = np.diff(np.concatenate([a, a[:, :1] + TWO_PI], axis=1), axis=1)
    g = np.argmax(gaps, axis=1)
    rows = np.arange(len(a))
    lo = a[rows, (g + 1) % a.shape[1]]
    return lo, TWO_PI - gaps[rows, g]


def rect_samples(x0, y0, w, h, n: int = EDGE_SAMPLES):
    """Boundary samples of axis-parallel rectangles, shape (N, 4n)."""
    t = np.arange(n) / n
    x0, y0, w, h = (np.atleast_1d(np.asarray(v, dtype=float))[:, None] for v in (x0, y0, w, h))
    c = x0 + 1j * y0
    return np.concatenate([c + w * t, c + w + 1j * h * t, c + w + 1j * h - w * t, c + 1j * h - 1j * h * t], axis=1)


def source_arcs(m: ConformalMap, pts, full=None):
    """Angular extent of the pull-back of each row of ``pts`` (connected sets)."""
    pts = np.asarray(pts, dtype=complex)
    z = np.asarray(m.inverse(pts.ravel()), dtype=complex).reshape(pts.shape)
    lo, length = _extent(np.angle(z))
    if full is not None:
        length = np.where(full, TWO_PI, length)
        lo = np.where(full, 0.0, lo)
    return lo, length


def arc_image_diam(m: ConformalMap, lo, length, n: int = ARC_SAMPLES):
    lo, length = np.atleast_1d(lo), np.atleast_1d(length)
    th = lo[:, None] + length[:, None] * np.linspace(0, 1, n)[None, :]
    w = m.boundary_point(th.ravel()).reshape(th.shape)
    out = np.zeros(len(lo))
    for s in range(0, len(lo), 2048):
        ww = w[s:s + 2048]
        out[s:s + 2048] = np.abs(ww[:, :, None] - ww[:, None, :]).max(axis=(1, 2))
    return out


def make_shadow(m: ConformalMap, lo: float, length: float, n: int = 65) -> Shadow:
    th = lo + length * np.linspace(0, 1, n)
    pts = m.boundary_point(th)
    diam = float(np.abs(pts[:, None] - pts[None, :]).max())
    return Shadow(float(lo), float(length), pts, diam, float(np.abs(np.diff(pts)).sum()))


def shadow(m: ConformalMap, A) -> Shadow:
    """Shadow of a square ``(corner, side)`` or a connected polyline under the rays of ``m``.

    Interior maps use rays from ``m(0)``, exterior maps rays from infinity.
    """
    if isinstance(A, tuple) and len(A) == 2:
        corner, side = complex(A[0]), float(A[1])
        pts = rect_samples(corner.real, corner.imag, side, side)
        full = None
        if m.side == "interior":
            b = m.base
            full = np.array([corner.real <= b.real <= corner.real + side and corner.imag <= b.imag <= corner.imag + side])
    else:
        P = np.atleast_1d(as_complex(A)).astype(complex)
        if len(P) > 1:
            t = np.linspace(0, 1, 9)[:-1]
            P = np.concatenate([(a + t * (b - a)) for a, b in zip(P[:-1], P[1:])] + [P[-1:]])
        pts, full = P[None, :], None
    lo, length = source_arcs(m, pts, full)
    return make_shadow(m, lo[0], length[0])


def arc_overlap(lo1, len1, lo2, len2):
    """Largest common piece of two circle arcs: (lo, length), length 0 if disjoint."""
    best_lo, best = np.asarray(lo1, dtype=float) * 0, np.full(np.shape(lo1), -1.0)
    for k in (-1, 0, 1):
        a = np.maximum(lo1, lo2 + k * TWO_PI)
        b = np.minimum(lo1 + len1, lo2 + len2 + k * TWO_PI)
        better = b - a > best
        best = np.where(better, b - a, best)
        best_lo = np.where(better, a, best_lo)
    return best_lo, np.maximum(best, 0.0)


def convert_arcs(src: ConformalMap, dst: ConformalMap, lo, length):
    """Re-express boundary arcs given in ``src`` angles in ``dst`` angles."""
    lo, length = np.atleast_1d(lo).astype(float), np.atleast_1d(length).astype(float)
    if src is dst:
        return lo, length
    a = dst.boundary_angle(src.boundary_point(lo))
    b = dst.boundary_angle(src.boundary_point(lo + length))
    out = np.mod(b - a, TWO_PI)
    out = np.where(length >= TWO_PI - 1e-12, TWO_PI, out)
    return a, out


# -- associated squares ------------------------------------------------------

def _disk_samples(z, r):
    """Points of the closed disks B(z, r): centre, two rings and the rim."""
    ang = np.exp(1j * TWO_PI * np.arange(12) / 12)
    rim = np.exp(1j * TWO_PI * np.arange(24) / 24)
    off = np.concatenate([[0], 0.5 * ang, ang * (1 - 1e-9), 0.999999 * rim * np.exp(1j * np.pi / 24)])
    return z[:, None] + r[:, None] * off[None, :]


@dataclass
class InteriorShadows:
    """Shadows of every interior Whitney square, in interior-map angles."""

    lo: np.ndarray
    length: np.ndarray
    diam: np.ndarray

    @classmethod
    def build(cls, wi: WhitneyDecomposition, mi: ConformalMap) -> InteriorShadows:
        l = wi.side_length
        c = wi.corner
        b = mi.base
        full = (c.real <= b.real) & (b.real <= c.real + l) & (c.imag <= b.imag) & (b.imag <= c.imag + l)
        lo, length = source_arcs(mi, rect_samples(c.real, c.imag, l, l), full)
        return cls(lo, length, arc_image_diam(mi, lo, length))


def associate(wi: WhitneyDecomposition, mi: ConformalMap, lo, length, ish: InteriorShadows | None = None):
    """Vectorised associated-square construction for arcs given in interior-map angles.

    Returns (square ids, fallback flags).  A fallback means the forward image
    of the ball met no square (it sat in the unresolved collar) and the ball
    was enlarged and pushed inwards.
    """
    lo, length = np.atleast_1d(lo).astype(float), np.atleast_1d(length).astype(float)
    ish = ish or InteriorShadows.build(wi, mi)
    out = np.full(len(lo), -1, dtype=np.int64)
    fell = np.zeros(len(lo), bool)
    big = length > 0.5
    if big.any():
        out[big] = wi.locate(mi.base)[0]
    todo = np.nonzero(~big)[0]
    sn = np.sin(length[todo] / 2)
    r = sn / (1 + 2 * sn)
    w = np.exp(1j * (lo[todo] + length[todo] / 2))
    scale = np.ones(len(todo))
    keys = np.stack([wi.level, wi.m1, wi.m2], axis=1)
    while len(todo):
        rr = np.minimum(r * scale, 0.3)
        z = (1 - 2 * rr) * w
        pts = _disk_samples(z, rr)
        ids = wi.locate(np.asarray(mi.evaluate(pts.ravel())[0])).reshape(pts.shape)
        retry = []
        for row, i in enumerate(todo):
            cand = np.unique(ids[row][ids[row] >= 0])
            if len(cand) == 0:
                if rr[row] >= 0.3:
                    raise ChainError(f"no Whitney square meets the image ball for arc {lo[i]:.6g}+{length[i]:.3g}")
                retry.append(row)
                continue
            olo, olen = arc_overlap(ish.lo[cand], ish.length[cand], lo[i], length[i])
            score = np.where(olen > 0, arc_image_diam(mi, olo, olen), -1.0)
            k = cand[np.lexsort((keys[cand, 2], keys[cand, 1], keys[cand, 0], -score))[0]]
            out[i] = k
        if not retry:
            break
        retry = np.array(retry)
        fell[todo[retry]] = True
        todo, r, w, scale = todo[retry], r[retry], w[retry], scale[retry] * 2
    return out, fell


def associated_square(wi: WhitneyDecomposition, gamma: Shadow, mi: ConformalMap, source: ConformalMap | None = None) -> int:
    """Interior square associated with the boundary arc ``gamma``.

    ``gamma`` is expressed in the angles of ``source`` (default ``mi``).
    """
    lo, length = convert_arcs(source or mi, mi, gamma.lo, gamma.length)
    ids, _ = associate(wi, mi, lo, length)
    return int(ids[0])


# -- reflection -----------------------------------------------------------------

@dataclass
class ReflectionAssignment:
    wi: WhitneyDecomposition
    we: WhitneyDecomposition
    mi: ConformalMap
    me: ConformalMap
    ext_ids: np.ndarray
    targets: np.ndarray
    ext_lo: np.ndarray
    ext_len: np.ndarray
    ext_diam: np.ndarray
    fallback: np.ndarray
    families: dict[int, list[int]]
    constants: dict[str, float]
    interior: InteriorShadows
    chains: dict[tuple[int, int], "Chain"] = field(default_factory=dict)

    @property
    def pairs(self) -> dict[int, int]:
        return {int(e): int(t) for e, t in zip(self.ext_ids, self.targets)}

    def target_of(self, ext_id: int) -> int:
        pos = np.searchsorted(self.ext_ids, ext_id)
        if pos >= len(self.ext_ids) or self.ext_ids[pos] != ext_id:
            raise KeyError(f"exterior square {ext_id} is not eligible")
        return int(self.targets[pos])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["ext_level", "ext_m1", "ext_m2", "int_level", "int_m1", "int_m2"])
            for e, t in zip(self.ext_ids, self.targets):
                wr.writerow([*self.we.square(int(e)), *self.wi.square(int(t))])


def build_reflection(wi: WhitneyDecomposition, we: WhitneyDecomposition, mi: ConformalMap,
                     me: ConformalMap) -> ReflectionAssignment:
    """Assign an interior square to every exterior square with side at most ``3 diam``."""
    if wi.side != Side.INTERIOR or we.side != Side.EXTERIOR:
        raise ValueError("need an interior and an exterior decomposition")
    if wi.domain != we.domain:
        raise ValueError("decompositions are over different domains")
    cap = 3 * diameter(wi.domain)
    ext = np.nonzero(we.side_length <= cap)[0]
    l = we.side_length[ext]
    c = we.corner[ext]
    elo, elen = source_arcs(me, rect_samples(c.real, c.imag, l, l))
    ediam = arc_image_diam(me, elo, elen)
    ilo, ilen = convert_arcs(me, mi, elo, elen)
    ish = InteriorShadows.build(wi, mi)
    tgt, fell = associate(wi, mi, ilo, ilen, ish)
    # ordering key: diameter of the exterior shadow's pre-image arc
    key = chord(elen)
    fam: dict[int, list[int]] = defaultdict(list)
    order = np.lexsort((we.m2[ext], we.m1[ext], we.level[ext], -key))
    for j in order:
        fam[int(tgt[j])].append(int(ext[j]))
    olo, olen = arc_overlap(ish.lo[tgt], ish.length[tgt], ilo, ilen)
    inter = np.where(olen > 0, arc_image_diam(mi, olo, olen), 0.0)
    with np.errstate(divide="ignore"):
        constants = {
            "upper": float(np.max(ish.diam[tgt] / ediam)),
            "lower": float(np.max(ediam / inter)),
            "max_family": float(max(len(v) for v in fam.values())),
            "fallbacks": float(fell.sum()),
        }
    return ReflectionAssignment(wi, we, mi, me, ext, tgt, elo, elen, ediam, fell, dict(sorted(fam.items())),
                                constants, ish)


# -- chains ---------------------------------------------------------------------

@dataclass
class FakeSquare:
    """``Q1 ∪ (Q2 ∩ {L-infinity distance to Q1 <= t})``, kept as two rectangles."""

    rects: tuple[tuple[float, float, float, float], ...]
    target_diam: float
    shadow_diam: float
    lo: float
    length: float
    square: int = -1


@dataclass
class Chain:
    endpoints: tuple[int, int]
    interior: list[int]
    fakes: list[FakeSquare]

    def to_dict(self) -> dict:
        return {"endpoints": list(self.endpoints), "interior": self.interior,
                "fakes": [{"rects": [list(r) for r in f.rects], "target_diam": f.target_diam,
                           "shadow_diam": f.shadow_diam, "square": f.square} for f in self.fakes]}


def _rect_of(w: WhitneyDecomposition, i: int):
    l = float(w.side_length[i])
    c = complex(w.corner[i])
    return c.real, c.imag, l, l


def _grow(r1, r2, t):
    """Part of rectangle r2 within L-infinity distance t of rectangle r1."""
    x0 = max(r2[0], r1[0] - t)
    x1 = min(r2[0] + r2[2], r1[0] + r1[2] + t)
    y0 = max(r2[1], r1[1] - t)
    y1 = min(r2[1] + r2[3], r1[1] + r1[3] + t)
    return x0, y0, max(x1 - x0, 0.0), max(y1 - y0, 0.0)


def _union_shadow(me: ConformalMap, rects):
    pts = np.concatenate([rect_samples(*r)[0] for r in rects if r[2] > 0 or r[3] > 0])
    lo, length = source_arcs(me, pts[None, :])
    return float(lo[0]), float(length[0]), float(arc_image_diam(me, lo, length)[0])


def build_chain(q1: int, q2: int, r: ReflectionAssignment, tol: float = 0.25) -> Chain:
    """Chain of interior squares joining the targets of neighbouring exterior squares."""
    key = (min(q1, q2), max(q1, q2))
    if key in r.chains:
        ch = r.chains[key]
        return ch if ch.endpoints == (q1, q2) else Chain((q1, q2), ch.interior[::-1], ch.fakes[::-1])
    pos = np.searchsorted(r.ext_ids, [q1, q2])
    interior, fakes = _chain(r, _rect_of(r.we, q1), _rect_of(r.we, q2), r.ext_diam[pos],
                             (r.target_of(q1), r.target_of(q2)), tol, (q1, q2))
    ch = Chain((q1, q2), interior, fakes)
    r.chains[key] = ch if q1 < q2 else Chain(key, interior[::-1], fakes[::-1])
    return ch


def chain_between(r: ReflectionAssignment, rect1, rect2, tol: float = 0.25) -> Chain:
    """Chain for two touching exterior rectangles ``(x0, y0, w, h)`` that need not be Whitney squares."""
    lo, ln, dm = zip(*[_union_shadow(r.me, [rc]) for rc in (rect1, rect2)])
    ilo, ilen = convert_arcs(r.me, r.mi, np.array(lo), np.array(ln))
    ids, _ = associate(r.wi, r.mi, ilo, ilen, r.interior)
    interior, fakes = _chain(r, rect1, rect2, np.array(dm), (int(ids[0]), int(ids[1])), tol, (-1, -1))
    return Chain((-1, -1), interior, fakes)


def _chain(r, rect1, rect2, diams, targets, tol, pair):
    d1, d2 = diams
    t1, t2 = targets
    if d1 <= 8 * d2 and d2 <= 8 * d1:
        return [t1, t2], []
    swap = d1 > d2
    rs, rl = (rect2, rect1) if swap else (rect1, rect2)
    ds = min(d1, d2)
    D = _union_shadow(r.me, [rs, rl])[2]
    fakes = []
    target = D / 2
    # each fake halves the previous one's measured shadow; bisecting to tol/3 and
    # flooring the target at FAKE_FLOOR * ds keeps the halving within tol and the
    # last fake inside [ds, 2 ds]
    while True:
        f = _fake(r, rs, rl, max(target, FAKE_FLOOR * ds), tol / 3, pair)
        fakes.append(f)
        if f.shadow_diam <= 2 * ds:
            break
        target = f.shadow_diam / 2
    ilo, ilen = convert_arcs(r.me, r.mi, np.array([f.lo for f in fakes]), np.array([f.length for f in fakes]))
    ids, _ = associate(r.wi, r.mi, ilo, ilen, r.interior)
    for f, i in zip(fakes, ids):
        f.square = int(i)
    # listed from the small end to the large end, then oriented as requested
    seq = [t2 if swap else t1] + [f.square for f in fakes[::-1]] + [t1 if swap else t2]
    fk = fakes[::-1]
    if swap:
        seq, fk = seq[::-1], fk[::-1]
    return seq, fk


def _fake(r, rs, rl, target, tol, pair) -> FakeSquare:
    lo_t, hi_t = 0.0, max(rl[2], rl[3]) + max(rs[2], rs[3])
    best = None
    for _ in range(48):
        t = (lo_t + hi_t) / 2
        rect = _grow(rs, rl, t)
        slo, slen, sd = _union_shadow(r.me, [rs, rect])
        if best is None or abs(sd - target) < abs(best[3] - target):
            best = (rect, slo, slen, sd)
        if abs(sd - target) <= tol * target:
            break
        if sd < target:
            lo_t = t
        else:
            hi_t = t
    rect, slo, slen, sd = best
    if abs(sd - target) > tol * target:
        raise ChainError(f"fake square for pair {pair} missed its target {target:.4g} (got {sd:.4g})")
    return FakeSquare((rs, rect), float(target), float(sd), slo, slen)


def build_all_chains(r: ReflectionAssignment) -> dict[tuple[int, int], Chain]:
    eligible = set(int(i) for i in r.ext_ids)
    for a, b in r.we.neighbor_pairs():
        if int(a) in eligible and int(b) in eligible:
            build_chain(int(a), int(b), r)
    return r.chains


# -- sum estimates ------------------------------------------------------------------

@dataclass
class SumReport:
    s: float
    family_ratio: dict[int, float]
    max_ratio: float
    strong_ratio: dict[int, float]
    max_strong: float

    def to_dict(self) -> dict:
        return {"s": self.s, "max_ratio": self.max_ratio, "max_strong": self.max_strong,
                "families": {str(k): v for k, v in self.family_ratio.items()},
                "strong": {str(k): v for k, v in self.strong_ratio.items()}}


def verify_sum_estimate(r: ReflectionAssignment, s: float, strong: bool = False) -> SumReport:
    """Ratios ``sum l(Q~)^(2-s) / l(Q)^(2-s)`` per family, and per chain index set when ``strong``."""
    if not 1 < s < 2:
        raise ValueError("s must lie in (1, 2)")
    e = 2 - s
    le, li = r.we.side_length, r.wi.side_length
    fam = {t: float(sum(le[j] ** e for j in js) / li[t] ** e) for t, js in r.families.items()}
    strong_ratio: dict[int, float] = {}
    if strong:
        chains = build_all_chains(r)
        members: dict[int, set[int]] = defaultdict(set)
        for (a, b), ch in chains.items():
            for q in ch.interior:
                members[q].add(a)
                members[q].add(b)
        strong_ratio = {m: float(sum(le[i] ** e for i in idx) / li[m] ** e) for m, idx in sorted(members.items())}
    return SumReport(s, fam, max(fam.values()), strong_ratio, max(strong_ratio.values(), default=0.0))
