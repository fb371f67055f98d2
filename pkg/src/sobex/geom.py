"""Planar domains: boundary distance, containment, inversion and diameters.

Points are complex numbers throughout the package (``x + 1j*y``).  Every
public function also accepts ``(x, y)`` pairs or ``(..., 2)`` float arrays.
"""

from __future__ import annotations

import enum
import json
import math
from itertools import chain
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

KINDS = ("disk", "polygon", "slit_disk", "power_cusp", "annulus")


class DomainError(ValueError):
    """Invalid domain description."""


class RegionTag(enum.IntEnum):
    INTERIOR = 0
    EXTERIOR = 1
    BOUNDARY = 2


def as_complex(p) -> np.ndarray | complex:
    """Coerce a point or an array of points to complex form."""
    if isinstance(p, (complex, float, int, np.complexfloating, np.floating, np.integer)):
        return complex(p)
    if isinstance(p, tuple) and len(p) == 2 and all(np.isscalar(c) for c in p):
        return complex(float(p[0]), float(p[1]))
    arr = np.asarray(p)
    if np.iscomplexobj(arr):
        return arr.astype(complex)
    if arr.shape and arr.shape[-1] == 2:
        return arr[..., 0].astype(float) + 1j * arr[..., 1].astype(float)
    return arr.astype(complex)


def inversion(y, x: complex):
    """The inversion ``y -> x + (y - x)/|y - x|^2`` about the unit circle at ``x``."""
    y = as_complex(y)
    d = y - x
    return x + 1.0 / np.conj(d)


def segment_distance(p, a, b) -> np.ndarray:
    """Distances from points ``p`` (shape N) to segments ``[a, b]`` (shape M) -> (N, M)."""
    p = np.asarray(p, dtype=complex)[:, None]
    a = np.asarray(a, dtype=complex)[None, :]
    b = np.asarray(b, dtype=complex)[None, :]
    ab = b - a
    den = np.abs(ab) ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.real((p - a) * np.conj(ab)) / den
    t = np.where(den > 0, np.clip(t, 0.0, 1.0), 0.0)
    return np.abs(p - (a + t * ab))


def _pair_distance(z, a, b):
    ab = b - a
    den = np.abs(ab) ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(den > 0, np.clip(np.real((z - a) * np.conj(ab)) / den, 0.0, 1.0), 0.0)
    return np.abs(z - (a + t * ab))


def point_polyline_distance(z, a, b) -> np.ndarray:
    """Exact distance from points ``z`` to the nearest segment ``[a_j, b_j]``.

    The nearest segment midpoint bounds the distance by ``m``, so only segments
    whose midpoints lie within ``m`` plus the largest half-length can do better.
    """
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    if len(a) <= 32:
        out = np.empty(len(z))
        step = max(1, 2_000_000 // len(a))
        for s in range(0, len(z), step):
            out[s:s + step] = segment_distance(z[s:s + step], a, b).min(axis=1)
        return out
    mid = (a + b) / 2
    half = np.abs(b - a).max() / 2
    tree = cKDTree(np.c_[mid.real, mid.imag])
    xy = np.c_[z.real, z.imag]
    k = min(8, len(a))
    dk, ik = tree.query(xy, k)
    out = _pair_distance(z[:, None], a[ik], b[ik]).min(axis=1)
    # segments past the k-th midpoint are at least dk[:, -1] - half away
    rest = np.nonzero(out > dk[:, -1] - half)[0]
    if len(rest):
        lists = tree.query_ball_point(xy[rest], dk[rest, 0] + half)
        lens = np.fromiter(map(len, lists), int, len(lists))
        rows = np.repeat(rest, lens)
        cols = np.fromiter(chain.from_iterable(lists), int, int(lens.sum()))
        np.minimum.at(out, rows, _pair_distance(z[rows], a[cols], b[cols]))
    return out


@dataclass(frozen=True)
class DomainSpec:
    """A bounded simply connected planar domain (annulus only for capacity work).

    ``unbounded`` marks the image of an inversion: the domain is then the
    unbounded component cut out by the same boundary.
    """

    kind: str
    center: complex = 0j
    radius: float = 1.0
    vertices: tuple = ()
    depth: float = 0.0
    alpha: float = 2.0
    scale: float = 1.0
    inner_radius: float = 0.0
    boundary_tolerance: float | None = None
    unbounded: bool = False
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"field 'kind': unknown kind {self.kind!r}; expected one of {KINDS}")
        if not np.isfinite(self.center):
            raise DomainError("field 'center': must be finite")
        if self.kind in ("disk", "slit_disk", "annulus") and not self.radius > 0:
            raise DomainError("field 'radius': must be > 0")
        if self.kind == "slit_disk" and not (0 < self.depth < self.radius):
            raise DomainError("field 'depth': slit depth must lie in (0, radius)")
        if self.kind == "power_cusp":
            if not self.alpha > 1:
                raise DomainError("field 'alpha': cusp exponent must be > 1")
            if not self.scale > 0:
                raise DomainError("field 'scale': must be > 0")
        if self.kind == "annulus" and not (0 < self.inner_radius < self.radius):
            raise DomainError("field 'inner_radius': need 0 < inner_radius < radius")
        if self.kind == "polygon":
            _check_polygon(self.vertices, allow_cw=self.unbounded)
        if self.boundary_tolerance is not None and not self.boundary_tolerance >= 0:
            raise DomainError("field 'boundary_tolerance': must be >= 0")

    # -- constructors -------------------------------------------------------

    @classmethod
    def disk(cls, center=0j, radius: float = 1.0, **kw) -> DomainSpec:
        return cls("disk", center=complex(as_complex(center)), radius=float(radius), **kw)

    @classmethod
    def polygon(cls, vertices, **kw) -> DomainSpec:
        vs = tuple(complex(v) for v in np.atleast_1d(as_complex(vertices)))
        return cls("polygon", vertices=vs, **kw)

    @classmethod
    def slit_disk(cls, radius: float = 1.0, depth: float = 0.5, **kw) -> DomainSpec:
        return cls("slit_disk", radius=float(radius), depth=float(depth), **kw)

    @classmethod
    def power_cusp(cls, alpha: float = 2.0, scale: float = 1.0, **kw) -> DomainSpec:
        return cls("power_cusp", alpha=float(alpha), scale=float(scale), **kw)

    @classmethod
    def annulus(cls, inner_radius: float, radius: float, center=0j, **kw) -> DomainSpec:
        return cls("annulus", center=complex(as_complex(center)), radius=float(radius),
                   inner_radius=float(inner_radius), **kw)

    # -- derived geometry ---------------------------------------------------

    @property
    def tol(self) -> float:
        if self.boundary_tolerance is not None:
            return self.boundary_tolerance
        return 1e-9 * diameter(self)

    @property
    def is_jordan(self) -> bool:
        return self.kind in ("disk", "polygon", "power_cusp")

    @property
    def cusp_radius(self) -> float:
        return math.hypot(self.scale, self.scale ** self.alpha)

    @property
    def base_point(self) -> complex:
        """Distinguished interior point (centroid, centre, or a point on the cusp axis)."""
        if "base" in self._cache:
            return self._cache["base"]
        if self.kind == "polygon":
            v = np.array(self.vertices)
            w = np.roll(v, -1)
            cross = np.imag(np.conj(v) * w)
            area = cross.sum() / 2
            c = ((v + w) * cross).sum() / (6 * area)
            if not self.contains(c):
                # concave polygons: fall back to the deepest vertex of a coarse grid
                pts = _grid_points(self.bbox(), 64)
                pts = pts[self.contains(pts)]
                c = pts[np.argmax(distance_to_boundary(pts, self))]
            base = complex(c)
        elif self.kind == "power_cusp":
            base = complex(0.8 * self.scale, 0.0)
        else:
            base = complex(self.center)
        self._cache["base"] = base
        return base

    def bbox(self) -> tuple[float, float, float, float]:
        """(xmin, xmax, ymin, ymax) of the boundary."""
        pts = self.boundary_polyline()
        if self.kind in ("disk", "slit_disk", "annulus"):
            c, r = self.center, self.radius
            return (c.real - r, c.real + r, c.imag - r, c.imag + r)
        return (pts.real.min(), pts.real.max(), pts.imag.min(), pts.imag.max())

    def segments(self) -> tuple[np.ndarray, np.ndarray]:
        """Straight boundary pieces as endpoint arrays ``(a, b)``."""
        key = "segments"
        if key not in self._cache:
            if self.kind == "polygon":
                v = np.array(self.vertices, dtype=complex)
                self._cache[key] = (v, np.roll(v, -1))
            elif self.kind == "slit_disk":
                r = self.radius
                self._cache[key] = (np.array([self.center + r - self.depth]),
                                    np.array([self.center + r]))
            elif self.kind == "power_cusp":
                pts = _cusp_polyline(self.alpha, self.scale)
                self._cache[key] = (pts, np.roll(pts, -1))
            else:
                self._cache[key] = (np.zeros(0, complex), np.zeros(0, complex))
        return self._cache[key]

    def circles(self) -> list[tuple[complex, float]]:
        """Full circles contained in the boundary."""
        if self.kind in ("disk", "slit_disk"):
            return [(self.center, self.radius)]
        if self.kind == "annulus":
            return [(self.center, self.inner_radius), (self.center, self.radius)]
        return []

    def sag(self) -> float:
        """Upper bound on the gap between ``segments()`` and the true boundary."""
        if self.kind != "power_cusp":
            return 0.0
        a, b = self.segments()
        h = np.abs(b - a).max()
        # curvature of y = x^alpha is bounded by alpha*(alpha-1)*scale^(alpha-2) (alpha >= 2)
        kappa = self.alpha * (self.alpha - 1) * max(self.scale, 1.0) ** max(self.alpha - 2, 0)
        kappa = max(kappa, 1.0 / self.cusp_radius)
        return kappa * h * h / 8

    def boundary_polyline(self, n: int = 1024) -> np.ndarray:
        """Closed boundary sample (first point not repeated), CCW.

        For the slit disk the slit is traversed in and out (a doubled edge).
        For the annulus only the outer circle is returned.
        """
        if self.kind in ("disk", "annulus"):
            t = 2 * np.pi * np.arange(n) / n
            return self.center + self.radius * np.exp(1j * t)
        if self.kind == "polygon":
            return _resample_closed(np.array(self.vertices, dtype=complex), n)
        if self.kind == "slit_disk":
            r, h = self.radius, self.depth
            m = max(8, int(n * h / (2 * np.pi * r + 2 * h)))
            k = n - 2 * m
            t = 2 * np.pi * np.arange(1, k) / k
            circ = self.center + r * np.exp(1j * t)
            inward = self.center + r - h * np.arange(0, m + 1) / m
            # circle, then down the slit to its tip and back
            return np.concatenate([circ, inward, inward[-2:0:-1]])
        if self.kind == "power_cusp":
            a, _ = self.segments()
            return a.copy()
        raise AssertionError(self.kind)

    def contains(self, p) -> np.ndarray | bool:
        """Strict membership in the open domain (boundary band not applied)."""
        z = as_complex(p)
        scalar = np.isscalar(z)
        z = np.atleast_1d(z)
        if self.kind == "disk":
            inside = np.abs(z - self.center) < self.radius
        elif self.kind == "annulus":
            r = np.abs(z - self.center)
            inside = (r < self.radius) & (r > self.inner_radius)
        elif self.kind == "slit_disk":
            w = z - self.center
            on_slit = (w.imag == 0) & (w.real >= self.radius - self.depth) & (w.real <= self.radius)
            inside = (np.abs(w) < self.radius) & ~on_slit
        elif self.kind == "power_cusp":
            x, y = z.real, z.imag
            with np.errstate(invalid="ignore"):
                inside = (x > 0) & (np.abs(y) < np.where(x > 0, x, 0.0) ** self.alpha) & (
                    np.abs(z) < self.cusp_radius)
        else:
            inside = _point_in_polygon(z, np.array(self.vertices, dtype=complex))
        if self.unbounded:
            inside = ~inside
        return bool(inside[0]) if scalar else inside

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.kind in ("disk", "annulus"):
            d["center"] = [self.center.real, self.center.imag]
        if self.kind == "disk":
            d["radius"] = self.radius
        elif self.kind == "annulus":
            d["inner_radius"] = self.inner_radius
            d["outer_radius"] = self.radius
        elif self.kind == "polygon":
            d["vertices"] = [[v.real, v.imag] for v in self.vertices]
        elif self.kind == "slit_disk":
            d["radius"] = self.radius
            d["depth"] = self.depth
        elif self.kind == "power_cusp":
            d["alpha"] = self.alpha
            d["scale"] = self.scale
        if self.boundary_tolerance is not None:
            d["boundary_tolerance"] = self.boundary_tolerance
        return d


# -- common shapes -----------------------------------------------------------

def unit_disk() -> DomainSpec:
    return DomainSpec.disk(0j, 1.0)


def unit_square() -> DomainSpec:
    return DomainSpec.polygon([0, 1, 1 + 1j, 1j])


def l_shape() -> DomainSpec:
    return DomainSpec.polygon([0, 2, 2 + 1j, 1 + 1j, 1 + 2j, 2j])


# -- operations ----------------------------------------------------------------

def distance_to_boundary(p, d: DomainSpec):
    """Euclidean distance from point(s) ``p`` to the boundary of ``d``."""
    z = as_complex(p)
    scalar = np.isscalar(z)
    z = np.atleast_1d(z).ravel()
    out = np.full(z.shape, np.inf)
    for c, r in d.circles():
        out = np.minimum(out, np.abs(np.abs(z - c) - r))
    a, b = d.segments()
    if len(a):
        out = np.minimum(out, point_polyline_distance(z, a, b))
    return float(out[0]) if scalar else out.reshape(np.shape(as_complex(p)))


def classify(p, d: DomainSpec):
    """Interior / Exterior / Boundary tag of point(s) ``p``."""
    z = as_complex(p)
    dist = distance_to_boundary(z, d)
    inside = d.contains(z)
    if np.isscalar(dist):
        if dist <= d.tol:
            return RegionTag.BOUNDARY
        return RegionTag.INTERIOR if inside else RegionTag.EXTERIOR
    tags = np.where(inside, int(RegionTag.INTERIOR), int(RegionTag.EXTERIOR))
    return np.where(dist <= d.tol, int(RegionTag.BOUNDARY), tags)


def invert(d: DomainSpec, x, tol: float = 1e-4) -> DomainSpec:
    """Image of ``d`` under the inversion centred at ``x``.

    Circles map to circles exactly; polygonal boundaries are mapped vertex-wise
    and refined until each image chord is within ``tol`` of the image arc.
    """
    x = complex(as_complex(x))
    if d.unbounded:
        if d.contains(x) or distance_to_boundary(x, d) <= d.tol:
            raise DomainError("inversion centre must lie in the bounded complementary component")
    elif not d.contains(x):
        raise DomainError("inversion centre must be an interior point")
    if d.kind == "disk":
        c, r = d.center, d.radius
        s = abs(c - x) ** 2 - r * r
        if s == 0:
            raise DomainError("circle through the inversion centre")
        new_c = x + (c - x) / s
        return replace(d, center=complex(new_c), radius=float(r / abs(s)), unbounded=not d.unbounded,
                       boundary_tolerance=None)
    if d.kind not in ("polygon", "power_cusp"):
        raise DomainError(f"inversion of kind {d.kind!r} is not supported")
    a, b = d.segments()
    pieces = []
    for p0, p1 in zip(a, b):
        pieces.append(_refine_inverted_edge(p0, p1, x, tol))
    # arguments about x are preserved, so the image winds the same way around x
    img = np.concatenate(pieces)
    return DomainSpec("polygon", vertices=tuple(complex(v) for v in img), unbounded=not d.unbounded)


def diameter(d: DomainSpec) -> float:
    if d.kind in ("disk", "slit_disk", "annulus"):
        return 2.0 * d.radius
    if "diam" not in d._cache:
        if d.kind == "polygon":
            v = np.array(d.vertices, dtype=complex)
        else:
            v = d.boundary_polyline()
        if len(v) > 2000:
            from scipy.spatial import ConvexHull

            hull = ConvexHull(np.c_[v.real, v.imag])
            v = v[hull.vertices]
        d._cache["diam"] = float(np.abs(v[:, None] - v[None, :]).max())
    return d._cache["diam"]


# -- domain files --------------------------------------------------------------

def domain_from_dict(obj: dict) -> DomainSpec:
    """Build a domain from its JSON form; errors name the offending field."""
    if not isinstance(obj, dict):
        raise DomainError("domain document must be a JSON object")
    if "kind" not in obj:
        raise DomainError("field 'kind': missing")
    kind = obj["kind"]
    allowed = {
        "disk": {"center", "radius"},
        "polygon": {"vertices"},
        "slit_disk": {"radius", "depth"},
        "power_cusp": {"alpha", "scale"},
        "annulus": {"center", "inner_radius", "outer_radius"},
    }
    if kind not in allowed:
        raise DomainError(f"field 'kind': unknown kind {kind!r}")
    for key in obj:
        if key not in allowed[kind] | {"kind", "boundary_tolerance"}:
            raise DomainError(f"field {key!r}: not allowed for kind {kind!r}")

    def num(key, default=None):
        if key not in obj:
            if default is None:
                raise DomainError(f"field {key!r}: missing")
            return default
        v = obj[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise DomainError(f"field {key!r}: expected a finite number, got {v!r}")
        return float(v)

    def point(key, default=None):
        if key not in obj:
            return default
        v = obj[key]
        if (not isinstance(v, (list, tuple)) or len(v) != 2
                or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in v)):
            raise DomainError(f"field {key!r}: expected [x, y], got {v!r}")
        return complex(v[0], v[1])

    kw = {}
    if "boundary_tolerance" in obj:
        kw["boundary_tolerance"] = num("boundary_tolerance")
    if kind == "disk":
        return DomainSpec.disk(point("center", 0j), num("radius"), **kw)
    if kind == "polygon":
        vs = obj.get("vertices")
        if not isinstance(vs, list) or len(vs) < 3:
            raise DomainError("field 'vertices': expected a list of at least 3 [x, y] pairs")
        pts = []
        for i, v in enumerate(vs):
            if (not isinstance(v, (list, tuple)) or len(v) != 2
                    or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in v)):
                raise DomainError(f"field 'vertices[{i}]': expected [x, y], got {v!r}")
            pts.append(complex(v[0], v[1]))
        return DomainSpec.polygon(pts, **kw)
    if kind == "slit_disk":
        return DomainSpec.slit_disk(num("radius"), num("depth"), **kw)
    if kind == "power_cusp":
        return DomainSpec.power_cusp(num("alpha"), num("scale"), **kw)
    return DomainSpec.annulus(num("inner_radius"), num("outer_radius"), point("center", 0j), **kw)


def load_domain(path) -> DomainSpec:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DomainError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    return domain_from_dict(obj)


def box_polyline_distance(x0, x1, y0, y1, a, b, group=32):
    """Exact distance from axis-aligned boxes to segments ``[a, b]``.

    Segments are grouped; a group is only examined for boxes whose distance to
    the group's bounding box does not exceed the best distance found so far.
    Points are boxes with ``x0 == x1`` and ``y0 == y1``.
    """
    x0, x1, y0, y1 = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (x0, x1, y0, y1))
    n, m = len(x0), len(a)
    if m > 2 * group and n > 50_000:
        return np.concatenate([
            box_polyline_distance(x0[s:s + 50_000], x1[s:s + 50_000], y0[s:s + 50_000],
                                  y1[s:s + 50_000], a, b, group)
            for s in range(0, n, 50_000)])
    if m <= 2 * group:
        out = np.empty(n)
        step = max(1, 4_000_000 // max(m, 1))
        for s in range(0, n, step):
            sl = slice(s, s + step)
            out[sl] = _box_seg_block(x0[sl], x1[sl], y0[sl], y1[sl], a, b)
        return out
    starts = np.arange(0, m, group)
    lo_x = np.minimum.reduceat(np.minimum(a.real, b.real), starts)
    hi_x = np.maximum.reduceat(np.maximum(a.real, b.real), starts)
    lo_y = np.minimum.reduceat(np.minimum(a.imag, b.imag), starts)
    hi_y = np.maximum.reduceat(np.maximum(a.imag, b.imag), starts)
    X0, X1, Y0, Y1 = (v[:, None] for v in (x0, x1, y0, y1))
    gx = np.maximum(np.maximum(lo_x - X1, X0 - hi_x), 0)
    gy = np.maximum(np.maximum(lo_y - Y1, Y0 - hi_y), 0)
    lower = np.hypot(gx, gy)
    # upper bound: box to the first vertex of each group
    v = a[starts]
    ux = np.maximum(np.maximum(v.real - X1, X0 - v.real), 0)
    uy = np.maximum(np.maximum(v.imag - Y1, Y0 - v.imag), 0)
    best = np.hypot(ux, uy).min(axis=1)
    for gi in np.argsort(lower.min(axis=0)):
        sel = np.nonzero(lower[:, gi] <= best)[0]
        if len(sel) == 0:
            continue
        s = slice(starts[gi], starts[gi] + group)
        best[sel] = np.minimum(best[sel], _box_seg_block(x0[sel], x1[sel], y0[sel], y1[sel], a[s], b[s]))
    return best


def _box_seg_block(x0, x1, y0, y1, a, b):
    X0, X1, Y0, Y1 = (v[:, None] for v in (x0, x1, y0, y1))
    hit = clip_segments(X0, X1, Y0, Y1, a[None, :], b[None, :])[0]
    # endpoints to box
    best = np.full(X0.shape[:1] + a.shape, np.inf)
    for p in (a, b):
        dx = np.maximum(np.maximum(X0 - p.real, p.real - X1), 0)
        dy = np.maximum(np.maximum(Y0 - p.imag, p.imag - Y1), 0)
        best = np.minimum(best, np.hypot(dx, dy))
    # box corners to segment
    ab = b - a
    den = np.abs(ab) ** 2
    for cx, cy in ((X0, Y0), (X1, Y0), (X0, Y1), (X1, Y1)):
        c = cx + 1j * cy
        with np.errstate(invalid="ignore", divide="ignore"):
            t = np.where(den > 0, np.clip(np.real((c - a) * np.conj(ab)) / den, 0, 1), 0.0)
        best = np.minimum(best, np.abs(c - (a + t * ab)))
    best[hit] = 0.0
    return best.min(axis=1)


def segments_meet_boundary(d: DomainSpec, p, q) -> np.ndarray:
    """True where the closed segment ``[p, q]`` touches the boundary of ``d``."""
    p = np.atleast_1d(as_complex(p)).astype(complex)
    q = np.atleast_1d(as_complex(q)).astype(complex)
    p, q = np.broadcast_arrays(p, q)
    out = np.zeros(p.shape, dtype=bool)
    for c, r in d.circles():
        dmin = segment_distance(np.array([c]), p, q)[0] if len(p) else np.zeros(0)
        dmax = np.maximum(np.abs(p - c), np.abs(q - c))
        out |= (dmin <= r) & (dmax >= r)
    a, b = d.segments()
    if len(a):
        step = max(1, 2_000_000 // len(a))
        for s in range(0, len(p), step):
            out[s:s + step] |= _segments_cross(p[s:s + step], q[s:s + step], a, b)
    return out


def _segments_cross(p, q, a, b):
    P, Q = p[:, None], q[:, None]

    def orient(u, v, w):
        return np.imag(np.conj(v - u) * (w - u))

    o1, o2 = orient(P, Q, a), orient(P, Q, b)
    o3, o4 = orient(a, b, P), orient(a, b, Q)
    proper = (o1 * o2 <= 0) & (o3 * o4 <= 0)
    # exclude collinear non-overlapping pairs
    colin = (o1 == 0) & (o2 == 0)
    if colin.any():
        lo_x = np.maximum(np.minimum(P.real, Q.real), np.minimum(a.real, b.real))
        hi_x = np.minimum(np.maximum(P.real, Q.real), np.maximum(a.real, b.real))
        lo_y = np.maximum(np.minimum(P.imag, Q.imag), np.minimum(a.imag, b.imag))
        hi_y = np.minimum(np.maximum(P.imag, Q.imag), np.maximum(a.imag, b.imag))
        overlap = (lo_x <= hi_x) & (lo_y <= hi_y)
        proper = np.where(colin, overlap, proper)
    return proper.any(axis=1)


def clip_segments(X0, X1, Y0, Y1, a, b):
    """Liang-Barsky: (intersects, t_in, t_out) for segments a->b against boxes."""
    d = b - a
    t0 = np.zeros(np.broadcast_shapes(X0.shape, a.shape))
    t1 = np.ones_like(t0)
    ok = np.ones(t0.shape, dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        for pk, qk in ((-d.real, a.real - X0), (d.real, X1 - a.real),
                       (-d.imag, a.imag - Y0), (d.imag, Y1 - a.imag)):
            pk = np.broadcast_to(pk, t0.shape)
            qk = np.broadcast_to(qk, t0.shape)
            par = pk == 0
            ok &= ~(par & (qk < 0))
            r = qk / np.where(par, 1.0, pk)
            t0 = np.where(~par & (pk < 0), np.maximum(t0, r), t0)
            t1 = np.where(~par & (pk > 0), np.minimum(t1, r), t1)
    ok &= t0 <= t1
    return ok, t0, t1



# -- helpers -------------------------------------------------------------------

def _check_polygon(vertices, allow_cw=False):
    v = np.array(vertices, dtype=complex)
    if len(v) < 3:
        raise DomainError("field 'vertices': need at least 3 vertices")
    if not np.all(np.isfinite(v)):
        raise DomainError("field 'vertices': coordinates must be finite")
    w = np.roll(v, -1)
    area = np.imag(np.conj(v) * w).sum() / 2
    if area <= 0 and not allow_cw:
        raise DomainError("field 'vertices': polygon must be counter-clockwise with positive area")
    if np.any(np.abs(w - v) == 0):
        raise DomainError("field 'vertices': repeated vertex")
    if len(v) <= 400 and _has_self_intersection(v):
        raise DomainError("field 'vertices': polygon is not simple")


def _has_self_intersection(v: np.ndarray) -> bool:
    n = len(v)
    a, b = v, np.roll(v, -1)

    def orient(p, q, r):
        return np.sign(np.imag(np.conj(q - p) * (r - p)))

    i, j = np.triu_indices(n, k=2)
    keep = ~((i == 0) & (j == n - 1))
    i, j = i[keep], j[keep]
    o1 = orient(a[i], b[i], a[j])
    o2 = orient(a[i], b[i], b[j])
    o3 = orient(a[j], b[j], a[i])
    o4 = orient(a[j], b[j], b[i])
    return bool(np.any((o1 * o2 < 0) & (o3 * o4 < 0)))


def _point_in_polygon(z: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Even-odd rule, vectorised over points."""
    inside = np.zeros(z.shape, dtype=bool)
    x, y = z.real, z.imag
    w = np.roll(v, -1)
    for p, q in zip(v, w):
        cond = (p.imag > y) != (q.imag > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xc = p.real + (y - p.imag) * (q.real - p.real) / (q.imag - p.imag)
        inside ^= cond & (x < xc)
    return inside


def _cusp_polyline(alpha: float, scale: float, n: int = 1024) -> np.ndarray:
    """CCW boundary: tip, lower curve, outer arc, upper curve back towards the tip."""
    s = scale * (np.arange(n + 1) / n) ** 1.5
    upper = s + 1j * s ** alpha
    rho = math.hypot(scale, scale ** alpha)
    th0 = math.atan2(scale ** alpha, scale)
    m = max(16, int(n * rho * th0 / scale))
    arc = rho * np.exp(1j * np.linspace(-th0, th0, m + 1))[1:-1]
    return np.concatenate([np.conj(upper), arc, upper[:0:-1]])


def _resample_closed(v: np.ndarray, n: int) -> np.ndarray:
    """Sample a closed polyline uniformly in arc length, keeping every vertex."""
    w = np.roll(v, -1)
    lens = np.abs(w - v)
    total = lens.sum()
    out = []
    for p, q, L in zip(v, w, lens):
        k = max(1, int(round(n * L / total)))
        t = np.arange(k) / k
        out.append(p + t * (q - p))
    return np.concatenate(out)


def _refine_inverted_edge(p0: complex, p1: complex, x: complex, tol: float, depth: int = 0) -> np.ndarray:
    """Image vertices (excluding the end) of edge [p0, p1] under the inversion at x."""
    q0, q1 = inversion(p0, x), inversion(p1, x)
    pm = (p0 + p1) / 2
    qm = inversion(pm, x)
    if depth >= 20 or abs(qm - (q0 + q1) / 2) <= tol:
        return np.array([q0])
    left = _refine_inverted_edge(p0, pm, x, tol, depth + 1)
    right = _refine_inverted_edge(pm, p1, x, tol, depth + 1)
    return np.concatenate([left, right])


def _grid_points(bbox, n):
    xs = np.linspace(bbox[0], bbox[1], n)
    ys = np.linspace(bbox[2], bbox[3], n)
    X, Y = np.meshgrid(xs, ys)
    return (X + 1j * Y).ravel()
