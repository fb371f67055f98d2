"""Conformal maps from the unit disk onto a domain, and from the exterior disk onto its complement.

Numeric maps use the geodesic zipper: each boundary point in turn is sent to
0 by an elementary slit map of the upper half-plane, so the map is the exact
Riemann map of a domain whose boundary passes through every sample point.
Both directions are explicit compositions, so evaluation and inversion agree
to rounding error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geom import DomainSpec, as_complex, diameter, inversion, segment_distance


class MapError(ValueError):
    pass


def _csqrt(z):
    return np.sqrt(np.asarray(z, dtype=complex))


class ConformalMap:
    """Base class: ``evaluate`` maps source -> image, ``inverse`` image -> source.

    Interior maps have source the unit disk and send 0 to ``base``; exterior
    maps have source ``|z| > 1`` and fix infinity.
    """

    kind = "abstract"
    side = "interior"
    base: complex = 0j

    def evaluate(self, z):
        raise NotImplementedError

    def inverse(self, w):
        raise NotImplementedError

    def __call__(self, z):
        return self.evaluate(z)[0]

    def _check_source(self, z):
        r = np.abs(z)
        bad = r >= 1 if self.side == "interior" else r <= 1
        if np.any(bad):
            raise MapError(f"point outside the source region of this {self.side} map")

    def boundary_point(self, theta):
        """Image of ``exp(i theta)`` on the boundary (via the correspondence table)."""
        ang, _, pts = self.table()
        th = np.mod(np.asarray(theta, dtype=float) - ang[0], 2 * np.pi) + ang[0]
        angx = np.append(ang, ang[0] + 2 * np.pi)
        ptsx = np.append(pts, pts[0])
        re = np.interp(th, angx, ptsx.real)
        im = np.interp(th, angx, ptsx.imag)
        return re + 1j * im

    def table(self):
        """Boundary correspondence (angle, arclength, boundary point), sorted by angle."""
        raise NotImplementedError

    def boundary_angle(self, w):
        """Source angle of boundary points ``w``, by projection onto the correspondence table."""
        ang, _, pts = self.table()
        a, b = pts, np.roll(pts, -1)
        ta, tb = ang, np.append(ang[1:], ang[0] + 2 * np.pi)
        w = np.atleast_1d(as_complex(w)).astype(complex)
        out = np.empty(len(w))
        for s in range(0, len(w), 256):
            ww = w[s:s + 256]
            dist = segment_distance(ww, a, b)
            k = np.argmin(dist, axis=1)
            ab = b[k] - a[k]
            t = np.clip(np.real((ww - a[k]) * np.conj(ab)) / np.maximum(np.abs(ab) ** 2, 1e-300), 0, 1)
            out[s:s + 256] = ta[k] + t * (tb[k] - ta[k])
        return np.mod(out, 2 * np.pi)

    def table_csv(self, path):
        ang, arc, _ = self.table()
        np.savetxt(path, np.c_[ang, arc], delimiter=",", header="angle,arclength", comments="")


# -- closed-form maps -----------------------------------------------------------

@dataclass
class AffineDiskMap(ConformalMap):
    """``z -> center + radius * z``; the identity for the unit disk."""

    center: complex = 0j
    radius: float = 1.0
    side: str = "interior"
    kind: str = field(default="identity_disk", init=False)
    n_table: int = 1024

    @property
    def base(self):
        return self.center

    def evaluate(self, z):
        z = as_complex(z)
        self._check_source(z)
        return self.center + self.radius * z, self.radius + 0 * z

    def inverse(self, w):
        return (as_complex(w) - self.center) / self.radius

    def table(self):
        ang = 2 * np.pi * np.arange(self.n_table) / self.n_table
        return ang, self.radius * ang, self.center + self.radius * np.exp(1j * ang)


@dataclass
class MoebiusMap(ConformalMap):
    """Disk automorphism ``exp(i theta) (z - a)/(1 - conj(a) z)``."""

    a: complex = 0j
    theta: float = 0.0
    kind: str = field(default="moebius", init=False)

    def __post_init__(self):
        if abs(self.a) >= 1:
            raise MapError("Moebius parameter must lie in the unit disk")

    @property
    def base(self):
        return complex(self.evaluate(0j)[0])

    def evaluate(self, z):
        z = as_complex(z)
        self._check_source(z)
        a, r = self.a, np.exp(1j * self.theta)
        den = 1 - np.conj(a) * z
        return r * (z - a) / den, r * (1 - abs(a) ** 2) / den ** 2

    def inverse(self, w):
        w = as_complex(w) * np.exp(-1j * self.theta)
        return (w + self.a) / (1 + np.conj(self.a) * w)

    def table(self):
        ang = 2 * np.pi * np.arange(1024) / 1024
        return ang, ang, self.evaluate((1 - 1e-15) * np.exp(1j * ang))[0]


@dataclass
class PowerSectorMap(ConformalMap):
    """``((1 + z)**alpha - 1)/alpha`` on the disk (a corner of opening alpha*pi at -1/alpha)."""

    alpha: float = 1.5
    kind: str = field(default="power_sector", init=False)

    def __post_init__(self):
        if not 0 < self.alpha <= 2:
            raise MapError("power_sector needs 0 < alpha <= 2")

    def evaluate(self, z):
        z = as_complex(z)
        self._check_source(z)
        s = (1 + z) ** self.alpha
        return (s - 1) / self.alpha, s / (1 + z)

    def inverse(self, w):
        return (1 + self.alpha * as_complex(w)) ** (1 / self.alpha) - 1

    def table(self):
        ang = np.linspace(-np.pi, np.pi, 2049)[1:-1]
        pts = self.evaluate((1 - 1e-12) * np.exp(1j * ang))[0]
        arc = np.concatenate([[0], np.cumsum(np.abs(np.diff(pts)))])
        return ang, arc, pts


# -- zipper ---------------------------------------------------------------------

class ZipperMap(ConformalMap):
    """Riemann map of the domain bounded by closed CCW sample points ``pts``.

    ``evaluate`` is the disk -> domain map with ``phi(0) = base`` and
    ``phi'(0) > 0``.
    """

    kind = "numeric_polygon"

    def __init__(self, pts, base):
        pts = np.asarray(pts, dtype=complex)
        if len(pts) < 4:
            raise MapError("need at least 4 boundary points")
        # opening along the longest chord keeps the intermediate images well scaled
        k = int(np.argmax(np.abs(np.roll(pts, -1) - pts)))
        pts = np.roll(pts, -k)
        self.pts = pts
        self.base = complex(base)
        self._build()

    def _build(self):
        p = self.pts
        z0, z1 = p[0], p[1]
        self.z0, self.z1 = z0, z1
        zeta = 1j * _csqrt((p[2:] - z1) / (p[2:] - z0))
        n = len(zeta)
        bs = np.empty(n)
        cs = np.empty(n)
        far = np.inf  # image of z0
        for k in range(n):
            a = zeta[k]
            if not a.imag > 0:
                raise MapError(f"zipper lost a boundary point at step {k}; refine the boundary")
            b = abs(a) ** 2 / a.real if a.real != 0 else np.inf
            c = abs(a) ** 2 / a.imag
            bs[k], cs[k] = b, c
            rest = zeta[k + 1:]
            u = rest if np.isinf(b) else rest * b / (b - rest)
            zeta[k + 1:] = u * _csqrt(1 + (c / u) ** 2)
            zeta[k] = 0
            if np.isinf(far):
                uf = np.inf if np.isinf(b) else -b
            else:
                uf = far if np.isinf(b) else far * b / (b - far)
            if not np.isinf(uf):
                far = float(np.real(uf * np.sqrt(1 + (c / uf) ** 2 + 0j)))
        if np.isinf(far):
            raise MapError("degenerate closing step")
        self.b, self.c, self.far = bs, cs, far
        self.sigma = 1.0
        self.a = 0j
        self.lam = 1.0 + 0j
        w = self._to_half_plane(np.array([self.base]))[0]
        self.sigma = 1.0 if w.real > 0 else -1.0
        w, dw = self._forward(np.array([self.base]), final=False)
        if not w[0].imag > 0:
            raise MapError("base point does not map into the upper half-plane")
        self.a = complex(w[0])
        _, dF = self._forward(np.array([self.base]))
        self.lam = np.conj(dF[0]) / abs(dF[0])
        self._table = None

    def _to_half_plane(self, z):
        """Steps up to and including the Moebius that sends the closing point to infinity."""
        z = np.asarray(z, dtype=complex)
        g = 1j * _csqrt((z - self.z1) / (z - self.z0))
        for b, c in zip(self.b, self.c):
            u = g if np.isinf(b) else g * b / (b - g)
            g = u * _csqrt(1 + (c / u) ** 2)
        return g / (1 - g / self.far)

    def _forward(self, z, final=True):
        """Domain -> disk (or -> upper half-plane when ``final`` is off), with derivative."""
        z = np.asarray(z, dtype=complex)
        R = (z - self.z1) / (z - self.z0)
        g = 1j * _csqrt(R)
        dg = -(self.z1 - self.z0) / (z - self.z0) ** 2 / (2 * g)
        for b, c in zip(self.b, self.c):
            if np.isinf(b):
                u, du = g, 1.0
            else:
                u = g * b / (b - g)
                du = b * b / (b - g) ** 2
            s = u * _csqrt(1 + (c / u) ** 2)
            dg = dg * du * u / s
            g = s
        m = 1 - g / self.far
        g, dg = g / m, dg / m ** 2
        w, dw = self.sigma * g * g, dg * 2 * self.sigma * g
        if not final:
            return w, dw
        a = self.a
        xi = self.lam * (w - a) / (w - np.conj(a))
        dxi = dw * self.lam * (a - np.conj(a)) / (w - np.conj(a)) ** 2
        return xi, dxi

    def _backward(self, xi):
        """Disk -> domain with derivative."""
        xi = np.asarray(xi, dtype=complex) / self.lam
        a = self.a
        w = (xi * np.conj(a) - a) / (xi - 1)
        d = (a - np.conj(a)) / (xi - 1) ** 2 / self.lam
        if self.sigma > 0:
            g = _csqrt(w)
        else:
            g = -_csqrt(-w)
        d = d / (2 * self.sigma * g)
        m = 1 + g / self.far
        g, d = g / m, d / m ** 2
        for b, c in zip(self.b[::-1], self.c[::-1]):
            u = g * _csqrt(1 - (c / g) ** 2)
            d = d * g / u
            if np.isinf(b):
                g = u
            else:
                m = 1 + u / b
                g, d = u / m, d / m ** 2
        s = -1j * g
        d = d * -1j
        s2 = s * s
        z = (self.z1 - s2 * self.z0) / (1 - s2)
        d = d * 2 * s * (self.z1 - self.z0) / (1 - s2) ** 2
        return z, d

    def evaluate(self, z):
        z = as_complex(z)
        scalar = np.ndim(z) == 0
        z = np.atleast_1d(z)
        self._check_source(z)
        w, dw = self._backward(z)
        return (complex(w[0]), complex(dw[0])) if scalar else (w, dw)

    def inverse(self, w, polish: bool = True):
        w = as_complex(w)
        scalar = np.ndim(w) == 0
        w = np.atleast_1d(w)
        z, _ = self._forward(w)
        if np.any(~(np.abs(z) < 1)):
            raise MapError("point outside the image domain")
        if polish:
            # Newton on phi(z) = w cleans up rounding in the forward chain
            for _ in range(2):
                inside = np.abs(z) < 1
                if not inside.any():
                    break
                f, df = self._backward(z[inside])
                z[inside] = z[inside] - (f - w[inside]) / df
        return complex(z[0]) if scalar else z

    def table(self):
        if self._table is None:
            p = self.pts
            # each sample sits on a slit foot at some stage; nudge it inwards
            e1, e2 = p - np.roll(p, 1), np.roll(p, -1) - p
            nrm = 1j * (e1 + e2)
            eps = 1e-3 * np.minimum(np.abs(e1), np.abs(e2))
            xi, _ = self._forward(p + eps * nrm / np.abs(nrm))
            # p[0] is the closing point, sent to infinity before the last Moebius step
            xi[0] = self.lam
            ang = np.mod(np.angle(xi), 2 * np.pi)
            k = int(np.argmin(ang))
            ang, p = np.roll(ang, -k), np.roll(p, -k)
            ang = ang[0] + np.concatenate([[0], np.cumsum(np.mod(np.diff(ang), 2 * np.pi))])
            arc = np.concatenate([[0], np.cumsum(np.abs(np.diff(p)))])
            self._table = (ang, arc, p)
        return self._table


class ExteriorMap(ConformalMap):
    """``phi~(z) = i_x(psi(1/conj z))`` for an interior map ``psi`` of the inverted complement."""

    kind = "exterior_composed"
    side = "exterior"

    def __init__(self, inner: ConformalMap, x: complex):
        self.inner = inner
        self.x = complex(x)
        self.base = complex("inf")

    def evaluate(self, z):
        z = as_complex(z)
        scalar = np.ndim(z) == 0
        z = np.atleast_1d(z)
        self._check_source(z)
        u = 1 / np.conj(z)
        v, dv = self.inner.evaluate(u)
        w = inversion(v, self.x)
        dw = np.conj(dv) / (z * z * np.conj(v - self.x) ** 2)
        return (complex(w[0]), complex(dw[0])) if scalar else (w, dw)

    def inverse(self, w):
        w = as_complex(w)
        scalar = np.ndim(w) == 0
        w = np.atleast_1d(w)
        v = inversion(w, self.x)
        u = np.atleast_1d(self.inner.inverse(v))
        z = 1 / np.conj(u)
        z[np.abs(u) == 0] = np.inf
        return complex(z[0]) if scalar else z

    def table(self):
        ang, _, pts = self.inner.table()
        img = inversion(pts, self.x)
        order = np.argsort(ang, kind="stable")
        img = img[order]
        arc = np.concatenate([[0], np.cumsum(np.abs(np.diff(img)))])
        return ang[order], arc, img


# -- builders ---------------------------------------------------------------------

def graded_polygon_points(vertices, h: float, grade_levels: int = 10) -> np.ndarray:
    """Boundary samples with spacing ``h`` on edges and geometric clustering at vertices."""
    v = np.asarray(vertices, dtype=complex)
    out = []
    for p, q in zip(v, np.roll(v, -1)):
        L = abs(q - p)
        m = max(2, int(math.ceil(L / h)))
        t = list(np.arange(m) / m)
        fine = [h / L * 2.0 ** -k for k in range(1, grade_levels + 1)]
        fine = [f for f in fine if f < 1 / m]
        t = sorted(set(t + fine + [1 - f for f in fine]))
        out.append(p + np.array(t) * (q - p))
    return np.concatenate(out)


def build_polygon_map(poly: DomainSpec, side: str = "interior", tol: float = 1e-3) -> ConformalMap:
    """Numeric map for a domain (polygon, cusp, slit disk) or its exterior.

    Exterior maps invert the complement about the base point and map the
    inverted (bounded) domain.
    """
    if not 1e-8 < tol < 1e-2:
        raise MapError("tol must lie in (1e-8, 1e-2)")
    if side not in ("interior", "exterior"):
        raise MapError("side must be 'interior' or 'exterior'")
    if poly.kind == "disk" or (poly.kind == "slit_disk" and side == "exterior"):
        return AffineDiskMap(poly.center, poly.radius, side)
    diam = diameter(poly)
    h = diam * math.sqrt(tol) / 2
    x0 = poly.base_point
    if side == "interior":
        return ZipperMap(_samples(poly, h), x0)
    # boundary samples inverted pointwise keep their order around x0
    pts = inversion(_samples(poly, h), x0)
    inner = ZipperMap(pts, x0)
    return ExteriorMap(inner, x0)


def build_map(d: DomainSpec, side: str = "interior", tol: float = 1e-3) -> ConformalMap:
    return build_polygon_map(d, side, tol)


def cusp_cutoff(d: DomainSpec, crowding: float = 200.0) -> float:
    """Abscissa below which a power cusp is blunted before mapping.

    Harmonic measure of the tip beyond ``x`` decays like ``exp(-pi I(x))`` with
    ``I(x)`` the integral of ``1/(2 t**alpha)`` from ``x`` to the scale; the tip
    is cut where ``pi I`` reaches ``crowding``, far inside double range.
    """
    a, s = d.alpha, d.scale
    if a < 1:
        return 0.0
    if a == 1:
        return s * math.exp(-2 * crowding / math.pi)
    return (s ** (1 - a) + 2 * (a - 1) * crowding / math.pi) ** (1 / (1 - a))


def _samples(d: DomainSpec, h: float) -> np.ndarray:
    if d.kind == "polygon":
        return graded_polygon_points(d.vertices, h)
    if d.kind in ("power_cusp", "slit_disk"):
        n = int(max(256, 4 * sum(np.abs(np.diff(d.boundary_polyline(4096)))) / h))
        pts = d.boundary_polyline(min(n, 8192))
        if d.kind == "power_cusp":
            pts = pts[pts.real >= cusp_cutoff(d)]
        return pts
    raise MapError(f"no numeric map for kind {d.kind!r}")


# -- hyperbolic geometry --------------------------------------------------------------

def hyperbolic_distance_disk(z1, z2):
    z1, z2 = as_complex(z1), as_complex(z2)
    if np.any(np.abs(z1) >= 1) or np.any(np.abs(z2) >= 1):
        raise MapError("points must lie in the open unit disk")
    r = np.abs((z1 - z2) / (1 - np.conj(z1) * z2))
    return 2 * np.arctanh(r)


@dataclass
class Ray:
    angle: float


@dataclass
class Geodesic:
    w1: complex
    w2: complex


@dataclass
class HyperbolicArc:
    kind: str
    samples: np.ndarray
    source_samples: np.ndarray


def hyperbolic_arc(m: ConformalMap, spec, tol: float = 0.25, max_points: int = 20000) -> HyperbolicArc:
    """Sample a ray or geodesic so that image steps stay below ``tol`` times the local scale.

    The local scale at a source point ``z`` is ``|phi'(z)| (1 - |z|^2)/4`` for
    interior maps, comparable to the boundary distance of the image point by
    the Koebe theorem; exterior maps use ``|phi'(z)| (|z|^2 - 1)/(4|z|)``.
    """
    if isinstance(spec, Ray):
        u = np.exp(1j * spec.angle)
        if m.side == "interior":
            param = lambda t: t * u                      # noqa: E731
            t0, t1 = 0.0, 1 - 1e-6
        else:
            param = lambda t: u / t                      # noqa: E731
            t0, t1 = 1e-3, 1 - 1e-6
        kind = "ray"
    elif isinstance(spec, Geodesic):
        if m.side != "interior":
            raise MapError("geodesics are supported for interior maps")
        a = complex(np.atleast_1d(m.inverse(complex(spec.w1)))[0])
        b = complex(np.atleast_1d(m.inverse(complex(spec.w2)))[0])
        eta = (b - a) / (1 - np.conj(a) * b)
        param = lambda t: (t * eta + a) / (1 + np.conj(a) * t * eta)   # noqa: E731
        t0, t1 = 0.0, 1.0
        kind = "geodesic"
    else:
        raise TypeError("spec must be Ray or Geodesic")
    t = np.linspace(t0, t1, 17)
    if kind == "ray":
        # rays run into the circle, so seed a geometric grading towards t1
        t = np.unique(np.concatenate([t, t1 - np.logspace(-1, -6, 30) * (t1 - t0)]))
    for _ in range(40):
        z = param(t)
        w, dw = m.evaluate(z)
        r = np.abs(z)
        scale = np.abs(dw) * np.abs(1 - r * r) / (4 * np.maximum(r, 1))
        step = np.abs(np.diff(w))
        bad = step > tol * np.minimum(scale[:-1], scale[1:])
        if not bad.any() or len(t) > max_points:
            break
        t = np.sort(np.concatenate([t, (t[:-1][bad] + t[1:][bad]) / 2]))
    z = param(t)
    w = m.evaluate(z)[0]
    return HyperbolicArc(kind, w, z)
