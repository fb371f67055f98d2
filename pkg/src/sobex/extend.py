"""Grid functions, Sobolev norms and the extension / test-function constructions.

Grids are cell-centred: cell ``(i, j)`` has centre ``origin + h (j + 1/2) + 1j h (i + 1/2)``
(column ``j`` along x, row ``i`` along y).  Values are NaN where a function is
not defined.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import chain

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from .capacity import polyline_distance
from .conformal import ConformalMap, build_map
from .geom import (DomainSpec, RegionTag, as_complex, classify, diameter, distance_to_boundary,
                   segments_meet_boundary)
from .reflect import (ReflectionAssignment, associate, build_all_chains, build_reflection, convert_arcs, rect_samples,
                      source_arcs)
from .whitney import Side, decompose


class ResolutionError(ValueError):
    pass


# -- grid functions ----------------------------------------------------------------

@dataclass
class GridFunction:
    origin: complex
    h: float
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("grid spacing must be positive")
        self.values = np.asarray(self.values, dtype=float)
        self.mask = np.asarray(self.mask, dtype=np.int8)
        if self.values.shape != self.mask.shape:
            raise ValueError("values and mask shapes differ")

    @property
    def ny(self) -> int:
        return self.values.shape[0]

    @property
    def nx(self) -> int:
        return self.values.shape[1]

    def points(self) -> np.ndarray:
        xs = self.origin.real + (np.arange(self.nx) + 0.5) * self.h
        ys = self.origin.imag + (np.arange(self.ny) + 0.5) * self.h
        return xs[None, :] + 1j * ys[:, None]

    @property
    def defined(self) -> np.ndarray:
        return np.isfinite(self.values)

    def replace(self, values) -> GridFunction:
        return GridFunction(self.origin, self.h, values, self.mask.copy())

    def header(self) -> dict:
        return {"origin": [self.origin.real, self.origin.imag], "h": self.h, "nx": self.nx, "ny": self.ny}

    def save(self, prefix: str):
        """Write ``prefix.json`` (header) and ``prefix.csv`` (x, y, value, mask)."""
        with open(prefix + ".json", "w") as fh:
            json.dump(self.header(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        z = self.points().ravel()
        v = self.values.ravel()
        m = self.mask.ravel()
        with open(prefix + ".csv", "w") as fh:
            fh.write("x,y,value,mask\n")
            for a, b, c, k in zip(z.real, z.imag, v, m):
                fh.write(f"{a!r},{b!r},{'nan' if not np.isfinite(c) else repr(float(c))},{int(k)}\n")

    @classmethod
    def load(cls, prefix: str) -> GridFunction:
        with open(prefix + ".json") as fh:
            hd = json.load(fh)
        data = np.genfromtxt(prefix + ".csv", delimiter=",", names=True)
        shape = (int(hd["ny"]), int(hd["nx"]))
        return cls(complex(*hd["origin"]), float(hd["h"]), data["value"].reshape(shape),
                   data["mask"].astype(np.int8).reshape(shape))


def make_grid(box, h: float, d: DomainSpec) -> GridFunction:
    """Empty grid aligned to multiples of ``h`` covering ``box = (x0, x1, y0, y1)``."""
    x0, x1, y0, y1 = box
    i0, j0 = math.floor(x0 / h), math.floor(y0 / h)
    nx, ny = math.ceil(x1 / h) - i0, math.ceil(y1 / h) - j0
    g = GridFunction(complex(i0 * h, j0 * h), h, np.full((ny, nx), np.nan), np.zeros((ny, nx), np.int8))
    g.mask = np.asarray(classify(g.points().ravel(), d), dtype=np.int8).reshape(ny, nx)
    return g


def ball_box(d: DomainSpec, factor: float = 1.5):
    c, r = d.base_point, factor * diameter(d)
    return c.real - r, c.real + r, c.imag - r, c.imag + r


# -- test families ------------------------------------------------------------------

FAMILIES = ("const", "x", "y", "re_z2", "abs_pow", "trig", "ramp")


def parse_family(spec: str):
    """Named test function, e.g. ``x``, ``re_z2``, ``abs_pow:a=0.6,z0=0.3+0.1j``, ``ramp:w=0.1``.

    ``abs_pow`` is ``|z - z0|^a`` (default ``a = 0.5``, ``z0 = 0``); its
    gradient lies in ``L^p`` near ``z0`` exactly when ``p < 2/(1 - a)``.
    ``ramp`` is the Heaviside step at ``x = x0`` smoothed linearly over width ``w``.
    """
    name, _, args = spec.strip().partition(":")
    name = {"1": "const", "Re(z^2)": "re_z2", "rez2": "re_z2"}.get(name, name)
    kw = {}
    for item in filter(None, args.split(",")):
        k, _, v = item.partition("=")
        kw[k.strip()] = complex(v.strip().replace(" ", "")) if k.strip() == "z0" else float(v)
    if name == "const":
        c = kw.get("c", 1.0)
        return lambda z: np.full(np.shape(z), c)
    if name == "x":
        return lambda z: np.real(z).astype(float)
    if name == "y":
        return lambda z: np.imag(z).astype(float)
    if name == "re_z2":
        return lambda z: np.real(np.asarray(z) ** 2)
    if name == "abs_pow":
        a, z0 = kw.get("a", 0.5), kw.get("z0", 0j)
        return lambda z: np.abs(np.asarray(z) - z0) ** a
    if name == "trig":
        k = kw.get("k", 2.0)
        return lambda z: np.sin(k * np.real(z)) * np.cos(k * np.imag(z))
    if name == "ramp":
        w, x0 = kw.get("w", 0.1), kw.get("x0", 0.5)
        return lambda z: np.clip((np.real(z) - x0) / w + 0.5, 0.0, 1.0)
    raise ValueError(f"unknown test family {spec!r}; known: {', '.join(FAMILIES)}")


def sample(d: DomainSpec, family: str, h: float, box=None) -> GridFunction:
    """Evaluate a named family on the closed-domain cells of a grid over ``box`` (default: domain bbox)."""
    if not h > 0:
        raise ValueError("h must be positive")
    f = parse_family(family)
    g = make_grid(box or d.bbox(), h, d)
    inside = g.mask != RegionTag.EXTERIOR
    g.values[inside] = f(g.points()[inside])
    return g


# -- norms ------------------------------------------------------------------------------

@dataclass
class NormReport:
    p: float
    seminorm: float
    full_norm: float
    h: float
    region: str
    integral: float = 0.0

    def to_dict(self) -> dict:
        return {"p": self.p, "seminorm": self.seminorm, "full_norm": self.full_norm, "h": self.h,
                "region": self.region, "integral": self.integral}


def _region_mask(u: GridFunction, region) -> np.ndarray:
    ok = u.defined
    if region in (None, "all"):
        return ok
    tags = {"interior": (RegionTag.INTERIOR, RegionTag.BOUNDARY), "exterior": (RegionTag.EXTERIOR,)}
    if isinstance(region, str):
        allowed = tags[region]
    else:
        allowed = (RegionTag(region),)
    return ok & np.isin(u.mask, allowed)


def gradient(u: GridFunction, sel: np.ndarray):
    """Finite-difference gradient on ``sel``: central where possible, one-sided at its edges."""
    v = np.where(sel, u.values, 0.0)
    out = []
    for axis in (1, 0):
        fwd = np.zeros_like(sel)
        bwd = np.zeros_like(sel)
        sl = [slice(None)] * 2
        sl2 = [slice(None)] * 2
        sl[axis], sl2[axis] = slice(0, -1), slice(1, None)
        fwd[tuple(sl)] = sel[tuple(sl)] & sel[tuple(sl2)]
        bwd[tuple(sl2)] = sel[tuple(sl)] & sel[tuple(sl2)]
        vp = np.roll(v, -1, axis=axis)
        vm = np.roll(v, 1, axis=axis)
        g = np.zeros_like(v)
        both = fwd & bwd
        g[both] = (vp[both] - vm[both]) / (2 * u.h)
        only_f = fwd & ~bwd
        g[only_f] = (vp[only_f] - v[only_f]) / u.h
        only_b = bwd & ~fwd
        g[only_b] = (v[only_b] - vm[only_b]) / u.h
        out.append(np.where(sel, g, 0.0))
    return out[0], out[1]


def sobolev_seminorm(u: GridFunction, p: float, region=None) -> NormReport:
    """``||grad u||_p`` and ``||u||_{W^{1,p}}`` over the region's defined cells (midpoint rule)."""
    if not 1 < p < math.inf:
        raise ValueError("p must lie in (1, inf)")
    sel = _region_mask(u, region)
    if not sel.any():
        raise ValueError("region is empty")
    gx, gy = gradient(u, sel)
    area = u.h * u.h
    gi = float(np.sum(np.hypot(gx, gy)[sel] ** p) * area)
    vi = float(np.sum(np.abs(u.values[sel]) ** p) * area)
    name = region if isinstance(region, str) or region is None else RegionTag(region).name.lower()
    return NormReport(p, gi ** (1 / p), (gi + vi) ** (1 / p), u.h, name or "all", gi)


# -- partition of unity ------------------------------------------------------------------

MARGIN = 0.05


def _bump(t, margin: float = MARGIN):
    """1 on [margin, 1 - margin], 0 outside [-margin, 1 + margin], smoothstep between; with derivative."""
    def ss(x):
        x = np.clip(x, 0.0, 1.0)
        return x * x * (3 - 2 * x), 6 * x * (1 - x)
    a, da = ss((t + margin) / (2 * margin))
    b, db = ss((1 + margin - t) / (2 * margin))
    return a * b, (da * b - a * db) / (2 * margin)


@dataclass
class PartitionOfUnity:
    """Tensor smoothstep bumps on ``1.1 Q`` for squares ``(corner, side)``, normalised by their sum on a grid."""

    corners: np.ndarray
    sides: np.ndarray
    origin: complex
    h: float
    shape: tuple[int, int]
    target: np.ndarray
    total: np.ndarray = field(init=False)
    total_x: np.ndarray = field(init=False)
    total_y: np.ndarray = field(init=False)
    overlap: int = field(init=False, default=0)
    kappa: float = field(init=False, default=0.0)

    def __post_init__(self):
        self.total = np.zeros(self.shape)
        self.total_x = np.zeros(self.shape)
        self.total_y = np.zeros(self.shape)
        count = np.zeros(self.shape, np.int32)
        for k, (psi, px, py, sl) in enumerate(self._patches()):
            self.total[sl] += psi
            self.total_x[sl] += px
            self.total_y[sl] += py
            count[sl] += psi > 0
        self.overlap = int(count[self.target].max(initial=0))

    def _patches(self):
        ny, nx = self.shape
        ox, oy, h = self.origin.real, self.origin.imag, self.h
        for c, l in zip(self.corners, self.sides):
            x0, x1 = c.real - MARGIN * l, c.real + (1 + MARGIN) * l
            y0, y1 = c.imag - MARGIN * l, c.imag + (1 + MARGIN) * l
            j0 = max(0, math.ceil((x0 - ox) / h - 0.5))
            j1 = min(nx, math.floor((x1 - ox) / h - 0.5) + 1)
            i0 = max(0, math.ceil((y0 - oy) / h - 0.5))
            i1 = min(ny, math.floor((y1 - oy) / h - 0.5) + 1)
            if j0 >= j1 or i0 >= i1:
                yield np.zeros((0, 0)), np.zeros((0, 0)), np.zeros((0, 0)), (slice(0, 0), slice(0, 0))
                continue
            xs = ox + (np.arange(j0, j1) + 0.5) * h
            ys = oy + (np.arange(i0, i1) + 0.5) * h
            bx, dbx = _bump((xs - c.real) / l)
            by, dby = _bump((ys - c.imag) / l)
            yield (by[:, None] * bx[None, :], by[:, None] * dbx[None, :] / l, dby[:, None] * bx[None, :] / l,
                   (slice(i0, i1), slice(j0, j1)))

    @property
    def covered(self) -> np.ndarray:
        return self.target & (self.total > 0)

    def combine(self, coeffs):
        """``sum a_j phi_j`` and its analytic gradient on the grid (NaN where uncovered)."""
        num = np.zeros(self.shape)
        nx_ = np.zeros(self.shape)
        ny_ = np.zeros(self.shape)
        for a, (psi, px, py, sl) in zip(coeffs, self._patches()):
            num[sl] += a * psi
            nx_[sl] += a * px
            ny_[sl] += a * py
        with np.errstate(invalid="ignore", divide="ignore"):
            val = num / self.total
            gx = (nx_ - val * self.total_x) / self.total
            gy = (ny_ - val * self.total_y) / self.total
        bad = self.total <= 0
        for arr in (val, gx, gy):
            arr[bad] = np.nan
        return val, gx, gy

    def measure_kappa(self) -> float:
        """``max_j max |grad phi_j| * l_j`` over target cells."""
        best = 0.0
        for l, (psi, px, py, sl) in zip(self.sides, self._patches()):
            if psi.size == 0:
                continue
            t = self.total[sl]
            ok = self.target[sl] & (t > 0)
            if not ok.any():
                continue
            gx = (px * t - psi * self.total_x[sl]) / np.where(ok, t * t, 1.0)
            gy = (py * t - psi * self.total_y[sl]) / np.where(ok, t * t, 1.0)
            best = max(best, float(np.hypot(gx, gy)[ok].max() * l))
        self.kappa = best
        return best


# -- averages -------------------------------------------------------------------------------

def _cell_index(u: GridFunction, z):
    j = np.floor((np.real(z) - u.origin.real) / u.h).astype(np.int64)
    i = np.floor((np.imag(z) - u.origin.imag) / u.h).astype(np.int64)
    return i, j


def square_averages(u: GridFunction, corners, sides, usable=None) -> np.ndarray:
    """Mean of ``u`` over cells whose centres lie in each closed square; the nearest usable cell if none."""
    usable = u.defined if usable is None else usable
    vals = np.where(usable, u.values, 0.0)
    cs = np.concatenate([np.zeros((1, u.nx + 1)), np.cumsum(np.cumsum(np.pad(vals, ((0, 0), (1, 0))), 1), 0)])
    cn = np.concatenate([np.zeros((1, u.nx + 1)),
                         np.cumsum(np.cumsum(np.pad(usable.astype(float), ((0, 0), (1, 0))), 1), 0)])
    ox, oy, h = u.origin.real, u.origin.imag, u.h
    c = np.asarray(corners, dtype=complex)
    l = np.asarray(sides, dtype=float)
    j0 = np.clip(np.ceil((c.real - ox) / h - 0.5 - 1e-9), 0, u.nx).astype(np.int64)
    j1 = np.clip(np.floor((c.real + l - ox) / h - 0.5 + 1e-9) + 1, 0, u.nx).astype(np.int64)
    i0 = np.clip(np.ceil((c.imag - oy) / h - 0.5 - 1e-9), 0, u.ny).astype(np.int64)
    i1 = np.clip(np.floor((c.imag + l - oy) / h - 0.5 + 1e-9) + 1, 0, u.ny).astype(np.int64)
    j1, i1 = np.maximum(j1, j0), np.maximum(i1, i0)

    def box(t):
        return t[i1, j1] - t[i0, j1] - t[i1, j0] + t[i0, j0]

    s, n = box(cs), box(cn)
    out = np.full(len(c), np.nan)
    has = n > 0
    out[has] = s[has] / n[has]
    if (~has).any():
        pts = u.points()[usable]
        if len(pts) == 0:
            raise ResolutionError("no usable grid cells")
        tree = cKDTree(np.c_[pts.real, pts.imag])
        mid = c[~has] + 0.5 * (1 + 1j) * l[~has]
        dist, k = tree.query(np.c_[mid.real, mid.imag])
        if np.any(dist > 2 * np.maximum(l[~has], h)):
            raise ResolutionError("a target square has no grid cell nearby; refine h")
        out[~has] = u.values[usable][k]
    return out


# -- exterior extension --------------------------------------------------------------------

@dataclass
class Extension:
    values: GridFunction
    pou: PartitionOfUnity
    targets: np.ndarray
    coefficients: np.ndarray
    grad: tuple[np.ndarray, np.ndarray]
    info: dict


def _collar_cells(u: GridFunction, d: DomainSpec, pou_target, covered, me: ConformalMap):
    """Exterior cells in the ball that no Whitney bump reaches, as squares of side h."""
    z = u.points()[pou_target & ~covered]
    corners = z - 0.5 * (1 + 1j) * u.h
    # shadows from a shrunken copy that stays outside the domain
    s = np.minimum(u.h, 0.9 * distance_to_boundary(z, d) * math.sqrt(2))
    s = np.maximum(s, 1e-12)
    lo, length = source_arcs(me, rect_samples(z.real - s / 2, z.imag - s / 2, s, s))
    return corners, np.full(len(z), u.h), lo, length


@dataclass
class ExteriorPlan:
    """Bumps and their assigned interior squares on one grid, reusable across functions."""

    pou: PartitionOfUnity
    targets: np.ndarray
    collar_cells: int


def plan_exterior(u: GridFunction, d: DomainSpec, r: ReflectionAssignment) -> ExteriorPlan:
    """Exterior cells too close to the boundary for any Whitney bump become squares of side ``h``."""
    z = u.points()
    target = (u.mask == RegionTag.EXTERIOR) & (np.abs(z - d.base_point) <= 1.5 * diameter(d))
    corners = r.we.corner[r.ext_ids]
    sides = r.we.side_length[r.ext_ids]
    targets = r.targets.copy()
    pou = PartitionOfUnity(corners, sides, u.origin, u.h, u.values.shape, target)
    cov = pou.covered
    if not (target & ~cov).any():
        return ExteriorPlan(pou, targets, 0)
    cc, cl, lo, length = _collar_cells(u, d, target, cov, r.me)
    extra, _ = associate(r.wi, r.mi, *convert_arcs(r.me, r.mi, lo, length), r.interior)
    pou = PartitionOfUnity(np.concatenate([corners, cc]), np.concatenate([sides, cl]), u.origin, u.h,
                           u.values.shape, target)
    return ExteriorPlan(pou, np.concatenate([targets, extra]), len(cc))


def extend_exterior(u: GridFunction, d: DomainSpec, r: ReflectionAssignment,
                    plan: ExteriorPlan | None = None) -> Extension:
    """``Eu = u`` on the domain and ``sum a_Q phi_Q`` on exterior cells of ``B(x0, 1.5 diam)``.

    ``a_Q`` is the average of ``u`` over the interior square assigned to the
    exterior square ``Q``.
    """
    inside = u.mask != RegionTag.EXTERIOR
    if not u.defined[inside].all():
        raise ValueError("u must be defined on every domain cell")
    plan = plan or plan_exterior(u, d, r)
    pou = plan.pou
    if pou.shape != u.values.shape or pou.h != u.h or pou.origin != u.origin:
        raise ValueError("plan was built for a different grid")
    wi = r.wi
    a = square_averages(u, wi.corner[plan.targets], wi.side_length[plan.targets], u.defined & inside)
    val, gx, gy = pou.combine(a)
    out = np.full(u.values.shape, np.nan)
    out[inside] = u.values[inside]
    out[pou.target] = val[pou.target]
    raw = pou.total[pou.target]
    info = {"squares": int(len(a)), "collar_cells": plan.collar_cells, "max_overlap": pou.overlap,
            "uncovered": int((pou.target & ~(pou.total > 0)).sum()),
            "renormalized_cells": int(np.sum(np.abs(raw - 1) > 0.01))}
    return Extension(u.replace(out), pou, plan.targets, a, (gx, gy), info)


def exterior_setup(d: DomainSpec, h: float, depth: int | None = None, tol: float = 1e-4):
    """Decompositions, maps and assignment matched to grid spacing ``h``."""
    depth = depth or max(6, int(round(-math.log2(h))))
    wi = decompose(d, Side.INTERIOR, depth)
    we = decompose(d, Side.EXTERIOR, depth)
    return build_reflection(wi, we, build_map(d, "interior", tol), build_map(d, "exterior", tol))


def extension_ratio(d: DomainSpec, family: str, h: float, p: float = 1.5, r: ReflectionAssignment | None = None,
                    plan: ExteriorPlan | None = None):
    """``||Eu||_{W^{1,p}(B)} / ||u||_{W^{1,p}(domain)}`` for a named family."""
    r = r or exterior_setup(d, h)
    u = sample(d, family, h, box=ball_box(d))
    ext = extend_exterior(u, d, r, plan)
    num = sobolev_seminorm(ext.values, p)
    den = sobolev_seminorm(u, p, "interior")
    return num.full_norm / den.full_norm, ext, num, den


def _box_sums(u: GridFunction, vals, corners, sides) -> np.ndarray:
    """Sum of ``vals`` over the cells whose centres lie in each closed square."""
    cs = np.concatenate([np.zeros((1, u.nx + 1)), np.cumsum(np.cumsum(np.pad(vals, ((0, 0), (1, 0))), 1), 0)])
    ox, oy, h = u.origin.real, u.origin.imag, u.h
    c = np.asarray(corners, dtype=complex)
    l = np.asarray(sides, dtype=float)
    j0 = np.clip(np.ceil((c.real - ox) / h - 0.5 - 1e-9), 0, u.nx).astype(np.int64)
    j1 = np.clip(np.floor((c.real + l - ox) / h - 0.5 + 1e-9) + 1, 0, u.nx).astype(np.int64)
    i0 = np.clip(np.ceil((c.imag - oy) / h - 0.5 - 1e-9), 0, u.ny).astype(np.int64)
    i1 = np.clip(np.floor((c.imag + l - oy) / h - 0.5 + 1e-9) + 1, 0, u.ny).astype(np.int64)
    j1, i1 = np.maximum(j1, j0), np.maximum(i1, i0)
    return cs[i1, j1] - cs[i0, j1] - cs[i1, j0] + cs[i0, j0]


def chain_differences(u: GridFunction, r: ReflectionAssignment, chains=None, dilation: float = 3.0) -> np.ndarray:
    """``|a_Q1 - a_Q2| l(Q1) / sum_S int_{dilation S} |grad u|`` for neighbouring exterior squares.

    ``S`` runs over the interior squares of the chain joining the two targets;
    the integrals are summed, so overlapping dilates count more than once.
    Pairs whose chain carries no gradient mass are skipped.
    """
    chains = build_all_chains(r) if chains is None else chains
    inside = (u.mask != RegionTag.EXTERIOR) & u.defined
    gx, gy = gradient(u, inside)
    mass = np.where(inside, np.hypot(gx, gy), 0.0) * u.h * u.h
    wi = r.wi
    ids = sorted(chains)
    if not ids:
        return np.zeros(0)
    seqs = [chains[k].interior for k in ids]
    flat = np.fromiter(chain.from_iterable(seqs), np.int64)
    owner = np.repeat(np.arange(len(seqs)), [len(s) for s in seqs])
    l = wi.side_length[flat]
    corners = wi.corner[flat] - 0.5 * (dilation - 1) * l * (1 + 1j)
    local = np.bincount(owner, _box_sums(u, mass, corners, dilation * l), len(seqs))
    ends = np.array([(s[0], s[-1]) for s in seqs])
    avg = square_averages(u, wi.corner[ends.ravel()], wi.side_length[ends.ravel()], inside).reshape(-1, 2)
    side = r.we.side_length[[k[0] for k in ids]]
    ok = local > 0
    return np.abs(avg[ok, 0] - avg[ok, 1]) * side[ok] / local[ok]


# -- inner extension -------------------------------------------------------------------

def _levels(eps):
    # 2^-(k0+1) < eps <= 2^-k0
    return max(0, math.floor(-math.log2(eps)))


def inner_extend(u: GridFunction, eps: float, mi: ConformalMap, d: DomainSpec) -> GridFunction:
    """Extend ``u`` from ``phi(B(0, 1 - eps))`` to the domain.

    The annulus ``1 - eps <= |z| < 1`` is cut into sectors that are
    Whitney-type for the circle ``|z| = 1 - eps``: level ``k`` has
    ``|z| - (1 - eps) in [eps 2^-k-1, eps 2^-k]`` and ``2^(k + k0)`` angular
    pieces.  Each sector takes the average of ``u`` over the image of its
    mirror across that circle, and the sectors carry overlapping smoothstep
    hats in (level, angle) coordinates, so neighbouring averages blend over a
    whole sector rather than a thin seam.
    """
    if not 0 < eps < 0.5:
        raise ValueError("eps must lie in (0, 1/2)")
    k0 = _levels(eps)
    z = u.points()
    inside = u.mask != RegionTag.EXTERIOR
    pre = np.full(z.shape, np.nan + 0j)
    pre[inside] = mi.inverse(z[inside])
    rad = np.abs(pre)
    core = inside & (rad < 1 - eps)
    if not u.defined[core].all():
        raise ValueError("u must be defined on phi(B(0, 1 - eps))")
    shell = inside & ~core
    # averages over mirrored sectors: cells with 1 - 2 eps <= |z| < 1 - eps
    src = core & (rad >= 1 - 2 * eps)
    rho = (1 - eps) - rad[src]
    k = np.floor(np.log2(eps / np.maximum(rho, 1e-300))).astype(np.int64)
    th = np.mod(np.angle(pre[src]), 2 * np.pi)
    j = np.floor(th * 2.0 ** (k + k0) / (2 * np.pi)).astype(np.int64)
    table: dict[tuple[int, int], float] = {}
    vals = u.values[src]
    order = np.lexsort((j, k))
    ks, js, vs = k[order], j[order], vals[order]
    if len(ks):
        brk = np.nonzero(np.diff(ks) | np.diff(js))[0] + 1
        for a, b in zip(np.r_[0, brk], np.r_[brk, len(ks)]):
            table[(int(ks[a]), int(js[a]))] = float(vs[a:b].mean())
    core_pts = z[core]
    tree = cKDTree(np.c_[core_pts.real, core_pts.imag])
    core_vals = u.values[core]

    def coeff(kk, jj):
        key = (kk, jj % (2 ** (kk + k0)))
        if key not in table:
            n = 2 ** (kk + k0)
            rr = 1 - eps - eps * 0.75 * 2.0 ** -kk
            w = rr * np.exp(2j * np.pi * (key[1] + 0.5) / n)
            img = complex(np.atleast_1d(mi.evaluate(np.array([w]))[0])[0])
            _, idx = tree.query([img.real, img.imag])
            table[key] = float(core_vals[idx])
        return table[key]

    zs = pre[shell]
    s = np.log2(eps / np.maximum(np.abs(zs) - (1 - eps), 1e-300))
    ang = np.mod(np.angle(zs), 2 * np.pi)
    num = np.zeros(len(zs))
    den = np.zeros(len(zs))
    base = np.floor(s).astype(np.int64)
    for dk in (-1, 0, 1):
        kk = base + dk
        okk = kk >= 0
        a = ang * 2.0 ** (kk + k0) / (2 * np.pi)
        bs, _ = _bump(s - kk, 0.5)
        for dj in (-1, 0, 1):
            jj = np.floor(a).astype(np.int64) + dj
            ba, _ = _bump(a - jj, 0.5)
            psi = np.where(okk, bs * ba, 0.0)
            hit = psi > 0
            if not hit.any():
                continue
            keys = np.stack([kk[hit], jj[hit]], axis=1)
            uk, inv = np.unique(keys, axis=0, return_inverse=True)
            cv = np.array([coeff(int(a_), int(b_)) for a_, b_ in uk])
            num[hit] += cv[inv.ravel()] * psi[hit]
            den[hit] += psi[hit]
    out = np.full(u.values.shape, np.nan)
    out[core] = u.values[core]
    out[shell] = num / den
    return u.replace(out)


def core_mask(u: GridFunction, eps: float, mi: ConformalMap) -> np.ndarray:
    """Cells of ``phi(B(0, 1 - eps))``."""
    inside = u.mask != RegionTag.EXTERIOR
    out = np.zeros(u.values.shape, bool)
    out[inside] = np.abs(mi.inverse(u.points()[inside])) < 1 - eps
    return out


def inner_ratio(d: DomainSpec, family: str, eps: float, h: float, p: float = 1.5, mi=None):
    """``||E_eps u||_{W^{1,p}(domain)} / ||u||_{W^{1,p}(phi(B(0,1-eps)))}``."""
    mi = mi or build_map(d, "interior")
    u = sample(d, family, h)
    core = core_mask(u, eps, mi)
    uc = u.replace(np.where(core, u.values, np.nan))
    ext = inner_extend(uc, eps, mi, d)
    return sobolev_seminorm(ext, p).full_norm / sobolev_seminorm(uc, p).full_norm, ext


# -- necessity ---------------------------------------------------------------------------

def john_surrogate(d: DomainSpec, n: int = 64) -> float:
    """``min dist(w, boundary) / |w - z|`` along segments from boundary points ``z`` to the base point.

    Segments that leave the domain are skipped; the value is capped at 1.
    """
    x0 = d.base_point
    bnd = d.boundary_polyline(n)[:n]
    t = np.linspace(0, 1, 257)[1:]
    best = 1.0
    for z in bnd:
        w = z + t * (x0 - z)
        if not np.all(np.asarray(d.contains(w[:-1]))):
            continue
        ratio = distance_to_boundary(w, d) / np.abs(w - z)
        best = min(best, float(ratio.min()))
    return best


def _split_boundary(d: DomainSpec, z1, z2, n: int = 4096):
    poly = d.boundary_polyline(n)
    if abs(poly[-1] - poly[0]) < 1e-12:
        poly = poly[:-1]
    k1 = int(np.argmin(np.abs(poly - z1)))
    k2 = int(np.argmin(np.abs(poly - z2)))
    if k1 == k2:
        raise ValueError("z1 and z2 split the boundary degenerately")
    a, b = sorted((k1, k2))
    arc1 = poly[a:b + 1]
    arc2 = np.concatenate([poly[b:], poly[:a + 1]])
    if len(arc1) < 3 or len(arc2) < 3:
        raise ValueError("z1 and z2 split the boundary degenerately")

    def dm(P):
        P = P[:: max(1, len(P) // 256)]
        return float(np.abs(P[:, None] - P[None, :]).max())

    return (arc1, arc2) if dm(arc1) <= dm(arc2) else (arc2, arc1)


def necessity_test_function(d: DomainSpec, z1, z2, c1: float = 1.0, p: float = 1.5, h: float = 1 / 256,
                            john: float | None = None):
    """Grid version of the two-point test function; returns (Phi, info)."""
    if not d.is_jordan:
        raise ValueError("the test function needs a Jordan domain")
    if c1 < 1:
        raise ValueError("c1 must be at least 1")
    z1, z2 = complex(as_complex(z1)), complex(as_complex(z2))
    tol = 1e-6 * diameter(d)
    for name, z in (("z1", z1), ("z2", z2)):
        if distance_to_boundary(z, d) > tol:
            raise ValueError(f"{name} is not on the boundary")
    P1, P2 = _split_boundary(d, z1, z2)
    J = john if john is not None else john_surrogate(d)
    c0 = J / (J + 1)
    g = make_grid(d.bbox(), h, d)
    pts = g.points()
    cell = g.mask == RegionTag.INTERIOR
    idx = -np.ones(g.values.shape, np.int64)
    idx[cell] = np.arange(cell.sum())
    zc = pts[cell]
    # 8-neighbour graph on interior cells
    I, Jn, L = [], [], []
    ny, nx = g.values.shape
    for di, dj in ((0, 1), (1, 0), (1, 1), (1, -1)):
        a = idx[max(0, -di):ny - max(0, di), max(0, -dj):nx - max(0, dj)]
        b = idx[max(0, di):ny + min(0, di) or None, max(0, dj):nx + min(0, dj) or None]
        ok = (a >= 0) & (b >= 0)
        I.append(a[ok])
        Jn.append(b[ok])
        L.append(np.full(ok.sum(), h * math.hypot(di, dj)))
    I, Jn, L = np.concatenate(I), np.concatenate(Jn), np.concatenate(L)
    near = np.minimum(distance_to_boundary(zc[I], d), distance_to_boundary(zc[Jn], d)) < 2 * h
    if near.any():
        cross = segments_meet_boundary(d, zc[I[near]], zc[Jn[near]])
        keep = np.ones(len(I), bool)
        keep[np.nonzero(near)[0][cross]] = False
        I, Jn, L = I[keep], Jn[keep], L[keep]
    # sources: cells next to P2 and closer to P2 than to P1
    d2 = polyline_distance(zc, P2)
    d1 = polyline_distance(zc, P1)
    src = np.nonzero((d2 <= 1.5 * h) & (d2 < d1))[0]
    if len(src) == 0:
        raise ResolutionError("no grid cell touches P2; refine h")
    phi = np.zeros(len(zc))
    n = len(zc)
    for zi in (z1, z2):
        fa, fb = 1 / np.abs(zc[I] - zi), 1 / np.abs(zc[Jn] - zi)
        fm = 1 / np.abs((zc[I] + zc[Jn]) / 2 - zi)
        w = L * (fa + 4 * fm + fb) / 6
        G = sp.coo_matrix((w, (I, Jn)), shape=(n, n)).tocsr()
        dist = dijkstra(G, directed=False, indices=src, min_only=True)
        phi = np.maximum(phi, dist)
    r = np.abs(zc - z1)
    D = abs(z1 - z2)
    with np.errstate(divide="ignore"):
        alpha = np.clip(np.log2(2 * c1 * D / np.maximum(r, 1e-300)), 0.0, 1.0)
    Phi = alpha * np.minimum(phi / c0, 1.0)
    vals = np.full(g.values.shape, np.nan)
    vals[cell] = Phi
    out = g.replace(vals)
    info = {"c0": c0, "john": J, "c1": c1, "separation": D, "p": p,
            "P1_diam": float(np.abs(P1[:, None][::8] - P1[None, ::8]).max())}
    return out, info


# -- lower bound lemma ----------------------------------------------------------------------

def lower_bound_check(u: GridFunction, p: float, delta: float) -> dict:
    """Projection hypotheses and ``int |grad u|^p / l(Q)^(2-p)`` on the square covered by the grid."""
    if u.nx != u.ny:
        raise ValueError("the grid must cover a square")
    l = u.nx * u.h
    sel = u.defined
    A0 = sel & (u.values <= 0)
    A1 = sel & (u.values >= 1)
    proj = {"A0_x": float(A0.any(axis=0).sum() * u.h), "A0_y": float(A0.any(axis=1).sum() * u.h),
            "A1_x": float(A1.any(axis=0).sum() * u.h), "A1_y": float(A1.any(axis=1).sum() * u.h)}
    ok = max(proj["A0_x"], proj["A0_y"]) >= delta * l and max(proj["A1_x"], proj["A1_y"]) >= delta * l
    integral = sobolev_seminorm(u, p).integral
    return {"p": p, "delta": delta, "side": l, "projections": proj,
            "status": "Applicable" if ok else "Not-Applicable", "applicable": ok,
            "integral": integral, "ratio": integral / l ** (2 - p)}
