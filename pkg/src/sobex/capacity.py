"""Condenser capacity by minimizing the discrete Dirichlet energy on a square grid."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pyamg
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import cg
from scipy.spatial import cKDTree

from .geom import DomainSpec, as_complex, distance_to_boundary, point_polyline_distance, segments_meet_boundary
from .metricpath import CostFunctional, PathGraph


class CapacityError(ValueError):
    pass


def _polyline(P) -> np.ndarray:
    P = np.atleast_1d(as_complex(P)).astype(complex)
    if P.ndim != 1 or len(P) == 0:
        raise CapacityError("E and F must be non-empty point sets or polylines")
    return P


def polyline_distance(z, P) -> np.ndarray:
    """Distance from points ``z`` to the polyline (or single point) ``P``."""
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    a, b = (P[:-1], P[1:]) if len(P) > 1 else (P, P)
    return point_polyline_distance(z, a, b)


def near_polyline(z, P, r: float) -> np.ndarray:
    """Mask of points within distance ``r`` of the polyline ``P``."""
    a, b = (P[:-1], P[1:]) if len(P) > 1 else (P, P)
    mid = (a + b) / 2
    reach = r + np.abs(b - a).max() / 2
    tree = cKDTree(np.c_[mid.real, mid.imag])
    lists = tree.query_ball_point(np.c_[z.real, z.imag], reach)
    out = np.zeros(len(z), bool)
    cand = np.nonzero([len(c) > 0 for c in lists])[0]
    if len(cand):
        out[cand] = polyline_distance(z[cand], P) <= r
    return out


@dataclass
class CapacityProblem:
    E: np.ndarray
    F: np.ndarray
    domain: DomainSpec
    h: float

    def __post_init__(self):
        self.E, self.F = _polyline(self.E), _polyline(self.F)
        if not self.h > 0:
            raise CapacityError("grid step h must be positive")


@dataclass
class CapacityEstimate:
    value: float
    residual: float
    iterations: int

    def to_dict(self) -> dict:
        return {"value": self.value, "residual": self.residual, "iterations": self.iterations}


def _grid(prob: CapacityProblem):
    d, h = prob.domain, prob.h
    x0, x1, y0, y1 = d.bbox()
    allp = np.concatenate([prob.E, prob.F])
    x0, x1 = min(x0, allp.real.min()) - h, max(x1, allp.real.max()) + h
    y0, y1 = min(y0, allp.imag.min()) - h, max(y1, allp.imag.max()) + h
    # cell-centred nodes keep grid lines off axis-aligned slits
    nx = int(math.ceil((x1 - x0) / h))
    ny = int(math.ceil((y1 - y0) / h))
    xs = x0 + (np.arange(nx) + 0.5) * h
    ys = y0 + (np.arange(ny) + 0.5) * h
    return xs, ys


def estimate_capacity(prob: CapacityProblem, tol: float = 1e-8, maxiter: int = 2000) -> CapacityEstimate:
    """Minimal ``sum (u_i - u_j)^2`` over grid edges inside the domain, ``u = 1`` on E and 0 on F.

    Nodes within ``h/2`` of E (resp. F) are clamped; every other node must lie
    in the domain.  Edges between free nodes that meet the boundary are
    dropped, which imposes the reflecting condition there.
    """
    d, h = prob.domain, prob.h
    xs, ys = _grid(prob)
    X, Y = np.meshgrid(xs, ys)
    z = (X + 1j * Y).ravel()
    inE = near_polyline(z, prob.E, h / 2)
    inF = near_polyline(z, prob.F, h / 2)
    if np.any(inE & inF):
        raise CapacityError("E and F are too close for this grid step")
    sepEF = float(min(polyline_distance(prob.E, prob.F).min(), polyline_distance(prob.F, prob.E).min()))
    if h > sepEF / 4:
        raise CapacityError(f"grid step {h} exceeds a quarter of the E-F separation {sepEF:.4g}")
    inside = np.asarray(d.contains(z), dtype=bool)
    active = inside | inE | inF
    ny, nx = X.shape
    idx = np.arange(z.size).reshape(ny, nx)
    i = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    j = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    keep = active[i] & active[j]
    i, j = i[keep], j[keep]
    clamped = inE | inF
    free_pair = ~clamped[i] & ~clamped[j]
    near = free_pair & (np.minimum(distance_to_boundary(z[i], d), distance_to_boundary(z[j], d)) < h)
    if near.any():
        bad = segments_meet_boundary(d, z[i[near]], z[j[near]])
        drop = np.zeros(len(i), bool)
        drop[np.nonzero(near)[0][bad]] = True
        i, j = i[~drop], j[~drop]
    n = z.size
    A = sp.coo_matrix((np.ones(len(i)), (i, j)), shape=(n, n)).tocsr()
    A = A + A.T
    L = sp.diags(np.asarray(A.sum(axis=1)).ravel()) - A
    ncomp, lab = connected_components(A, directed=False)
    hasE = np.zeros(ncomp, bool)
    hasF = np.zeros(ncomp, bool)
    hasE[lab[inE]] = True
    hasF[lab[inF]] = True
    u = np.zeros(n)
    u[inE] = 1.0
    # free components touching only E take the value 1; isolated ones are irrelevant
    u[~clamped & hasE[lab] & ~hasF[lab]] = 1.0
    free = ~clamped & hasE[lab] & hasF[lab]
    if not free.any():
        energy = float(u @ (L @ u))
        return CapacityEstimate(energy, 0.0, 0)
    Lff = L[free][:, free].tocsr()
    b = -(L[free][:, ~free] @ u[~free])
    ml = pyamg.smoothed_aggregation_solver(Lff, symmetry="symmetric")
    count = [0]

    def tick(_):
        count[0] += 1

    x, info = cg(Lff, b, rtol=tol, maxiter=maxiter, M=ml.aspreconditioner(), callback=tick)
    bnorm = np.linalg.norm(b)
    res = float(np.linalg.norm(b - Lff @ x) / bnorm) if bnorm > 0 else 0.0
    if info != 0 or res > 10 * tol:
        raise CapacityError(f"solver did not converge (residual {res:.3g})")
    u[free] = x
    energy = float(u @ (L @ u))
    return CapacityEstimate(energy, res, count[0])


def _samples(P, n):
    if len(P) == 1:
        return P
    seg = np.abs(np.diff(P))
    s = np.concatenate([[0], np.cumsum(seg)])
    if s[-1] == 0:
        raise CapacityError("degenerate continuum")
    t = np.linspace(0, s[-1], n)
    return np.interp(t, s, P.real) + 1j * np.interp(t, s, P.imag)


def separation_ratio(E, F, d: DomainSpec, samples: int = 9, depth: int = 6) -> float:
    """``min(diam_in(E), diam_in(F)) / dist_in(E, F)`` with inner (path) distances in ``d``."""
    E, F = _polyline(E), _polyline(F)
    if len(E) < 2 or len(F) < 2:
        raise CapacityError("E and F must be continua given as polylines")
    e, f = _samples(E, samples), _samples(F, samples)
    pts = np.concatenate([e, f])
    g = PathGraph(d, "interior", depth, pts)
    m = len(e)
    ee = [(a, b) for a in range(m) for b in range(a + 1, m)]
    ff = [(m + a, m + b) for a in range(len(f)) for b in range(a + 1, len(f))]
    ef = [(a, m + b) for a in range(m) for b in range(len(f))]
    costs, _ = g.solve(ee + ff + ef, CostFunctional.length("interior"), shortcut_rounds=1)
    cE, cF, cEF = costs[:len(ee)], costs[len(ee):len(ee) + len(ff)], costs[len(ee) + len(ff):]
    dist = float(cEF.min())
    if not np.isfinite(dist):
        return 0.0
    if dist == 0:
        return math.inf
    return float(min(cE.max(), cF.max()) / dist)
