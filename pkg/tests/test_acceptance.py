"""One test per acceptance criterion; each logs a PASS/FAIL line before asserting."""

import math
import time

import numpy as np
import pytest

from sobex.capacity import CapacityProblem, estimate_capacity
from sobex.conformal import build_map, build_polygon_map, hyperbolic_distance_disk
from sobex.extend import (ball_box, extension_ratio, exterior_setup, inner_ratio, necessity_test_function,
                          plan_exterior, sample, sobolev_seminorm)
from sobex.geom import DomainSpec, l_shape, unit_disk, unit_square
from sobex.metricpath import CostFunctional, duality_check, exponent_sweep, optimal_path, path_cost
from sobex.reflect import build_reflection, verify_sum_estimate
from sobex.whitney import UPPER, Side, decompose, square_boundary_distance, trace_curve, whitney_sum

P_SET = (1.2, 1.5, 1.8)


def spread(values):
    values = np.asarray(values, dtype=float)
    return float(values.max() / values.min())


@pytest.mark.parametrize("name, d", [
    ("disk", unit_disk()),
    ("square", unit_square()),
    ("L-shape", l_shape()),
    ("slit_disk", DomainSpec.slit_disk(1.0, 0.5)),
    ("power_cusp", DomainSpec.power_cusp(2.0, 1.0)),
])
def test_c01_whitney_invariants(record, name, d):
    t0 = time.perf_counter()
    bad_band = bad_ratio = total = 0
    for depth in (6, 7, 8):
        w = decompose(d, Side.INTERIOR, depth)
        l = w.side_length
        dist = square_boundary_distance(d, w.level, w.m1, w.m2)
        bad_band += int(np.sum((dist < l * (1 - 1e-12)) | (dist > UPPER * l * (1 + 1e-12))))
        pairs = w.neighbor_pairs()
        r = l[pairs[:, 0]] / l[pairs[:, 1]]
        bad_ratio += int(np.sum((r < 0.25) | (r > 4)))
        total += len(w)
    secs = time.perf_counter() - t0
    ok = bad_band == 0 and bad_ratio == 0 and secs < 10
    record(1, ok, f"{name}: {total} squares over depths 6-8, band violations {bad_band}, "
                  f"ratio violations {bad_ratio}", secs)
    assert ok


def test_c02_quadrature_oracle(record):
    t0 = time.perf_counter()
    got = path_cost(np.array([2 + 0j, 3 + 0j]), unit_disk(), CostFunctional(1.5, "complement"))
    want = 2 * (math.sqrt(2) - 1)
    ok = abs(got - want) <= 1e-5
    record(2, ok, f"path_cost {got:.10f} vs 2(sqrt2-1) = {want:.10f}", time.perf_counter() - t0)
    assert ok


def straddling_ratios(slit, p, js=range(1, 6)):
    # the dual interior exponent sees straddling pairs at finite cost; ratios at delta = 2^-(j+1)
    f = CostFunctional(p / (p - 1), "interior")
    out = []
    for j in js:
        delta = 0.5 * 2.0 ** -j
        r = optimal_path(0.75 + 0.5j * delta, 0.75 - 0.5j * delta, slit, f, depth=7)
        out.append(r.cost / delta ** f.target_exponent)
    return np.array(out)


@pytest.mark.parametrize("name, d, expected", [
    ("disk", unit_disk(), "Bounded"),
    ("square", unit_square(), "Bounded"),
    ("slit_disk", DomainSpec.slit_disk(1.0, 0.5), "Growing"),
])
def test_c03_condition_verdicts(record, name, d, expected):
    t0 = time.perf_counter()
    rows = exponent_sweep(d, "complement", P_SET, depth=7, n_pairs=200, seed=0)
    secs = time.perf_counter() - t0
    verdicts = [v for _, _, v in rows]
    ok = all(v == expected for v in verdicts) and secs < 60
    detail = f"{name}: verdicts {dict(zip(P_SET, verdicts))}"
    if expected == "Growing":
        steps = {}
        for p in P_SET:
            r = straddling_ratios(d, p)
            steps[p] = r[1:] / r[:-1]
        ok = ok and all(np.all(s >= 1.5) for s in steps.values())
        detail += ", straddling growth per halving " + "; ".join(
            f"p={p}: {np.array2string(s, precision=3)}" for p, s in steps.items())
    record(3, ok, detail, secs)
    assert ok


def exterior_curves(rng, n=20):
    out = []
    for _ in range(n):
        r0, r1 = rng.uniform(1.05, 2.0, 2)
        th0 = rng.uniform(0, 2 * np.pi)
        span = rng.uniform(0.3, 3.0)
        t = np.linspace(0, 1, 400)
        out.append((r0 + (r1 - r0) * t) * np.exp(1j * (th0 + span * t)))
    return out


def test_c04_sum_integral_equivalence(record):
    t0 = time.perf_counter()
    disk, p = unit_disk(), 1.5
    w = decompose(disk, Side.EXTERIOR, 7)
    f = CostFunctional(p, "complement")
    ratios = [whitney_sum(trace_curve(w, g), 2 - p) / path_cost(g, disk, f)
              for g in exterior_curves(np.random.default_rng(2024))]
    ok = all(1 / 30 <= r <= 30 for r in ratios)
    record(4, ok, f"20 curves, whitney_sum / path_cost in [{min(ratios):.3f}, {max(ratios):.3f}]",
           time.perf_counter() - t0)
    assert ok


def circle(r, n=512):
    return r * np.exp(1j * np.linspace(0, 2 * np.pi, n + 1))


def test_c05_capacity_oracle(record):
    t0 = time.perf_counter()
    est = estimate_capacity(CapacityProblem(circle(1.0), circle(math.e), DomainSpec.annulus(1.0, math.e), 1 / 128))
    rel = abs(est.value - 2 * math.pi) / (2 * math.pi)
    E = 0.5 * np.exp(1j * np.linspace(-0.3, 0.3, 20))
    small = estimate_capacity(CapacityProblem(E, -E, DomainSpec.disk(0, 1.0), 1 / 64)).value
    large = estimate_capacity(CapacityProblem(E, -E, DomainSpec.disk(0, 1.5), 1 / 64)).value
    ok = rel <= 0.05 and small <= large * (1 + 1e-8)
    record(5, ok, f"annulus {est.value:.5f} vs 2pi (rel {rel:.4f}); monotone {small:.4f} <= {large:.4f}",
           time.perf_counter() - t0)
    assert ok


def test_c06_conformal_distortion(record):
    t0 = time.perf_counter()
    m = build_polygon_map(unit_square())
    rng = np.random.default_rng(6)
    z = 0.95 * np.sqrt(rng.uniform(0, 1, 200)) * np.exp(2j * np.pi * rng.uniform(0, 1, 200))
    t = np.tanh(rng.uniform(0, 0.5, 200)) * np.exp(2j * np.pi * rng.uniform(0, 1, 200))
    w = (t + z) / (1 + np.conj(z) * t)
    dh = hyperbolic_distance_disk(z, w)
    q = np.abs(m.evaluate(z)[1]) / np.abs(m.evaluate(w)[1])
    bad = int(np.sum((q < math.exp(-3)) | (q > math.exp(3))))
    ok = bad == 0 and dh.max() <= 1 + 1e-12
    record(6, ok, f"200 pairs, max dist_h {dh.max():.3f}, |f'| ratios in [{q.min():.3f}, {q.max():.3f}], "
                  f"{bad} violations", time.perf_counter() - t0)
    assert ok


def reflection(d, depth):
    wi, we = decompose(d, Side.INTERIOR, depth), decompose(d, Side.EXTERIOR, depth)
    return build_reflection(wi, we, build_map(d, "interior"), build_map(d, "exterior"))


@pytest.mark.parametrize("name, d", [("disk", unit_disk()), ("square", unit_square())])
def test_c07_reflection_sums(record, name, d):
    t0 = time.perf_counter()
    m6, m7 = (verify_sum_estimate(reflection(d, k), 1.5).max_ratio for k in (6, 7))
    change = abs(m7 - m6) / m6
    ok = change <= 0.25
    record(7, ok, f"{name}: max family ratio {m6:.4f} (depth 6) -> {m7:.4f} (depth 7), change {change:.1%}",
           time.perf_counter() - t0)
    assert ok


FAMILIES_8 = ("const", "x", "re_z2", "abs_pow:a=0.6,z0=0.3+0.1j")


@pytest.mark.parametrize("name, d", [("disk", unit_disk()), ("square", unit_square())])
def test_c08_extension_operator(record, name, d):
    t0 = time.perf_counter()
    ratios = {f: [] for f in FAMILIES_8}
    const_err = 0.0
    for h in (1 / 64, 1 / 128, 1 / 256):
        r = exterior_setup(d, h)
        plan = plan_exterior(sample(d, "const", h, box=ball_box(d)), d, r)
        for fam in FAMILIES_8:
            ratio, ext, _, _ = extension_ratio(d, fam, h, 1.5, r, plan)
            ratios[fam].append(ratio)
            if fam == "const":
                v = ext.values.values[ext.values.defined]
                const_err = max(const_err, float(np.max(np.abs(v - 1))))
    spreads = {f: spread(v) for f, v in ratios.items()}
    ok = all(s <= 2 for s in spreads.values()) and const_err <= 1e-12
    record(8, ok, f"{name}: norm-ratio spreads " + ", ".join(f"{f.split(':')[0]} {s:.3f}" for f, s in spreads.items())
           + f"; |E1 - 1| <= {const_err:.1e}", time.perf_counter() - t0)
    assert ok


def test_c09_inner_extension(record):
    t0 = time.perf_counter()
    d = unit_disk()
    mi = build_map(d, "interior")
    ratios = [inner_ratio(d, "x", eps, 1 / 256, mi=mi)[0] for eps in (1 / 4, 1 / 8, 1 / 16)]
    s = spread(ratios)
    ok = s <= 2
    record(9, ok, f"ratios {np.round(ratios, 4).tolist()} for eps 1/4, 1/8, 1/16, spread {s:.3f}",
           time.perf_counter() - t0)
    assert ok


def test_c10_necessity_function(record):
    t0 = time.perf_counter()
    d, p = unit_disk(), 1.5
    z1 = np.exp(0.3j)
    vals = []
    for j in (1, 2, 3, 4):
        D = 2.0 ** -j
        z2 = z1 * np.exp(2j * math.asin(D / 2))
        phi, _ = necessity_test_function(d, z1, z2, p=p, h=1 / 256)
        vals.append(sobolev_seminorm(phi, p).integral / D ** (2 - p))
    s = spread(vals)
    ok = s <= 2
    record(10, ok, f"|grad Phi|^p / D^(2-p) = {np.round(vals, 3).tolist()}, spread {s:.3f}",
           time.perf_counter() - t0)
    assert ok


@pytest.mark.parametrize("name, d", [("disk", unit_disk()), ("square", unit_square())])
def test_c11_duality(record, name, d):
    t0 = time.perf_counter()
    out = duality_check(d, 1.5, depth=7, n_pairs=200, seed=0)
    comp, inner = out["complement"].verdict, out["interior"].verdict
    ok = out["agree"] and comp == inner == "Bounded"
    record(11, ok, f"{name}: complement p=1.5 {comp}, interior q={out['q']:g} {inner}", time.perf_counter() - t0)
    assert ok
