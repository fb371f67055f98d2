import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sobex.extend import (FAMILIES, MARGIN, GridFunction, PartitionOfUnity, ResolutionError, _split_boundary,
                          ball_box, build_all_chains, chain_differences, core_mask, exterior_setup, extend_exterior,
                          extension_ratio, gradient, inner_extend, inner_ratio, lower_bound_check, make_grid,
                          necessity_test_function, parse_family, plan_exterior, sample, sobolev_seminorm,
                          square_averages)
from sobex.capacity import polyline_distance
from sobex.conformal import build_map
from sobex.geom import DomainSpec, RegionTag, distance_to_boundary
from sobex.whitney import decompose

UNIT_SQUARE = DomainSpec.polygon([0, 1, 1 + 1j, 1j])
DISK = DomainSpec.disk()


@pytest.fixture(scope="module")
def disk64():
    return exterior_setup(DISK, 1 / 64)


@pytest.fixture(scope="module")
def disk_plan(disk64):
    u = sample(DISK, "x", 1 / 64, box=ball_box(DISK))
    return u, plan_exterior(u, DISK, disk64)


def chord_pair(D, theta=0.3):
    z1 = np.exp(1j * theta)
    return z1, z1 * np.exp(2j * math.asin(D / 2))


@pytest.fixture(scope="module")
def necessity():
    out = {}
    for j in (1, 2, 3, 4):
        z1, z2 = chord_pair(2.0 ** -j)
        out[j] = (z1, z2, *necessity_test_function(DISK, z1, z2, h=1 / 256))
    return out


class TestSample:
    def test_constant_on_disk(self):
        u = sample(DISK, "const", 1 / 64)
        assert u.defined.any()
        assert np.all(u.values[u.defined] == 1.0)

    def test_linear_on_square(self):
        u = sample(UNIT_SQUARE, "x", 1 / 32)
        z = u.points()
        assert np.array_equal(u.values[u.defined], z.real[u.defined])
        assert np.all(np.isnan(u.values[u.mask == RegionTag.EXTERIOR]))

    def test_root_family_finite_with_radial_integral(self):
        # |grad |z|^a| = a r^(a-1), so int_D = 2 pi a^p / (p (a-1) + 2) when p < 2/(1-a)
        p, a = 1.5, 0.5
        exact = 2 * math.pi * a ** p / (p * (a - 1) + 2)
        u = sample(DISK, "abs_pow:a=0.5", 1 / 256)
        assert np.all(np.isfinite(u.values[u.defined]))
        rep = sobolev_seminorm(u, p, "interior")
        assert math.isfinite(rep.seminorm)
        assert rep.integral == pytest.approx(exact, rel=0.01)

    def test_family_parameters(self):
        f = parse_family("abs_pow:a=0.6,z0=0.3+0.1j")
        assert f(np.array([0.3 + 1.1j]))[0] == pytest.approx(1.0)
        assert parse_family("ramp:w=0.2")(np.array([0.4, 0.5, 0.6]))[1] == pytest.approx(0.5)
        assert parse_family("Re(z^2)")(np.array([1 + 1j]))[0] == pytest.approx(0.0)

    def test_unknown_family(self):
        with pytest.raises(ValueError, match="unknown test family"):
            sample(DISK, "bessel", 1 / 32)

    def test_bad_spacing(self):
        with pytest.raises(ValueError):
            sample(DISK, "x", 0.0)

    def test_every_family_parses(self):
        for name in FAMILIES:
            vals = parse_family(name)(np.array([0.2 + 0.1j, -0.3j]))
            assert np.all(np.isfinite(vals))


class TestNorms:
    def test_linear_on_square_p2(self):
        rep = sobolev_seminorm(sample(UNIT_SQUARE, "x", 1 / 64), 2.0)
        assert rep.seminorm == pytest.approx(1.0, abs=1e-6)

    def test_constant_is_zero(self):
        rep = sobolev_seminorm(sample(DISK, "const:c=3", 1 / 64), 1.5)
        assert rep.seminorm == 0.0
        assert rep.full_norm > 0

    def test_modulus_on_disk(self):
        rep = sobolev_seminorm(sample(DISK, "abs_pow:a=1", 1 / 256), 1.5)
        assert rep.integral == pytest.approx(math.pi, rel=0.01)
        assert rep.seminorm == pytest.approx(math.pi ** (2 / 3), rel=0.01)

    @given(st.floats(1.05, 6.0), st.sampled_from(["x", "re_z2", "trig", "abs_pow:a=0.7"]))
    def test_report_invariants(self, p, fam):
        rep = sobolev_seminorm(sample(UNIT_SQUARE, fam, 1 / 32), p)
        assert 0 <= rep.seminorm <= rep.full_norm

    def test_one_sided_at_edges(self):
        u = sample(UNIT_SQUARE, "re_z2", 1 / 32)
        gx, gy = gradient(u, u.defined)
        z = u.points()
        # x^2 - y^2 is quadratic, so central differences are exact away from the edges
        inner = u.defined.copy()
        inner[[0, -1], :] = inner[:, [0, -1]] = False
        assert np.allclose(gx[inner], 2 * z.real[inner], atol=1e-12)
        assert np.allclose(gy[inner], -2 * z.imag[inner], atol=1e-12)
        assert np.allclose(gx[1:-1, 0], 2 * z.real[1:-1, 0] + u.h, atol=1e-12)

    def test_empty_region(self):
        u = sample(UNIT_SQUARE, "x", 1 / 16)
        with pytest.raises(ValueError, match="empty"):
            sobolev_seminorm(u, 1.5, "exterior")

    @pytest.mark.parametrize("p", [1.0, 0.5, math.inf])
    def test_exponent_range(self, p):
        with pytest.raises(ValueError):
            sobolev_seminorm(sample(UNIT_SQUARE, "x", 1 / 16), p)


class TestGridFunction:
    def test_round_trip(self, tmp_path):
        u = sample(DISK, "trig", 1 / 32)
        u.save(str(tmp_path / "u"))
        v = GridFunction.load(str(tmp_path / "u"))
        assert v.origin == u.origin and v.h == u.h
        assert np.array_equal(v.mask, u.mask)
        assert np.array_equal(np.isnan(v.values), np.isnan(u.values))
        assert np.allclose(v.values[v.defined], u.values[u.defined], rtol=0, atol=1e-15)

    def test_validation(self):
        with pytest.raises(ValueError):
            GridFunction(0j, 0.0, np.zeros((2, 2)), np.zeros((2, 2)))
        with pytest.raises(ValueError):
            GridFunction(0j, 0.1, np.zeros((2, 2)), np.zeros((3, 2)))

    def test_grid_is_aligned(self):
        g = make_grid((0.013, 0.51, -0.2, 0.3), 1 / 16, UNIT_SQUARE)
        assert g.origin == complex(0, -4 / 16)
        z = g.points()
        assert z[0, 0] == pytest.approx(complex(1 / 32, -7 / 32))


class TestPartitionOfUnity:
    def test_sums_to_one_and_locality(self, disk_plan):
        _, plan = disk_plan
        pou = plan.pou
        cov = pou.covered
        assert cov.sum() > 1000
        assert np.allclose(pou.total[cov] / pou.total[cov], 1.0)
        val, _, _ = pou.combine(np.ones(len(pou.sides)))
        assert np.max(np.abs(val[cov] - 1)) <= 1e-9
        assert pou.overlap <= 21

    def test_support_in_dilate(self):
        wi = decompose(DISK, "exterior", 4)
        corners, sides = wi.corner[:40], wi.side_length[:40]
        h = 1 / 128
        shape = (3 * 128, 3 * 128)
        origin = -1.5 - 1.5j
        pou = PartitionOfUnity(corners, sides, origin, h, shape, np.ones(shape, bool))
        xs = origin.real + (np.arange(shape[1]) + 0.5) * h
        ys = origin.imag + (np.arange(shape[0]) + 0.5) * h
        for c, l, (psi, _, _, sl) in zip(corners, sides, pou._patches()):
            if psi.size == 0:
                continue
            x, y = np.meshgrid(xs[sl[1]], ys[sl[0]])
            on = psi > 0
            assert np.all(np.abs(x[on] - (c.real + l / 2)) <= 0.55 * l + 1e-12)
            assert np.all(np.abs(y[on] - (c.imag + l / 2)) <= 0.55 * l + 1e-12)
        assert MARGIN == pytest.approx(0.05)

    def test_kappa_recorded(self, disk_plan):
        _, plan = disk_plan
        kappa = plan.pou.measure_kappa()
        assert 0 < kappa < 100
        assert plan.pou.kappa == kappa

    def test_gradient_routes_agree_when_resolved(self):
        # bump transitions are 0.1 l wide, so this needs many cells per square; second order in h
        we = decompose(DISK, "exterior", 4)
        for h, tol in ((1 / 2048, None), (1 / 4096, 1e-3)):
            n = int(round(0.3 / h))
            origin = complex(1.25, -0.3)
            xs = origin.real + (np.arange(n) + 0.5) * h
            ys = origin.imag + (np.arange(n) + 0.5) * h
            z = xs[None, :] + 1j * ys[:, None]
            pou0 = PartitionOfUnity(we.corner, we.side_length, origin, h, (n, n), np.abs(z) > 1)
            target = (np.abs(z) > 1) & (pou0.total >= 0.5)
            pou = PartitionOfUnity(we.corner, we.side_length, origin, h, (n, n), target)
            coeffs = np.cos(3 * we.center.real) + np.sin(2 * we.center.imag)
            val, gx, gy = pou.combine(coeffs)
            g = GridFunction(origin, h, np.where(target, val, np.nan), np.full((n, n), RegionTag.EXTERIOR))
            fx, fy = gradient(g, target)
            inner = target.copy()
            inner[1:-1, 1:-1] &= target[:-2, 1:-1] & target[2:, 1:-1] & target[1:-1, :-2] & target[1:-1, 2:]
            inner[[0, -1], :] = inner[:, [0, -1]] = False
            p = 1.5
            fd = np.sum(np.hypot(fx, fy)[inner] ** p)
            an = np.sum(np.hypot(gx, gy)[inner] ** p)
            err = abs(fd - an) / an
            if tol is None:
                coarse = err
            else:
                assert err <= tol
                assert err < coarse / 3


class TestExteriorExtension:
    def test_constant_is_exact(self, disk64, disk_plan):
        _, plan = disk_plan
        u = sample(DISK, "const", 1 / 64, box=ball_box(DISK))
        ext = extend_exterior(u, DISK, disk64, plan)
        v = ext.values.values[ext.values.defined]
        assert np.max(np.abs(v - 1)) <= 1e-14
        assert ext.info["max_overlap"] <= 21

    def test_linearity(self, disk64, disk_plan):
        u, plan = disk_plan
        v = sample(DISK, "trig", 1 / 64, box=ball_box(DISK))
        w = u.replace(2.5 * u.values - 0.75 * v.values)
        eu, ev, ew = (extend_exterior(f, DISK, disk64, plan).values.values for f in (u, v, w))
        ok = ~np.isnan(ew)
        assert np.max(np.abs(ew[ok] - (2.5 * eu[ok] - 0.75 * ev[ok]))) <= 1e-12

    def test_identity_on_domain(self, disk64, disk_plan):
        u, plan = disk_plan
        ext = extend_exterior(u, DISK, disk64, plan).values
        inside = u.mask != RegionTag.EXTERIOR
        assert np.array_equal(ext.values[inside], u.values[inside])

    def test_defined_on_the_ball(self, disk64, disk_plan):
        u, plan = disk_plan
        ext = extend_exterior(u, DISK, disk64, plan)
        z = u.points()
        ball = np.abs(z) <= 1.5 * 2
        assert ext.values.defined[ball].all()
        assert ext.info["uncovered"] == 0

    def test_undefined_input(self, disk64, disk_plan):
        u, plan = disk_plan
        vals = u.values.copy()
        vals[u.mask == RegionTag.INTERIOR] = np.nan
        with pytest.raises(ValueError):
            extend_exterior(u.replace(vals), DISK, disk64, plan)

    def test_plan_grid_mismatch(self, disk64, disk_plan):
        _, plan = disk_plan
        u = sample(DISK, "x", 1 / 32, box=ball_box(DISK))
        with pytest.raises(ValueError, match="different grid"):
            extend_exterior(u, DISK, disk64, plan)

    def test_resolution_error(self):
        u = sample(UNIT_SQUARE, "x", 1 / 16)
        with pytest.raises(ResolutionError):
            square_averages(u, [5 + 5j], [0.01])
        with pytest.raises(ResolutionError):
            square_averages(u, [0.2 + 0.2j], [0.1], np.zeros(u.values.shape, bool))

    def test_cell_centre_averages(self):
        u = sample(UNIT_SQUARE, "x", 1 / 16)
        a = square_averages(u, [0.25 + 0.25j, 0.0j], [0.25, 1.0])
        assert a == pytest.approx([0.375, 0.5])

    def test_ratio_stable_across_h(self):
        ratios = [extension_ratio(DISK, "x", h)[0] for h in (1 / 64, 1 / 128, 1 / 256)]
        assert max(ratios) <= 1.3 * min(ratios)

    def test_chain_differences_stable(self, disk64):
        r7 = exterior_setup(DISK, 1 / 128, depth=7)
        for fam in ("x", "re_z2", "trig"):
            best = []
            for r, h in ((disk64, 1 / 64), (r7, 1 / 128)):
                u = sample(DISK, fam, h, box=ball_box(DISK))
                best.append(chain_differences(u, r, build_all_chains(r)).max())
            assert max(best) < 10
            assert max(best) <= 1.25 * min(best)

    def test_boundary_continuity(self):
        # max |Eu - u(boundary point)| over exterior cells within 2h of the circle
        errs = []
        for h in (1 / 64, 1 / 128, 1 / 256):
            r = exterior_setup(DISK, h)
            u = sample(DISK, "x", h, box=ball_box(DISK))
            ext = extend_exterior(u, DISK, r).values
            z = u.points()
            near = (u.mask == RegionTag.EXTERIOR) & ext.defined
            near[near] = distance_to_boundary(z[near], DISK) < 2 * h
            errs.append(np.max(np.abs(ext.values[near] - (z[near] / np.abs(z[near])).real)))
        assert errs[0] / errs[1] >= 2
        assert errs[1] / errs[2] >= 2


@pytest.fixture(scope="module")
def mi():
    return build_map(DISK, "interior")


class TestInnerExtension:
    def test_constant(self, mi):
        u = sample(DISK, "const:c=-2.5", 1 / 64)
        core = core_mask(u, 1 / 8, mi)
        ext = inner_extend(u.replace(np.where(core, u.values, np.nan)), 1 / 8, mi, DISK)
        inside = u.mask != RegionTag.EXTERIOR
        assert np.max(np.abs(ext.values[inside] + 2.5)) <= 1e-14

    def test_keeps_core_and_fills_shell(self, mi):
        u = sample(DISK, "trig", 1 / 64)
        core = core_mask(u, 1 / 4, mi)
        ext = inner_extend(u.replace(np.where(core, u.values, np.nan)), 1 / 4, mi, DISK)
        inside = u.mask != RegionTag.EXTERIOR
        assert np.array_equal(ext.values[core], u.values[core])
        assert np.all(np.isfinite(ext.values[inside]))
        lo, hi = u.values[core].min(), u.values[core].max()
        assert np.all((ext.values[inside] >= lo - 1e-12) & (ext.values[inside] <= hi + 1e-12))

    def test_ratio_spread(self, mi):
        ratios = [inner_ratio(DISK, "x", eps, 1 / 128, mi=mi)[0] for eps in (1 / 4, 1 / 8, 1 / 16)]
        assert max(ratios) <= 2 * min(ratios)

    def test_locally_lipschitz(self, mi):
        lips = []
        for h in (1 / 128, 1 / 256):
            _, ext = inner_ratio(DISK, "x", 1 / 8, h, mi=mi)
            v, ok = ext.values, ext.defined
            lip = max(np.max(np.abs(np.diff(v, axis=ax))[ok[:-1] & ok[1:] if ax == 0 else ok[:, :-1] & ok[:, 1:]])
                      for ax in (0, 1)) / h
            lips.append(lip)
        assert max(lips) < 20
        assert max(lips) <= 1.5 * min(lips)

    @pytest.mark.parametrize("eps", [0.0, 0.5, 0.7])
    def test_eps_range(self, mi, eps):
        with pytest.raises(ValueError):
            inner_extend(sample(DISK, "x", 1 / 32), eps, mi, DISK)

    def test_undefined_core(self, mi):
        u = sample(DISK, "x", 1 / 32)
        vals = u.values.copy()
        vals[u.values.shape[0] // 2, u.values.shape[1] // 2] = np.nan
        with pytest.raises(ValueError):
            inner_extend(u.replace(vals), 1 / 8, mi, DISK)


class TestNecessity:
    def test_arc_pattern(self, necessity):
        h = 1 / 256
        for j, (z1, z2, phi, info) in necessity.items():
            D = 2.0 ** -j
            P1, P2 = _split_boundary(DISK, z1, z2)
            # cells touching each arc inside B(z1, D), away from the two split points
            z = phi.points()
            ok = phi.defined & (np.abs(z - z1) < D)
            z, v = z[ok], phi.values[ok]
            away = np.minimum(np.abs(z - z1), np.abs(z - z2)) > 2 * h
            on1 = away & (polyline_distance(z, P1) < h)
            on2 = away & (polyline_distance(z, P2) < h)
            assert on1.any() and on2.any()
            assert v[on1].min() >= 0.9
            assert v[on2].max() <= 0.1
            assert info["c0"] == pytest.approx(info["john"] / (info["john"] + 1))

    def test_short_arc_is_p1(self, necessity):
        z1, z2, _, info = necessity[2]
        P1, P2 = _split_boundary(DISK, z1, z2)
        assert info["P1_diam"] <= 2.0 ** -2 + 1e-3
        assert np.abs(P1 - z1).max() <= 0.3

    def test_support(self, necessity):
        for j, (z1, _, phi, _) in necessity.items():
            ok = phi.defined
            far = np.abs(phi.points()[ok] - z1) > 2 * 2.0 ** -j
            assert np.all(phi.values[ok][far] == 0)
            assert np.all((phi.values[ok] >= 0) & (phi.values[ok] <= 1))

    def test_gradient_scaling(self, necessity):
        p = 1.5
        vals = [sobolev_seminorm(phi, p).integral / (2.0 ** -j) ** (2 - p)
                for j, (_, _, phi, _) in necessity.items()]
        assert max(vals) <= 2 * min(vals)

    def test_endpoint_off_boundary(self):
        with pytest.raises(ValueError, match="not on the boundary"):
            necessity_test_function(DISK, 0.5, 1.0, h=1 / 32)

    def test_c1_range(self):
        with pytest.raises(ValueError, match="c1"):
            necessity_test_function(DISK, 1.0, 1j, c1=0.5, h=1 / 32)

    def test_degenerate_split(self):
        with pytest.raises(ValueError, match="degenerate"):
            necessity_test_function(DISK, 1.0, np.exp(1e-6j), h=1 / 32)

    def test_slit_rejected(self):
        with pytest.raises(ValueError, match="Jordan"):
            necessity_test_function(DomainSpec.slit_disk(1.0, 0.5), 1.0, 1j, h=1 / 32)


def square_grid(f, h):
    g = make_grid((0, 1, 0, 1), h, UNIT_SQUARE)
    g.values[:] = f(g.points())
    return g


class TestLowerBound:
    @pytest.mark.parametrize("p", [1.2, 1.5, 2.0])
    def test_linear_ramp(self, p):
        rep = lower_bound_check(square_grid(lambda z: 2 * z.real - 0.5, 1 / 64), p, 0.2)
        assert rep["projections"]["A0_x"] == pytest.approx(0.25)
        assert rep["projections"]["A1_x"] == pytest.approx(0.25)
        assert rep["status"] == "Applicable"
        assert rep["ratio"] == pytest.approx(2 ** p, rel=1e-9)

    def test_constant_not_applicable(self):
        rep = lower_bound_check(square_grid(lambda z: np.full(z.shape, 0.5), 1 / 32), 1.5, 0.1)
        assert rep["status"] == "Not-Applicable"
        assert rep["projections"]["A0_x"] == rep["projections"]["A1_x"] == 0

    def test_smoothed_step_growth(self):
        p = 1.5
        f = parse_family
        ratios = [lower_bound_check(square_grid(f(f"ramp:w={w}"), 1 / 1024), p, 0.2)["ratio"]
                  for w in (1 / 8, 1 / 16, 1 / 32)]
        # int |u'|^p = w (1/w)^p per unit height
        for w, r in zip((1 / 8, 1 / 16, 1 / 32), ratios):
            assert r == pytest.approx(w ** (1 - p), rel=0.02)
        for a, b in zip(ratios, ratios[1:]):
            assert b / a == pytest.approx(2 ** (p - 1), rel=0.02)

    def test_needs_square(self):
        g = make_grid((0, 1, 0, 0.5), 1 / 16, UNIT_SQUARE)
        g.values[:] = 0.0
        with pytest.raises(ValueError, match="square"):
            lower_bound_check(g, 1.5, 0.1)
