import math

import numpy as np
import pytest

from sobex.capacity import CapacityError, CapacityProblem, estimate_capacity, separation_ratio
from sobex.geom import DomainSpec


def circle(c, r, n=512):
    return c + r * np.exp(1j * np.linspace(0, 2 * np.pi, n + 1))


def annulus_problem(scale=1.0, h=1 / 64):
    d = DomainSpec.annulus(scale, scale * math.e)
    return CapacityProblem(circle(0, scale), circle(0, scale * math.e), d, h)


def segment(a, b, n=16):
    return a + (b - a) * np.linspace(0, 1, n)


def random_configs(rng, count=20):
    out = []
    while len(out) < count:
        c = rng.uniform(-0.6, 0.6, (2, 2)) @ [1, 1j]
        ang = rng.uniform(0, np.pi, 2)
        ln = rng.uniform(0.2, 0.6, 2)
        E = segment(c[0] - ln[0] / 2 * np.exp(1j * ang[0]), c[0] + ln[0] / 2 * np.exp(1j * ang[0]))
        F = segment(c[1] - ln[1] / 2 * np.exp(1j * ang[1]), c[1] + ln[1] / 2 * np.exp(1j * ang[1]))
        if max(np.abs(E).max(), np.abs(F).max()) > 0.9:
            continue
        if np.abs(E[:, None] - F[None, :]).min() < 0.15:
            continue
        out.append((E, F))
    return out


@pytest.fixture(scope="module")
def coupled():
    rng = np.random.default_rng(11)
    disk = DomainSpec.disk()
    rows = []
    for E, F in random_configs(rng):
        caps = [estimate_capacity(CapacityProblem(E, F, disk, h)).value for h in (1 / 32, 1 / 64)]
        seps = [separation_ratio(E, F, disk, depth=k) for k in (6, 7)]
        rows.append((caps, seps))
    return rows


class TestEstimate:
    def test_annulus_oracle(self):
        est = estimate_capacity(annulus_problem(h=1 / 128))
        assert est.value == pytest.approx(2 * math.pi, rel=0.05)
        assert est.residual <= 1e-8

    def test_grid_convergence(self):
        a, b = (estimate_capacity(annulus_problem(h=h)).value for h in (1 / 32, 1 / 64))
        assert abs(a - b) / b <= 0.10

    def test_scaling_invariance(self):
        a = estimate_capacity(annulus_problem(1.0)).value
        b = estimate_capacity(annulus_problem(2.0)).value
        assert b == pytest.approx(a, rel=0.01)

    def test_monotone_in_domain(self):
        E = 0.5 * np.exp(1j * np.linspace(-0.3, 0.3, 20))
        small = estimate_capacity(CapacityProblem(E, -E, DomainSpec.disk(0, 1.0), 1 / 64))
        large = estimate_capacity(CapacityProblem(E, -E, DomainSpec.disk(0, 1.5), 1 / 64))
        assert small.value <= large.value * (1 + 1e-8)

    def test_decreases_with_separation(self):
        disk = DomainSpec.disk()
        vals = [estimate_capacity(CapacityProblem(segment(-a - 0.3, -a), segment(a, a + 0.3), disk, 1 / 64)).value
                for a in (0.1, 0.2, 0.35, 0.5)]
        assert all(x > y for x, y in zip(vals, vals[1:]))

    def test_point_condensers_are_nonnegative(self):
        est = estimate_capacity(CapacityProblem([0.3 + 0j], [-0.3 + 0j], DomainSpec.disk(), 1 / 32))
        assert est.value >= 0

    def test_too_close(self):
        with pytest.raises(CapacityError):
            estimate_capacity(CapacityProblem(segment(-0.5, -0.02), segment(0.02, 0.5), DomainSpec.disk(), 1 / 32))

    def test_bad_step(self):
        with pytest.raises(CapacityError):
            CapacityProblem([0j], [0.5 + 0j], DomainSpec.disk(), 0.0)


class TestSeparation:
    def test_opposite_arcs(self, disk):
        a = np.exp(1j * np.linspace(-0.2, 0.2, 30))
        assert separation_ratio(a, -a, disk) >= 0.1

    def test_translated_far(self):
        strip = DomainSpec.polygon([0, 12, 12 + 1j, 1j])
        E = segment(0.3 + 0.3j, 0.3 + 0.7j)
        r = [separation_ratio(E, E + t, strip) for t in (2, 5, 11)]
        assert r[0] > r[1] > r[2]
        assert r[2] < 0.05

    def test_needs_continua(self, disk):
        with pytest.raises(CapacityError):
            separation_ratio([0.1 + 0j], segment(0.3, 0.5), disk)

    def test_slit_blocks_inner_distance(self, slit):
        E = segment(0.7 + 0.05j, 0.9 + 0.05j)
        # the euclidean gap is 0.1, the inner path goes round the slit tip
        assert separation_ratio(E, E.conj(), slit) < separation_ratio(E, E.conj(), DomainSpec.disk())


class TestComparability:
    def test_capacity_floor(self, coupled):
        floors = []
        for k in range(2):
            caps = [c[k] for c, s in coupled if s[1] >= 0.5]
            assert caps, "no configuration reached ratio 0.5"
            floors.append(min(caps))
        assert min(floors) > 0
        assert floors[1] == pytest.approx(floors[0], rel=0.25)

    def test_inner_capacity_lemma(self, coupled):
        c0 = np.median([c[1] for c, _ in coupled])
        lows = []
        for k in range(2):
            seps = [s[k] for c, s in coupled if c[1] >= c0]
            lows.append(min(seps))
        assert min(lows) > 0
        assert lows[1] == pytest.approx(lows[0], rel=0.25)
