import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sobex.geom import (DomainError, DomainSpec, RegionTag, classify, diameter, distance_to_boundary,
                        domain_from_dict, inversion, invert, load_domain, unit_disk, unit_square)

coord = st.floats(-3, 3, allow_nan=False)


class TestDistance:
    def test_disk_centre(self, disk):
        assert distance_to_boundary(0j, disk) == pytest.approx(1.0)

    def test_disk_outside(self, disk):
        assert distance_to_boundary(2 + 0j, disk) == pytest.approx(1.0)

    def test_square_edges(self, square):
        assert distance_to_boundary(0.3 + 0.4j, square) == pytest.approx(0.3)

    def test_slit_counts_both_sides(self, slit):
        # the slit runs along the positive real axis from the rim inwards
        above = distance_to_boundary(0.75 + 0.01j, slit)
        below = distance_to_boundary(0.75 - 0.01j, slit)
        assert above == pytest.approx(0.01, abs=1e-12)
        assert below == pytest.approx(0.01, abs=1e-12)

    @given(coord, coord, coord, coord)
    def test_one_lipschitz(self, x1, y1, x2, y2):
        for d in (unit_disk(), unit_square(), DomainSpec.slit_disk(1.0, 0.5)):
            p, q = complex(x1, y1), complex(x2, y2)
            assert abs(distance_to_boundary(p, d) - distance_to_boundary(q, d)) <= abs(p - q) + 1e-12


class TestClassify:
    def test_tags(self):
        d = DomainSpec.disk(0j, 1.0, boundary_tolerance=1e-9)
        assert classify(0j, d) == RegionTag.INTERIOR
        assert classify(2 + 0j, d) == RegionTag.EXTERIOR
        assert classify(1 + 0j, d) == RegionTag.BOUNDARY

    @given(coord, coord)
    def test_interior_has_positive_distance(self, x, y):
        for d in (unit_disk(), unit_square(), DomainSpec.power_cusp(2.0, 1.0)):
            z = complex(x, y)
            if classify(z, d) == RegionTag.INTERIOR:
                assert distance_to_boundary(z, d) > 0

    @given(coord, coord)
    def test_boundary_iff_within_band(self, x, y):
        d = unit_square()
        z = complex(x, y)
        assert (classify(z, d) == RegionTag.BOUNDARY) == (distance_to_boundary(z, d) <= d.tol)


class TestInversion:
    def test_point_image(self):
        assert inversion(2 + 0j, 0j) == pytest.approx(0.5)

    def test_unit_circle_fixed(self, disk):
        img = invert(disk, 0j)
        assert img.unbounded
        assert img.center == pytest.approx(0j)
        assert img.radius == pytest.approx(1.0)
        t = np.linspace(0, 2 * np.pi, 50)
        z = np.exp(1j * t)
        assert np.allclose(inversion(z, 0j), z)

    @given(coord, coord)
    def test_involution(self, x, y):
        y0 = complex(x, y)
        c = 0.2 - 0.1j
        if abs(y0 - c) < 1e-3:
            return
        back = inversion(inversion(y0, c), c)
        assert abs(back - y0) <= 1e-9 * max(1.0, abs(y0))

    def test_polygon_round_trip(self, square):
        x = 0.5 + 0.5j
        twice = invert(invert(square, x, tol=1e-5), x, tol=1e-5)
        v = np.array(twice.vertices)
        # every original vertex is recovered, the rest lie on the square's edges
        for c in square.vertices:
            assert np.abs(v - c).min() < 1e-9
        assert distance_to_boundary(v, square).max() < 1e-5

    def test_centre_must_be_inside(self, square):
        with pytest.raises(DomainError):
            invert(square, 2 + 2j)


class TestDiameter:
    def test_known(self, disk, square):
        assert diameter(disk) == 2.0
        assert diameter(square) == pytest.approx(math.sqrt(2))

    def test_slit_disk_brute_force(self, slit):
        pts = slit.boundary_polyline(2048)
        brute = np.abs(pts[:, None] - pts[None, :]).max()
        assert diameter(slit) == pytest.approx(brute, rel=1e-5)


class TestValidation:
    @pytest.mark.parametrize("obj, field", [
        ({"kind": "disk", "radius": -1}, "radius"),
        ({"kind": "slit_disk", "radius": 1, "depth": 2}, "depth"),
        ({"kind": "power_cusp", "alpha": 0.5, "scale": 1}, "alpha"),
        ({"kind": "polygon", "vertices": [[0, 0], [1, 0]]}, "vertices"),
        ({"kind": "blob"}, "kind"),
        ({"kind": "disk", "radius": 1, "colour": "red"}, "colour"),
    ])
    def test_errors_name_the_field(self, obj, field):
        with pytest.raises(DomainError, match=field):
            domain_from_dict(obj)

    def test_clockwise_polygon_rejected(self):
        with pytest.raises(DomainError):
            DomainSpec.polygon([0, 1j, 1 + 1j, 1])

    def test_self_intersecting_rejected(self):
        with pytest.raises(DomainError):
            DomainSpec.polygon([0, 1 + 1j, 1, 1j])

    def test_load_reports_line(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{\n "kind": "disk",\n "radius": \n}')
        with pytest.raises(DomainError, match="line 4"):
            load_domain(p)

    def test_load_round_trip(self, tmp_path):
        p = tmp_path / "sq.json"
        p.write_text(json.dumps({"kind": "polygon", "vertices": [[0, 0], [1, 0], [1, 1], [0, 1]]}))
        assert load_domain(p) == unit_square()
