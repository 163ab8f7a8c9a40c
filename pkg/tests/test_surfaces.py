import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cuspscatter.hypcore import UhpPoint
from cuspscatter.surfaces import (ConformalBump, build_pentagon_two_cusp, busemann_margin,
                                  check_free_action, check_negative_curvature, check_relators,
                                  curvature_at, fundamental_lifts, spec_from_json, spec_to_json,
                                  two_cusp_height, vertex_cycle_products, with_bumps)

BUMP_CENTER = UhpPoint(0.3, 0.3)


def test_two_cusp_height_frozen():
    # closed form at ell = 0.5 is 0.193515127 (a published rounding reads 0.1935147)
    assert two_cusp_height(0.5) == pytest.approx(0.1935147, abs=1e-6)
    assert two_cusp_height(0.5) == pytest.approx(0.19351512660551934, abs=1e-15)


def test_two_cusp_height_matches_independent_evaluation(pentagon2, y0):
    assert pentagon2.params["y0"] == pytest.approx(y0, abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-3, 10), st.floats(1e-3, 10))
def test_two_cusp_height_monotone(e1, e2):
    # the closed form increases with ell, towards 1 / (2 (sqrt2 + 1))
    lo, hi = sorted((e1, e2))
    if hi - lo > 1e-6:
        assert two_cusp_height(lo) < two_cusp_height(hi) <= 1 / (2 * (math.sqrt(2) + 1))


def test_two_cusp_height_limit():
    assert two_cusp_height(40.0) == pytest.approx(1 / (2 * (math.sqrt(2) + 1)), abs=1e-15)


def test_two_cusp_rejects_bad_ell():
    with pytest.raises(ValueError):
        build_pentagon_two_cusp(0.0)
    with pytest.raises(ValueError):
        build_pentagon_two_cusp(0.9)


@pytest.mark.parametrize("name", ["pentagon1", "pentagon2"])
def test_relators_are_identity(name, pentagon1, pentagon2):
    spec = pentagon1 if name == "pentagon1" else pentagon2
    products = vertex_cycle_products(spec)
    assert products
    for _, _, _, g in products:
        sign = 1.0 if g.a > 0 else -1.0
        assert np.allclose(sign * g.as_array(), np.eye(2), atol=1e-9)
    assert check_relators(spec)


@pytest.mark.parametrize("name", ["pentagon1", "pentagon2"])
def test_cusp_records(name, pentagon1, pentagon2):
    spec = pentagon1 if name == "pentagon1" else pentagon2
    for c in spec.cusps:
        p = c.parabolic_generator
        assert abs(p.trace ** 2 - 4.0) <= 1e-10
        assert p.fixes(c.fixed_point)
        assert c.width / c.a == pytest.approx(1.0)  # cusp circle at height a has length 1
        assert 0 < c.b <= c.a and c.b_star >= c.b
    assert check_free_action(spec)


def test_one_cusp_has_room_below_height_one(pentagon1):
    # some point of the fundamental domain lies strictly below y = 1
    found = False
    for k, tile in enumerate(pentagon1.tiles):
        z = tile.interior
        for y in np.linspace(0.61, 0.99, 20):
            if pentagon1.tile_contains(k, complex(z.real, y)):
                found = True
    assert found


def test_curvature_without_bumps(pentagon2):
    assert curvature_at(pentagon2, UhpPoint(0.3, 0.3)) == -1.0
    flat = with_bumps(pentagon2, [ConformalBump(BUMP_CENTER, 0.05, 0.0)])
    for z in (BUMP_CENTER, UhpPoint(0.31, 0.29), UhpPoint(0.2, 0.5)):
        assert curvature_at(flat, z) == pytest.approx(-1.0, abs=1e-15)


def test_curvature_at_bump_center_matches_fd_laplacian(pentagon2):
    bump = ConformalBump(BUMP_CENTER, 0.05, 5e-5)
    spec = with_bumps(pentagon2, [bump])
    field = fundamental_lifts(spec)
    x0, y0 = BUMP_CENTER.x, BUMP_CENTER.y

    def phi(x, y):
        return float(field.evaluate(x, y)[0])

    def five_point(h):
        # hyperbolic Laplacian y^2 (phi_xx + phi_yy)
        return y0 ** 2 * (phi(x0 + h, y0) + phi(x0 - h, y0) + phi(x0, y0 + h)
                          + phi(x0, y0 - h) - 4 * phi(x0, y0)) / h ** 2

    h = 1e-4 * y0
    lap = (4 * five_point(h / 2) - five_point(h)) / 3
    expected = math.exp(-2 * phi(x0, y0)) * (-1.0 - lap)
    assert curvature_at(spec, BUMP_CENTER) == pytest.approx(expected, abs=1e-6)


def test_negative_curvature_checks(pentagon2):
    assert check_negative_curvature(pentagon2) == (True, -1.0, -1.0)
    huge = with_bumps(pentagon2, [ConformalBump(BUMP_CENTER, 0.05, 1.0)])
    assert not check_negative_curvature(huge)[0]
    ok1, lo1, hi1 = check_negative_curvature(with_bumps(pentagon2, [ConformalBump(BUMP_CENTER, 0.05, 1e-4)]))
    ok2, lo2, hi2 = check_negative_curvature(with_bumps(pentagon2, [ConformalBump(BUMP_CENTER, 0.05, 5e-5)]))
    assert ok1 and ok2 and hi1 < 0
    # bounds shrink towards -1 with the amplitude
    assert abs(lo2 + 1) < abs(lo1 + 1) and abs(hi2 + 1) <= abs(hi1 + 1)


def test_bump_support_is_below_constant_curvature_heights(pentagon2):
    spec = with_bumps(pentagon2, [ConformalBump(BUMP_CENTER, 0.05, 5e-5)])
    for i in (1, 2):
        assert busemann_margin(spec, i) > 0


def test_bump_outside_fundamental_domain_rejected(pentagon2):
    with pytest.raises(ValueError):
        with_bumps(pentagon2, [ConformalBump(UhpPoint(0.3, 0.01), 0.05, 1e-3)])


@pytest.mark.parametrize("name", ["pentagon1", "pentagon2"])
def test_json_round_trip_is_bit_exact(name, pentagon1, pentagon2):
    spec = pentagon1 if name == "pentagon1" else pentagon2
    spec = with_bumps(spec, [ConformalBump(spec.tiles[0].interior and
                                           UhpPoint.from_complex(spec.tiles[0].interior),
                                           0.01, 1.2345678901234567e-4)])
    text = spec_to_json(spec)
    back = spec_from_json(text)
    assert spec_to_json(back) == text
    for g, h in zip(spec.generators, back.generators):
        assert g.as_array().tobytes() == h.as_array().tobytes()
    assert back.cusps == spec.cusps
    assert back.bumps == spec.bumps
