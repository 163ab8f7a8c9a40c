import math

import numpy as np
import pytest

from cuspscatter.dynamics import shoot_scattered
from cuspscatter.geodesics import (brute_force_classes, count_sojourn, enumerate_scattered,
                                   estimate_abscissa, growth_constant, homotopy_id, min_cycle,
                                   normalized_matrix, realizing_geodesic, sojourn_cycles,
                                   sojourn_time_closed_form, spectrum, t_sharp)
from cuspscatter.hypcore import Horoball, IsometryMap, UhpPoint, translation
from cuspscatter.tilewalk import WalkBudgetExceeded

PAIRS2 = [(1, 1), (1, 2), (2, 2)]


def _classes(records):
    """``(x, y, log c)`` of each class, for tolerant comparison."""
    out = []
    for key in records:
        _, x, y, c = key.split(":")
        out.append((float(x), float(y), math.log(float(c))))
    return np.array(sorted(out))


def _covered(a, b, tol) -> bool:
    for row in a:
        d = np.abs(b - row)
        d[:, :2] = np.minimum(d[:, :2], 1.0 - d[:, :2])  # base points live on circles of width 1
        if not np.any(np.all(d < tol, axis=1)):
            return False
    return True


def _same_classes(keys_a, keys_b, tol=1e-6) -> bool:
    # brute force can report one class twice when c rounds differently in the last key digit
    a, b = _classes(keys_a), _classes(keys_b)
    return _covered(a, b, tol) and _covered(b, a, tol)


def test_surface_groups_preserve_orientation(pentagon1, pentagon2):
    for spec in (pentagon1, pentagon2):
        assert all(g.det > 0 for g in spec.generators)


def test_two_cusp_minimum_pair_one_two(pentagon2, y0):
    recs = enumerate_scattered(pentagon2, 1, 2, -2 * math.log(y0) + 0.1)
    assert len(recs) == 1
    assert recs[0].sojourn_time == pytest.approx(-2 * math.log(y0), abs=1e-12)


def test_two_cusp_minima_coincide(two_cusp_records, y0):
    t0 = -2 * math.log(y0)
    for pair in PAIRS2:
        assert two_cusp_records[pair][0].sojourn_time == pytest.approx(t0, abs=1e-12)


def test_two_cusp_second_level_contains_published_value(two_cusp_records, y0):
    # 2 ell - 2 log y0 is a level of the (1,2) spectrum
    target = 2 * 0.5 - 2 * math.log(y0)
    times = np.array([r.sojourn_time for r in two_cusp_records[(1, 2)]])
    assert np.min(np.abs(times - target)) < 1e-9


def test_second_level_at_small_ell(y0):
    # below ell = log(2)/2 the second (1,2) level is 2 ell - 2 log y0
    from cuspscatter.surfaces import builtin_surface, two_cusp_height
    ell = 0.3
    spec = builtin_surface("pentagon2", ell=ell)
    y = two_cusp_height(ell)
    levels = spectrum(enumerate_scattered(spec, 1, 2, 6.0)).times
    assert levels[0] == pytest.approx(-2 * math.log(y), abs=1e-10)
    assert levels[1] == pytest.approx(2 * ell - 2 * math.log(y), abs=1e-10)


def test_empty_below_minimum(pentagon2, pentagon1, y0):
    assert enumerate_scattered(pentagon2, 1, 2, -2 * math.log(y0) - 0.01) == []
    assert enumerate_scattered(pentagon1, 1, 1, -0.01) == []


def test_one_cusp_minimum_zero(one_cusp_records):
    assert abs(one_cusp_records[0].sojourn_time) <= 1e-9


@pytest.mark.parametrize("pair", PAIRS2)
def test_monotone_in_t_max(pentagon2, pair):
    small = {r.homotopy_id: r.sojourn_time for r in enumerate_scattered(pentagon2, *pair, 6.0)}
    big = {r.homotopy_id: r.sojourn_time for r in enumerate_scattered(pentagon2, *pair, 8.0)}
    assert set(small) <= set(big)
    for k, t in small.items():
        assert big[k] == t


def test_records_sorted_and_consistent(two_cusp_records, pentagon2):
    for pair, recs in two_cusp_records.items():
        keys = [(r.sojourn_time, r.homotopy_id) for r in recs]
        assert keys == sorted(keys)
        assert len({r.homotopy_id for r in recs}) == len(recs)
        for r in recs:
            assert r.a0 == 1.0 and r.source == "closed_form"
            assert sojourn_time_closed_form(pentagon2, r.representative, *pair) == pytest.approx(
                r.sojourn_time, abs=1e-10)


def test_closed_form_unit_c_is_zero(pentagon1):
    r = enumerate_scattered(pentagon1, 1, 1, 1.0)[0]
    m = normalized_matrix(pentagon1, r.representative, 1, 1)
    assert abs(m.c) == pytest.approx(1.0, abs=1e-12)
    assert sojourn_time_closed_form(pentagon1, r.representative, 1, 1) == pytest.approx(0.0, abs=1e-12)


def test_closed_form_rejects_trivial_coset(pentagon2):
    with pytest.raises(ValueError):
        sojourn_time_closed_form(pentagon2, pentagon2.cusp(1).parabolic_generator, 1, 1)


@pytest.mark.parametrize("pair", PAIRS2)
def test_parabolic_factors_leave_class_unchanged(two_cusp_records, pentagon2, pair):
    i, j = pair
    pi, pj = pentagon2.cusp(i).parabolic_generator, pentagon2.cusp(j).parabolic_generator
    for r in two_cusp_records[pair][:10]:
        g = r.representative
        for n, m in ((1, 0), (0, 1), (-2, 3), (3, -1)):
            moved = _power(pi, n) @ g @ _power(pj, m)
            assert homotopy_id(pentagon2, moved, i, j) == r.homotopy_id
            assert sojourn_time_closed_form(pentagon2, moved, i, j) == pytest.approx(
                r.sojourn_time, abs=1e-10)


def _power(g: IsometryMap, n: int) -> IsometryMap:
    out = IsometryMap.identity()
    step = g if n >= 0 else g.inverse()
    for _ in range(abs(n)):
        out = out @ step
    return out


def test_closed_form_matches_shooting(two_cusp_records, pentagon2):
    recs = [r for pair in PAIRS2 for r in two_cusp_records[pair]]
    rng = np.random.default_rng(2)
    picks = rng.choice(len(recs), size=20, replace=False)
    for k in picks:
        r = recs[int(k)]
        shot = shoot_scattered(pentagon2, r)
        assert shot.sojourn_time == pytest.approx(r.sojourn_time, abs=1e-8)
        assert shot.homotopy_id == r.homotopy_id


@pytest.mark.parametrize("pair,t_max,length", [((1, 1), 6.0, 6), ((1, 2), 6.0, 6),
                                                ((2, 2), 6.0, 6)])
def test_brute_force_completeness_two_cusp(pentagon2, pair, t_max, length):
    found = {r.homotopy_id for r in enumerate_scattered(pentagon2, *pair, t_max)}
    brute = brute_force_classes(pentagon2, *pair, t_max, length)
    assert _same_classes(found, brute)


def test_brute_force_completeness_one_cusp(pentagon1):
    found = {r.homotopy_id for r in enumerate_scattered(pentagon1, 1, 1, 4.0)}
    brute = brute_force_classes(pentagon1, 1, 1, 4.0, 7)
    assert _same_classes(found, brute)


def test_brute_force_longer_words_find_nothing_new(pentagon2):
    # words two letters longer only add rounding-level duplicates
    found = {r.homotopy_id for r in enumerate_scattered(pentagon2, 1, 2, 5.0)}
    brute = brute_force_classes(pentagon2, 1, 2, 5.0, 7)
    assert _same_classes(found, brute)


def test_no_spurious_cusp_excursions(pentagon2):
    t_max = 6.0
    every = {pair: enumerate_scattered(pentagon2, *pair, t_max + 1.0) for pair in PAIRS2}
    for (i, j) in [(1, 1), (1, 2), (2, 2)]:
        for r in every[(i, j)]:
            if r.sojourn_time > t_max:
                continue
            x0, target = realizing_geodesic(pentagon2, r)
            a_i = pentagon2.cusp(i).a
            ys = np.geomspace(target.diameter * (1 + 1e-9), a_i * (1 - 1e-9), 400)
            others = []
            for (p, q), recs in every.items():
                if i not in (p, q):
                    continue
                for o in recs:
                    if o.homotopy_id == r.homotopy_id and (p, q) == (i, j):
                        continue
                    if p != i:  # the list for (p, i) seen from cusp i is its reversal
                        continue
                    ox, ball = realizing_geodesic(pentagon2, o)
                    for shift in (-1.0, 0.0, 1.0):
                        others.append(Horoball(ox + shift, ball.height))
            for y in ys:
                z = UhpPoint(x0, y)
                assert not any(b.contains(z) for b in others)


def test_counting_and_abscissa(one_cusp_records):
    t0 = one_cusp_records[0].sojourn_time
    assert count_sojourn(one_cusp_records, t0 - 1e-6) == 0
    counts = [count_sojourn(one_cusp_records, t) for t in np.linspace(0, 8, 50)]
    assert counts == sorted(counts)
    with pytest.raises(ValueError):
        estimate_abscissa(one_cusp_records[:10])
    g = growth_constant(one_cusp_records, 1.0)
    times = np.array([r.sojourn_time for r in one_cusp_records])
    assert np.all(np.arange(1, len(times) + 1) <= g * np.exp(times) * (1 + 1e-12))


def test_doubling_t_max_never_loses_classes(pentagon1):
    n4 = len(enumerate_scattered(pentagon1, 1, 1, 4.0))
    n8 = len(enumerate_scattered(pentagon1, 1, 1, 8.0))
    assert n8 >= n4


def test_budget_exhaustion_is_distinct(pentagon1):
    with pytest.raises(WalkBudgetExceeded):
        enumerate_scattered(pentagon1, 1, 1, 8.0, budget=10)


def test_cycles_one_cusp(one_cusp_records):
    times = [r.sojourn_time for r in one_cusp_records]
    cycles = sojourn_cycles({(1, 1): times}, 1)
    assert np.allclose(cycles, sorted(times))
    assert min_cycle({(1, 1): times[0]}, 1) == times[0]


def test_cycles_two_cusp_leading_coincidence(two_cusp_records, y0):
    spectra = {pair: [r.sojourn_time for r in recs] for pair, recs in two_cusp_records.items()}
    cycles = sojourn_cycles(spectra, 2, t_cut=7.0)
    t0 = -2 * math.log(y0)
    # T11 + T22 and 2 T12 both realize the smallest cycle
    lowest = [c for c in cycles if abs(c - 2 * t0) < 1e-9]
    m = {pair: sum(1 for t in spectra[pair] if abs(t - t0) < 1e-9) for pair in spectra}
    assert len(lowest) == m[(1, 1)] * m[(2, 2)] + m[(1, 2)] ** 2
    assert min_cycle({p: t[0] for p, t in spectra.items()}, 2) == pytest.approx(2 * t0)


def test_t_sharp_equals_t0_in_constant_curvature(pentagon2, two_cusp_records):
    minima = {pair: recs[0].sojourn_time for pair, recs in two_cusp_records.items()}
    for (i, j), t in minima.items():
        # the minima sit exactly at the height cap
        assert t + math.log(pentagon2.cusp(i).b * pentagon2.cusp(j).b) >= -1e-12
    ts, lam = t_sharp(pentagon2, minima)
    assert ts == pytest.approx(min_cycle(minima, 2), abs=1e-12)
    assert lam == pytest.approx(math.exp(ts))


def test_t_sharp_capped_by_heights(pentagon2):
    ts, _ = t_sharp(pentagon2, {(1, 1): 10.0, (1, 2): 10.0, (2, 2): 10.0})
    b = pentagon2.cusp(1).b
    assert ts == pytest.approx(-2 * math.log(b * b), abs=1e-12)
