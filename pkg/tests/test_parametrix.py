import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cuspscatter.dynamics import horocycle_integral_exact, horosphere_quadrature_phi
from cuspscatter.geodesics import t_sharp
from cuspscatter.parametrix import (DirichletSeriesModel, EvaluationError, ParametrixModel,
                                    assemble_determinant_series, build_series,
                                    calibrate_remainder, eval_phi_entry, eval_varphi,
                                    model_from_dict, model_to_dict, single_term)


def _synthetic(times, a0, a1=None, t_max=10.0):
    rows = (tuple(a0),) if a1 is None else (tuple(a0), tuple(a1))
    return DirichletSeriesModel(tuple(times), rows, 0.5, 1.0, t_max, times[0], 0.0)


def test_single_term_value():
    m = single_term(1.0)
    s = 2 + 3j
    assert complex(m.value(s)) == pytest.approx(np.sqrt(np.pi / s) * np.exp(-s), rel=1e-14)
    v, bound = eval_phi_entry(m, s)
    assert bound == 0.0 and v == pytest.approx(complex(m.value(s)))


def test_multiplicities_add(two_cusp_records, y0):
    recs = two_cusp_records[(1, 1)]
    model = build_series(recs, 0, 8.0, -2 * math.log(y0))
    t0 = -2 * math.log(y0)
    m = sum(1 for r in recs if abs(r.sojourn_time - t0) < 1e-9)
    assert model.times[0] == pytest.approx(t0, abs=1e-12)
    assert model.row(0)[0] == m
    assert sum(model.row(0)) == len(recs)
    assert len(model.times) == len(set(np.round([r.sojourn_time for r in recs], 8)))


def test_validation():
    with pytest.raises(ValueError):
        DirichletSeriesModel((2.0, 1.0), ((1.0, 1.0),), 0.0, 1.0, 3.0, 1.0)
    with pytest.raises(ValueError):
        DirichletSeriesModel((1.0,), ((1.0,),), 0.0, 1.0, 3.0, 1.5)


def test_order_one_needs_a1(two_cusp_records):
    with pytest.raises(ValueError):
        build_series(two_cusp_records[(1, 2)], 1, 8.0, 3.0)


def test_refuses_left_of_abscissa():
    m = _synthetic((1.0, 2.0), (1.0, 1.0))
    with pytest.raises(EvaluationError):
        eval_phi_entry(m, 0.55 + 10j)


@settings(max_examples=50, deadline=None)
@given(st.floats(1.0, 6.0), st.floats(-200, 200))
def test_conjugate_symmetry(sigma, t):
    m = _synthetic((1.0, 1.7, 2.4), (1.0, -2.0, 0.5), (0.3, 0.1, -1.0))
    s = complex(sigma, t)
    assert complex(m.value(s.conjugate())) == pytest.approx(complex(m.value(s)).conjugate(),
                                                            rel=1e-12, abs=1e-300)


@settings(max_examples=50, deadline=None)
@given(st.floats(1.0, 6.0), st.floats(-100, 100))
def test_derivative_matches_difference(sigma, t):
    m = _synthetic((1.0, 1.7, 2.4), (1.0, -2.0, 0.5), (0.3, 0.1, -1.0))
    s, h = complex(sigma, t), 1e-5
    fd = (complex(m.value(s + h)) - complex(m.value(s - h))) / (2 * h)
    assert complex(m.derivative(s)) == pytest.approx(fd, rel=1e-8, abs=1e-8 * abs(fd) + 1e-14)


def _two_by_two(order=1):
    pick = lambda a0, a1: (a0,) if order == 0 else (a0, a1)
    e11 = _synthetic((1.0, 2.0), *pick((2.0, 1.0), (0.5, -0.25)))
    e12 = _synthetic((1.2,), *pick((1.0,), (0.1,)))
    e22 = _synthetic((1.0, 3.0), *pick((2.0, 4.0), (0.2, 0.3)))
    return ParametrixModel(2, {(1, 1): e11, (1, 2): e12, (2, 2): e22})


def _entry_determinant(model, s):
    e = {k: complex(m.value(s)) for k, m in model.entries.items()}
    return e[(1, 1)] * e[(2, 2)] - e[(1, 2)] ** 2


@pytest.mark.parametrize("s", [2 + 1j, 3 - 20j, 1.5 + 100j])
def test_determinant_series_is_determinant(s):
    model = _two_by_two(order=0)
    det = assemble_determinant_series(model, 2.0)
    assert complex(det.value(s)) == pytest.approx(_entry_determinant(model, s), rel=1e-12)
    assert det.power == 1.0


def test_first_order_determinant_drops_only_second_order():
    model = _two_by_two(order=1)
    det = assemble_determinant_series(model, 2.0)
    gaps = []
    for t in (50.0, 100.0, 200.0, 400.0):
        s = complex(2.0, t)
        gaps.append(abs(complex(det.value(s)) - _entry_determinant(model, s)) * abs(s) ** 3)
    # (pi/s) s^-2 times a bounded almost-periodic sum
    assert max(gaps) < 10 * min(gaps) and max(gaps) < 100


def test_determinant_exponents_are_cycle_sums():
    model = _two_by_two(order=0)
    det = assemble_determinant_series(model, 2.0)
    sums = {round(a + b, 12) for a in (1.0, 2.0) for b in (1.0, 3.0)} | {2.4}
    assert {round(t, 12) for t in det.times} == sums
    # T = 2 collects 2*2 from the diagonal and -1 from the off-diagonal square
    k = det.times.index(2.0)
    assert det.row(0)[k] == 4.0


def test_eval_varphi_bound_contains_determinant():
    model = _two_by_two()
    model = replace(model, entries={k: replace(m, c_rem=1.0) for k, m in model.entries.items()})
    s = 3 + 5j
    v, b = eval_varphi(model, s)
    e = {k: complex(m.value(s)) for k, m in model.entries.items()}
    assert v == pytest.approx(e[(1, 1)] * e[(2, 2)] - e[(1, 2)] ** 2, rel=1e-12)
    assert b > 0


def test_two_cusp_determinant_leading_coefficient(two_cusp_records, pentagon2, y0):
    minima = {p: r[0].sojourn_time for p, r in two_cusp_records.items()}
    entries = {p: build_series(r, 0, 8.0, minima[p]) for p, r in two_cusp_records.items()}
    ts, _ = t_sharp(pentagon2, minima)
    det = assemble_determinant_series(ParametrixModel(2, entries), ts)
    assert det.times[0] == pytest.approx(-4 * math.log(y0), abs=1e-12)
    m = {p: e.row(0)[0] for p, e in entries.items()}
    assert det.row(0)[0] == m[(1, 1)] * m[(2, 2)] - m[(1, 2)] ** 2


def test_dominant_term_at_large_s(two_cusp_records, y0):
    model = build_series(two_cusp_records[(1, 2)], 0, 8.0, -2 * math.log(y0))
    s = 40.0
    lead = math.sqrt(math.pi / s) * model.row(0)[0] * math.exp(-s * model.times[0])
    assert complex(model.value(s)).real == pytest.approx(lead, rel=0.01)


def _calibrated_entry(records, order, y0):
    model = build_series(records, order, 8.0, -2 * math.log(y0))
    grid = [complex(model.abscissa + 0.1 + x, y) for x in (1, 1.5, 2, 3) for y in (5, 7, 15, 30, 70)]
    oracle = lambda s: sum(np.exp(-s * r.sojourn_time) for r in records) * horocycle_integral_exact(s)
    return calibrate_remainder(model, oracle, grid)[0], oracle


def test_entry_against_quadrature(two_cusp_records, pentagon2, y0):
    recs = two_cusp_records[(1, 2)]
    model, _ = _calibrated_entry(recs, 0, y0)
    s = 3 + 40j
    v, bound = eval_phi_entry(model, s)
    oracle = horosphere_quadrature_phi(pentagon2, recs, s)
    assert abs(v - oracle) <= bound
    assert abs(v - oracle) <= 0.02 * abs(oracle)


def test_first_order_term_improves_entry(two_cusp_records, y0):
    recs = [replace(r, a1=0.375) for r in two_cusp_records[(1, 2)]]
    zero, oracle = _calibrated_entry(recs, 0, y0)
    one, _ = _calibrated_entry(recs, 1, y0)
    s = 3 + 40j
    err0 = abs(complex(zero.value(s)) - oracle(s))
    err1 = abs(complex(one.value(s)) - oracle(s))
    assert err1 < err0 * 5 / abs(s)
    assert one.c_rem < zero.c_rem


def test_json_round_trip(two_cusp_records, y0):
    model, _ = _calibrated_entry(two_cusp_records[(1, 2)], 0, y0)
    back = model_from_dict(json.loads(json.dumps(model_to_dict(model))))
    assert back == model
    raw = replace(model, c_rem=math.nan)
    assert not model_from_dict(model_to_dict(raw)).calibrated
