"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line; the lines are printed together in the
terminal summary (see ``conftest.py``).  Tolerances and runtime limits are the
contract values and are not relaxed when a check fails.
"""

import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from cuspscatter.dynamics import (compute_a0, first_variation, horosphere_quadrature_phi,
                                  perturbation_family, shoot_scattered)
from cuspscatter.geodesics import (enumerate_all, enumerate_scattered, estimate_abscissa,
                                   sojourn_time_closed_form)
from cuspscatter.hypcore import UhpPoint
from cuspscatter.io import Pipeline, RunConfig
from cuspscatter.parametrix import eval_phi_entry
from cuspscatter.surfaces import ConformalBump, builtin_surface
from cuspscatter.zeros import (count_zeros_rect, log_line_function, log_line_zeros,
                               model_zeros_exc, series_function)

ELL = 0.5
RESULTS = []


def _y0(ell):
    # top-vertex height of the two-cusp pentagon, written out independently
    return 0.5 / (math.sqrt(2.0) + math.sqrt(1.0 + math.exp(-2.0 * ell)))


def _report(number, ok, detail):
    RESULTS.append(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def two_cusp_pipeline(tmp_path_factory):
    cfg = RunConfig(surface="pentagon2", surface_params={"ell": ELL}, t_max=8.0,
                    out_dir=str(tmp_path_factory.mktemp("two")))
    return Pipeline(cfg)


@pytest.fixture(scope="module")
def one_cusp_pipeline(tmp_path_factory):
    cfg = RunConfig(surface="pentagon1", t_max=12.0, out_dir=str(tmp_path_factory.mktemp("one")))
    return Pipeline(cfg)


def test_criterion_01_two_cusp_sojourn_minima():
    start = time.perf_counter()
    spec = builtin_surface("pentagon2", ell=ELL)
    t0 = -2.0 * math.log(_y0(ELL))
    worst_gap = 0.0
    firsts = {}
    for pair in [(1, 1), (1, 2)]:
        recs = enumerate_scattered(spec, *pair, 6.0)
        firsts[pair] = recs
        for rec in recs:
            if abs(rec.sojourn_time - recs[0].sojourn_time) > 1e-9:
                break
            closed = sojourn_time_closed_form(spec, rec.representative, *pair)
            shot = shoot_scattered(spec, rec).sojourn_time
            worst_gap = max(worst_gap, abs(closed - shot))
    levels = sorted({round(r.sojourn_time, 9) for r in firsts[(1, 2)]})
    second = levels[1]
    elapsed = time.perf_counter() - start
    minima = [firsts[p][0].sojourn_time for p in firsts]
    ok = (all(abs(m - t0) <= 1e-6 for m in minima) and worst_gap <= 1e-6
          and abs(second - (2 * ELL + t0)) <= 1e-6 and elapsed < 30.0)
    _report(1, ok, f"minima {minima} vs {t0:.12g}; closed-form/shooting gap {worst_gap:.2e}; "
                   f"second (1,2) level {second:.9g} vs 2*ell - 2 log y0 = {2 * ELL + t0:.9g}; "
                   f"{elapsed:.1f} s")


def test_criterion_02_leading_cancellation(two_cusp_pipeline):
    start = time.perf_counter()
    _, det = two_cusp_pipeline.series()
    elapsed = time.perf_counter() - start
    a00 = det.row(0)[0]
    nxt = det.row(0)[1] if len(det.times) > 1 else 0.0
    ok = abs(a00) < 1e-10 and nxt != 0.0
    _report(2, ok, f"a00 = {a00:.12g} at exponent {det.times[0]:.9g}; next exponent "
                   f"{det.times[1]:.9g} with coefficient {nxt:.6g}; {elapsed:.1f} s")


def test_criterion_03_one_cusp_certificate(one_cusp_pipeline):
    start = time.perf_counter()
    recs = one_cusp_pipeline.records()[(1, 1)]
    _, det = one_cusp_pipeline.series()
    cert = one_cusp_pipeline.certificate()
    f, df = series_function(det)
    lo = cert.delta_prime
    n = count_zeros_rect(f, df, (lo, lo + 3.0, -100.0, 100.0))
    elapsed = time.perf_counter() - start
    t0 = recs[0].sojourn_time
    a00 = det.row(0)[0]
    ok = (abs(t0) <= 1e-9 and a00 > 0 and cert.half_plane and math.isfinite(lo)
          and n == 0 and elapsed < 120.0)
    _report(3, ok, f"T0 = {t0:.2e}; a00 = {a00:.6g}; half plane Re s > {lo:.6g} "
                   f"(exceptional radius {cert.exceptional_radius:.4g}); "
                   f"zeros in scan box {n}; {elapsed:.1f} s")


def test_criterion_04_constant_curvature_a0():
    start = time.perf_counter()
    spec = builtin_surface("pentagon2", ell=ELL)
    recs = [r for recs in enumerate_all(spec, 6.0).values() for r in recs][:20]
    bundles = [compute_a0(spec, r) for r in recs]
    elapsed = time.perf_counter() - start
    wronskian = max(abs(b.a0 - 1.0) for b in bundles)
    potential = max(abs(b.a0_potential - 1.0) for b in bundles)
    ok = len(recs) == 20 and wronskian <= 1e-8 and potential <= 1e-8 and elapsed < 60.0
    _report(4, ok, f"{len(recs)} classes; max |a0 - 1| Wronskian {wronskian:.2e}, "
                   f"potential {potential:.2e}; {elapsed:.1f} s")


def test_criterion_05_entry_against_quadrature(two_cusp_pipeline):
    start = time.perf_counter()
    spec = two_cusp_pipeline.surface()
    recs = two_cusp_pipeline.coefficients()
    parametrix, _ = two_cusp_pipeline.series()
    lo = two_cusp_pipeline.certificate().delta_prime
    worst = 0.0
    failures = []
    for pair, model in sorted(parametrix.entries.items()):
        for x in (0.5, 1.0, 2.0):
            for y in (10.0, 20.0, 50.0, 100.0):
                s = complex(lo + x, y)
                try:
                    v, bound = eval_phi_entry(model, s)
                except ValueError as exc:
                    failures.append(f"{pair} {s}: {exc}")
                    continue
                err = abs(v - horosphere_quadrature_phi(spec, recs[pair], s))
                worst = max(worst, err / bound)
                if err > bound:
                    failures.append(f"{pair} {s}: error {err:.3e} > bound {bound:.3e}")
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < 300.0
    detail = f"delta' = {lo:.6g}; worst error/bound {worst:.3f}; {elapsed:.1f} s"
    _report(5, ok, detail + ("; " + "; ".join(failures[:3]) if failures else ""))


def test_criterion_06_one_cusp_abscissa():
    start = time.perf_counter()
    recs = enumerate_scattered(builtin_surface("pentagon1"), 1, 1, 12.0, words=False)
    est = estimate_abscissa(recs, 12.0)
    elapsed = time.perf_counter() - start
    ok = 0.85 <= est <= 1.15 and elapsed < 120.0
    _report(6, ok, f"{len(recs)} classes; estimate {est:.5f}; {elapsed:.1f} s")


def test_criterion_07_log_line_zeros():
    start = time.perf_counter()
    f, df = log_line_function(1.0, math.e, 1.0, 1.0)
    zeros = log_line_zeros(1.0, math.e, 1.0, 1.0, (150.0, 250.0))
    ims = np.array([z.s.imag for z in zeros])
    near = np.abs(ims[:-1] - 200.0) <= 2 * math.pi * 2
    spacing = np.diff(ims)[near]
    spacing_err = float(np.max(np.abs(spacing / (2 * math.pi) - 1.0)))
    res = [z.s.real for z in zeros]
    mismatches = []
    for lo, hi in [(150.0, 200.0), (200.0, 250.0), (170.0, 230.0)]:
        n = count_zeros_rect(f, df, (min(res) - 1.0, max(res) + 1.0, lo, hi))
        found = int(np.sum((ims > lo) & (ims < hi)))
        if n != found:
            mismatches.append(f"[{lo}, {hi}]: count {n}, found {found}")
    elapsed = time.perf_counter() - start
    ok = spacing.size > 0 and spacing_err < 0.01 and not mismatches and elapsed < 60.0
    _report(7, ok, f"{len(zeros)} zeros; max relative spacing error near Im 200 "
                   f"{spacing_err:.2e}; strip counts {'match' if not mismatches else mismatches}; "
                   f"{elapsed:.1f} s")


def test_criterion_08_model_zeros():
    start = time.perf_counter()
    zeros = model_zeros_exc(1.0, 2.0, 50)
    elapsed = time.perf_counter() - start
    resid = max(abs(z.s * np.exp(-z.s) - 2.0) for z in zeros)
    curve = max(abs(z.s.real - math.log(abs(z.s) / 2.0)) for z in zeros)
    ok = len(zeros) == 50 and resid < 1e-10 and curve <= 1e-6 and elapsed < 10.0
    _report(8, ok, f"{len(zeros)} zeros; max residual {resid:.2e}; max distance to curve "
                   f"{curve:.2e}; {elapsed:.2f} s")


def test_criterion_09_bump_variation():
    start = time.perf_counter()
    spec = builtin_surface("pentagon2", ell=ELL)
    target = -2.0 * math.log(_y0(ELL)) + math.log(2.0)
    rec = next(r for r in enumerate_scattered(spec, 1, 2, 5.0)
               if abs(r.sojourn_time - target) < 1e-9)
    bump = ConformalBump(UhpPoint(0.137, 0.3), 0.05, 1.0)
    dT, dlog = first_variation(spec, rec, bump)
    fam = perturbation_family(spec, bump)
    eps = 1e-4
    ends = []
    for sign in (1.0, -1.0):
        member = fam(sign * eps)
        shot = shoot_scattered(member, rec)
        ends.append((shot.sojourn_time, math.log(compute_a0(member, shot).a0)))
    fd_T = (ends[0][0] - ends[1][0]) / (2 * eps)
    fd_log = (ends[0][1] - ends[1][1]) / (2 * eps)
    elapsed = time.perf_counter() - start
    err_T = abs(dT - fd_T) / abs(fd_T)
    err_log = abs(dlog - fd_log) / abs(fd_log)
    ok = err_T < 1e-3 and err_log < 1e-3 and elapsed < 120.0
    _report(9, ok, f"dT {dT:.8g} vs {fd_T:.8g} (rel {err_T:.1e}); d log a0 {dlog:.8g} vs "
                   f"{fd_log:.8g} (rel {err_log:.1e}); {elapsed:.1f} s")


PROPERTY_SUITES = [
    "tests/test_dynamics.py::test_riccati_tracks_jacobi",
    "tests/test_dynamics.py::test_riccati_residual",
    "tests/test_dynamics.py::test_hessian_is_unstable_minus_stable",
    "tests/test_geodesics.py::test_monotone_in_t_max",
    "tests/test_geodesics.py::test_brute_force_completeness_two_cusp",
    "tests/test_geodesics.py::test_brute_force_completeness_one_cusp",
    "tests/test_cli.py::test_pipeline_is_deterministic",
    "tests/test_parametrix.py::test_derivative_matches_difference",
]


def test_criterion_10_property_suites():
    start = time.perf_counter()
    root = Path(__file__).resolve().parent.parent
    out = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                          *PROPERTY_SUITES], cwd=root, capture_output=True, text=True)
    elapsed = time.perf_counter() - start
    summary = out.stdout.strip().splitlines()[-1] if out.stdout.strip() else out.stderr[-200:]
    ok = out.returncode == 0 and elapsed < 300.0
    _report(10, ok, f"{summary}; {elapsed:.1f} s")
