"""Dirichlet-series parametrix of scattering entries and of their determinant.

An entry is modelled as ``(pi/s)^p * sum_n s^-n L_n(s)`` with
``L_n(s) = sum_k a^n_k exp(-s T_k)``, ``p = d/2`` for an entry and
``kappa d / 2`` for the determinant.  Every evaluation comes with a bound
made of two parts: the calibrated asymptotic remainder
``C_rem |s|^(-(N+1)-p) exp(-Re(s) T_sharp)`` and the truncation tail of the
terms beyond the enumeration cut, bounded from the fitted counting growth.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .geodesics import (MULTIPLICITY_TOL, ScatteredGeodesicRecord, estimate_abscissa,
                        growth_constant)

DEFAULT_MARGIN = 0.1
TAIL_REFUSAL = 1e-3


class EvaluationError(ValueError):
    """Evaluation requested where the model gives no controlled value."""


@dataclass(frozen=True)
class DirichletSeriesModel:
    """Truncated generalized Dirichlet series with remainder data.

    Parameters
    ----------
    times : tuple of float
        Strictly increasing ``T_k``; the exponents are ``lambda_k = exp(T_k)``.
    rows : tuple of tuple of float
        ``rows[n][k] = a^n_k`` for ``n = 0..order``.
    abscissa : float
        Growth exponent of the counting function of the terms.
    growth : float
        ``G`` with ``#{T_k <= T} <= G exp(abscissa T)``.
    t_max : float
        Enumeration cut: the model holds every term with ``T_k <= t_max``.
    t_sharp : float
        Remainder exponent ``log lambda_sharp``.
    c_rem : float
        Remainder constant (``nan`` until calibrated).
    power : float
        Exponent ``p`` of the prefactor ``(pi/s)^p``.
    term_bounds : tuple of float
        Per-term coefficient bounds used in the tail, one per row.
    """

    times: tuple
    rows: tuple
    abscissa: float
    growth: float
    t_max: float
    t_sharp: float
    c_rem: float = math.nan
    power: float = 0.5
    term_bounds: tuple = ()
    label: str = ""

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if len(t) and np.any(np.diff(t) <= 0):
            raise ValueError("exponents must be strictly increasing")
        if not self.rows or any(len(r) != len(t) for r in self.rows):
            raise ValueError("every coefficient row needs one entry per exponent")
        if len(self.rows) > 2:
            raise ValueError("series order is limited to 1")
        if len(t) and self.t_sharp > t[0] + 1e-12:
            raise ValueError("lambda_sharp may not exceed lambda_0")

    @property
    def order(self) -> int:
        return len(self.rows) - 1

    @property
    def exponents(self) -> np.ndarray:
        return np.exp(np.asarray(self.times))

    @property
    def lambda_sharp(self) -> float:
        return math.exp(self.t_sharp)

    @property
    def calibrated(self) -> bool:
        return math.isfinite(self.c_rem)

    def row(self, n: int) -> np.ndarray:
        return np.asarray(self.rows[n], dtype=float)

    def L(self, s, n: int = 0):
        """``L_n(s)`` (vectorized over ``s``)."""
        s = np.asarray(s, dtype=complex)
        t = np.asarray(self.times)
        return np.exp(-s[..., None] * t) @ self.row(n)

    def dL(self, s, n: int = 0):
        """Derivative ``-sum a^n_k T_k exp(-s T_k)``."""
        s = np.asarray(s, dtype=complex)
        t = np.asarray(self.times)
        return np.exp(-s[..., None] * t) @ (-t * self.row(n))

    def bracket(self, s):
        """``sum_n s^-n L_n(s)``, the series without its prefactor."""
        s = np.asarray(s, dtype=complex)
        return sum(s ** -n * self.L(s, n) for n in range(self.order + 1))

    def bracket_derivative(self, s):
        s = np.asarray(s, dtype=complex)
        out = self.dL(s, 0)
        for n in range(1, self.order + 1):
            out = out + s ** -n * self.dL(s, n) - n * s ** (-n - 1) * self.L(s, n)
        return out

    def prefactor(self, s):
        s = np.asarray(s, dtype=complex)
        return np.exp(self.power * (math.log(math.pi) - np.log(s)))

    def value(self, s):
        """Full series value ``(pi/s)^p * bracket(s)`` without checks."""
        return self.prefactor(s) * self.bracket(s)

    def derivative(self, s):
        s = np.asarray(s, dtype=complex)
        return self.prefactor(s) * (self.bracket_derivative(s) - self.power / s * self.bracket(s))

    def tail_bound(self, sigma: float, n: int = 0) -> float:
        """Bound on ``sum |a^n_k| exp(-sigma T_k)`` over the terms beyond ``t_max``."""
        delta = self.abscissa
        if sigma <= delta:
            return math.inf
        bound = self.term_bounds[n] if self.term_bounds else float(np.max(np.abs(self.row(n)), initial=0.0))
        q = math.exp(delta - sigma)
        return bound * self.growth * math.exp(delta) * math.exp((delta - sigma) * self.t_max) / (1.0 - q)

    def absolute_sum(self, sigma: float, n: int = 0, start: int = 0) -> float:
        """``sum_{k >= start} |a^n_k| exp(-sigma T_k)`` over the stored terms."""
        t = np.asarray(self.times)[start:]
        return float(np.sum(np.abs(self.row(n)[start:]) * np.exp(-sigma * t)))

    def remainder(self, s: complex) -> float:
        """Calibrated asymptotic remainder at ``s`` (full-value units)."""
        if not self.calibrated:
            return math.inf
        return (self.c_rem * abs(s) ** (-(self.order + 1) - self.power)
                * math.exp(-s.real * self.t_sharp))


def _group_times(times: np.ndarray, values: Sequence[np.ndarray], tol: float = MULTIPLICITY_TOL):
    order = np.argsort(times, kind="stable")
    times = times[order]
    values = [v[order] for v in values]
    starts = np.concatenate([[True], np.diff(times) >= tol]) if len(times) else np.zeros(0, bool)
    idx = np.cumsum(starts) - 1
    out_t = times[starts]
    out_v = [np.bincount(idx, weights=v, minlength=len(out_t)) for v in values]
    return out_t, out_v


def build_series(records: Sequence[ScatteredGeodesicRecord], order: int, t_max: float,
                 t_sharp: float, abscissa: Optional[float] = None, power: float = 0.5,
                 label: str = "") -> DirichletSeriesModel:
    """Collect the classes of one cusp pair into a Dirichlet series.

    Classes with equal sojourn time (within the multiplicity tolerance)
    share one exponent and add their coefficients.  The abscissa is fitted
    from the counting function unless given.

    Raises
    ------
    ValueError
        When ``order`` is not 0 or 1, when order 1 is asked for without
        ``a1`` data, or when there are too few classes to fit the abscissa.
    """
    if order not in (0, 1):
        raise ValueError("series order must be 0 or 1")
    recs = [r for r in records if r.sojourn_time <= t_max]
    if order == 1 and any(r.a1 is None for r in recs):
        raise ValueError("order 1 needs a1 on every record")
    times = np.array([r.sojourn_time for r in recs], dtype=float)
    cols = [np.array([r.a0 for r in recs], dtype=float)]
    if order == 1:
        cols.append(np.array([r.a1 for r in recs], dtype=float))
    bounds = tuple(float(np.max(np.abs(c), initial=0.0)) for c in cols)
    if abscissa is None:
        abscissa = estimate_abscissa(times, t_max)
    growth = growth_constant(times, abscissa)
    t, rows = _group_times(times, cols)
    if len(t) and t_sharp > t[0]:
        t_sharp = float(t[0])
    return DirichletSeriesModel(tuple(t.tolist()), tuple(tuple(r.tolist()) for r in rows),
                                float(abscissa), float(growth), float(t_max), float(t_sharp),
                                power=power, term_bounds=bounds, label=label)


def single_term(T: float, a0: float = 1.0, a1: Optional[float] = None, t_sharp: Optional[float] = None,
                power: float = 0.5) -> DirichletSeriesModel:
    """One-exponent model with no truncation tail (abscissa ``-inf``)."""
    rows = ((a0,),) if a1 is None else ((a0,), (a1,))
    return DirichletSeriesModel((float(T),), rows, -math.inf, 0.0, math.inf,
                                float(T if t_sharp is None else t_sharp), 0.0, power)


def truncation_bound(model: DirichletSeriesModel, s: complex) -> float:
    """Bound on the dropped terms at ``s`` in full-value units."""
    sigma, r = s.real, abs(s)
    pre = (math.pi / r) ** model.power
    return pre * sum(r ** -n * model.tail_bound(sigma, n) for n in range(model.order + 1))


def eval_phi_entry(model: DirichletSeriesModel, s: complex, margin: float = DEFAULT_MARGIN,
                   refusal: float = TAIL_REFUSAL):
    """Evaluate the series with its error bound.

    Returns
    -------
    value : complex
    bound : float
        Calibrated remainder plus truncation tail.

    Raises
    ------
    EvaluationError
        Left of ``abscissa + margin``, or when the truncation tail exceeds
        ``refusal`` times the leading term.
    """
    s = complex(s)
    if not s.real > model.abscissa + margin:
        raise EvaluationError(f"Re s = {s.real:g} is not right of abscissa {model.abscissa:g} + {margin:g}")
    value = complex(model.value(s))
    tail = truncation_bound(model, s)
    lead = leading_magnitude(model, s)
    if tail > refusal * lead:
        raise EvaluationError(f"truncation tail {tail:.3e} exceeds {refusal:g} of the leading term")
    return value, model.remainder(s) + tail


def leading_magnitude(model: DirichletSeriesModel, s: complex) -> float:
    """``|(pi/s)^p a^0_k exp(-s T_k)|`` for the first nonzero leading coefficient."""
    row = model.row(0)
    nz = np.flatnonzero(np.abs(row) > 1e-10 * max(1.0, float(np.max(np.abs(row), initial=0.0))))
    if len(nz) == 0:
        return 0.0
    k = int(nz[0])
    return (math.pi / abs(s)) ** model.power * abs(row[k]) * math.exp(-s.real * model.times[k])


def calibrate_remainder(model: DirichletSeriesModel, oracle: Callable[[complex], complex],
                        grid: Iterable[complex], safety: float = 2.0):
    """Fit ``C_rem`` as ``safety`` times the largest scaled oracle discrepancy.

    The discrepancy at ``s`` is scaled by ``|s|^(N+1+p) exp(Re(s) T_sharp)``.

    Returns
    -------
    model : DirichletSeriesModel
        Copy with ``c_rem`` set.
    ratios : list of float
        Scaled discrepancies per grid point.
    """
    ratios = []
    for s in grid:
        s = complex(s)
        diff = abs(complex(model.value(s)) - complex(oracle(s)))
        ratios.append(diff * abs(s) ** (model.order + 1 + model.power) * math.exp(s.real * model.t_sharp))
    return replace(model, c_rem=safety * max(ratios)), ratios


# ---------------------------------------------------------------------------
# several cusps


@dataclass(frozen=True)
class ParametrixModel:
    """Symmetric matrix of entry series; ``entries`` is keyed by ``(i, j)`` with ``i <= j``."""

    kappa: int
    entries: dict
    d: int = 1
    branch: str = "principal"

    def entry(self, i: int, j: int) -> DirichletSeriesModel:
        return self.entries[(min(i, j), max(i, j))]

    @property
    def order(self) -> int:
        orders = {m.order for m in self.entries.values()}
        if len(orders) != 1:
            raise ValueError("all entries must share one series order")
        return orders.pop()


def _permutation_sign(perm) -> int:
    sign, seen = 1, set()
    for start in range(len(perm)):
        if start in seen:
            continue
        k, length = start, 0
        while k not in seen:
            seen.add(k)
            k = perm[k]
            length += 1
        sign *= -1 if length % 2 == 0 else 1
    return sign


def eval_varphi(model: ParametrixModel, s: complex, margin: float = DEFAULT_MARGIN):
    """Determinant of the entry evaluations with a combined bound.

    For each permutation the product of values ``v_i`` with bounds ``e_i``
    is off by at most ``prod(|v_i| + e_i) - prod(|v_i|)``.
    """
    s = complex(s)
    k = model.kappa
    vals, bnds = {}, {}
    for key, m in model.entries.items():
        vals[key], bnds[key] = eval_phi_entry(m, s, margin)
    total, bound = 0j, 0.0
    for perm in itertools.permutations(range(k)):
        prod, upper, mag = 1.0 + 0j, 1.0, 1.0
        for i in range(k):
            key = (min(i, perm[i]) + 1, max(i, perm[i]) + 1)
            prod *= vals[key]
            mag *= abs(vals[key])
            upper *= abs(vals[key]) + bnds[key]
        total += _permutation_sign(perm) * prod
        bound += upper - mag
    return total, bound


def _product_series(a: tuple, b: tuple, order: int, cut: float):
    """Product of two series given as ``(times, rows)``, truncated in time and order."""
    ta, ra = a
    tb, rb = b
    out_t, out_r = [], [[] for _ in range(order + 1)]
    for k, t in enumerate(ta):
        m = int(np.searchsorted(tb, cut - t + 1e-12, side="right"))
        if m == 0:
            break
        out_t.append(t + tb[:m])
        for n in range(order + 1):
            acc = np.zeros(m)
            for p in range(n + 1):
                acc = acc + ra[p][k] * rb[n - p][:m]
            out_r[n].append(acc)
    if not out_t:
        return np.zeros(0), [np.zeros(0) for _ in range(order + 1)]
    times = np.concatenate(out_t)
    rows = [np.concatenate(r) for r in out_r]
    return _group_times(times, rows)


def assemble_determinant_series(model: ParametrixModel, t_sharp: float,
                                cut: Optional[float] = None, abscissa: Optional[float] = None,
                                label: str = "determinant") -> DirichletSeriesModel:
    """Leibniz expansion of the determinant at the level of series.

    Exponents are sojourn-cycle values; coefficients are signed and
    accumulated per distinct value (including values whose coefficients
    cancel).  The prefactor becomes ``(pi/s)^(kappa d/2)``.

    ``cut`` defaults to the largest value up to which every cycle is
    present: the smallest entry cut plus ``kappa - 1`` times the smallest
    leading time.
    """
    k = model.kappa
    order = model.order
    ents = {key: (np.asarray(m.times), [m.row(n) for n in range(order + 1)])
            for key, m in model.entries.items()}
    t_cut_entry = min(m.t_max for m in model.entries.values())
    t_min = min(m.times[0] for m in model.entries.values() if m.times)
    if cut is None:
        cut = t_cut_entry + (k - 1) * t_min
    all_t, all_r = [], [[] for _ in range(order + 1)]
    for perm in itertools.permutations(range(k)):
        sign = _permutation_sign(perm)
        acc = (np.zeros(1), [np.ones(1)] + [np.zeros(1) for _ in range(order)])
        for i in range(k):
            key = (min(i, perm[i]) + 1, max(i, perm[i]) + 1)
            acc = _product_series(acc, ents[key], order, cut)
        all_t.append(acc[0])
        for n in range(order + 1):
            all_r[n].append(sign * acc[1][n])
    times, rows = _group_times(np.concatenate(all_t), [np.concatenate(r) for r in all_r])
    # counting growth of cycles: use positive weights for the count
    counts_t = np.concatenate(all_t)
    if abscissa is None:
        abscissa = estimate_abscissa(counts_t, cut) if len(counts_t) >= 20 else max(
            m.abscissa for m in model.entries.values())
    growth = growth_constant(counts_t, abscissa)
    # a cycle coefficient is a product of level coefficients, one per factor
    level_max = {key: max(float(np.max(np.abs(r), initial=0.0)) for r in rows_)
                 for key, (_, rows_) in ents.items()}
    prod_max = max(math.prod(level_max[(min(i, p) + 1, max(i, p) + 1)] for i, p in enumerate(perm))
                   for perm in itertools.permutations(range(k)))
    bounds = [prod_max * (n + 1) * k ** n for n in range(order + 1)]
    if len(times) and t_sharp > times[0]:
        t_sharp = float(times[0])
    return DirichletSeriesModel(tuple(times.tolist()), tuple(tuple(r.tolist()) for r in rows),
                                float(abscissa), float(growth), float(cut), float(t_sharp),
                                power=0.5 * k * model.d, term_bounds=tuple(bounds), label=label)


# ---------------------------------------------------------------------------
# serialization


def model_to_dict(model: DirichletSeriesModel) -> dict:
    return {
        "label": model.label,
        "times": list(model.times),
        "rows": [list(r) for r in model.rows],
        "abscissa": model.abscissa,
        "growth": model.growth,
        "t_max": model.t_max,
        "t_sharp": model.t_sharp,
        "c_rem": model.c_rem if model.calibrated else None,
        "power": model.power,
        "term_bounds": list(model.term_bounds),
    }


def model_from_dict(d: dict) -> DirichletSeriesModel:
    return DirichletSeriesModel(tuple(d["times"]), tuple(tuple(r) for r in d["rows"]),
                                float(d["abscissa"]), float(d["growth"]), float(d["t_max"]),
                                float(d["t_sharp"]),
                                math.nan if d.get("c_rem") is None else float(d["c_rem"]),
                                float(d["power"]), tuple(d.get("term_bounds", ())), d.get("label", ""))
