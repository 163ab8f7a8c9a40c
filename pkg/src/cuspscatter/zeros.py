"""Zero-free regions and zero localization for Dirichlet-series models.

Three tools live here.  ``certify_zero_free`` checks, inequality by
inequality, that the leading exponential dominates the rest of a model on a
region.  ``log_line_zeros`` and ``model_zeros_exc`` locate the zeros of two
explicit two-term families by Newton iteration from asymptotic seeds.
``count_zeros_rect`` and ``scan_zeros`` are brute-force argument-principle
oracles for any function with a known derivative.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .parametrix import DirichletSeriesModel

BUDGET_SHARE = 1.0 / 3.0
WINDING_TOL = 0.05


class ContourError(RuntimeError):
    """A winding number could not be computed reliably."""


@dataclass(frozen=True)
class ZeroFreeCertificate:
    """Region where a model is proven free of zeros by term domination.

    The region is ``{Re s > delta_prime}`` when ``half_plane`` is set and
    ``{delta_prime < Re s <= C log|Im s|}`` otherwise; in both cases the part
    with ``|s|`` (half-plane) or ``|Im s|`` (log region) at most
    ``exceptional_radius`` is excluded and may hold finitely many zeros.
    ``ledger`` records each of the three ratios, all at most one third.
    """

    delta_prime: float
    C: Optional[float]
    half_plane: bool
    exceptional_radius: float
    order: int
    ledger: dict = field(default_factory=dict)

    def contains(self, s: complex) -> bool:
        if not s.real > self.delta_prime:
            return False
        if self.half_plane:
            return abs(s) > self.exceptional_radius
        return (abs(s.imag) > max(self.exceptional_radius, 1.0)
                and s.real <= self.C * math.log(abs(s.imag)))


@dataclass(frozen=True)
class ZeroRecord:
    s: complex
    newton_residual: float
    method: str
    confirmed: bool = False


# ---------------------------------------------------------------------------
# certification


def _leading_ratio(model: DirichletSeriesModel, sigma: float, a00: float) -> float:
    """Non-leading order-0 terms plus tail, relative to the leading term, at ``Re s = sigma``."""
    t0 = model.times[0]
    rest = model.absolute_sum(sigma, 0, start=1) + model.tail_bound(sigma, 0)
    return rest * math.exp(sigma * t0) / abs(a00)


def certify_zero_free(model: DirichletSeriesModel, C: Optional[float] = None,
                      N: Optional[int] = None, step: float = 0.01,
                      sigma_max: Optional[float] = None) -> ZeroFreeCertificate:
    """Certify a zero-free region for ``model`` with the one-third budget.

    ``delta_prime`` is the smallest grid abscissa (spacing ``step``) from
    which the non-leading terms of ``L_0``, truncation tail included, stay
    below a third of the leading term.  The lower-order rows and the
    calibrated remainder each get another third, which fixes the
    exceptional radius.  With ``lambda_sharp = lambda_0`` the certificate
    covers a half-plane; otherwise it covers ``Re s <= C log|Im s|`` and
    needs ``N + 1 > C log(lambda_0 / lambda_sharp)``.

    Raises
    ------
    ValueError
        When the leading coefficient vanishes, the remainder is not
        calibrated, ``N`` exceeds the model order, or ``C`` is missing or
        too large for ``N`` in the log-region case.
    """
    order = model.order if N is None else int(N)
    if order > model.order:
        raise ValueError(f"model has order {model.order}, certificate asked for {order}")
    if not model.calibrated:
        raise ValueError("the remainder constant is not calibrated")
    row0 = model.row(0)
    a00 = float(row0[0])
    if abs(a00) <= 1e-10 * max(1.0, float(np.max(np.abs(row0)))):
        raise ValueError("leading coefficient vanishes; use the log-line analysis")
    t0 = model.times[0]
    delta = model.abscissa
    ledger = {}
    # first third: tail of L_0 against its leading term
    if len(model.times) == 1 and model.tail_bound(max(delta, 0.0) + 1.0, 0) == 0.0:
        delta_prime = delta
        ledger["tail_vs_leading"] = 0.0
    else:
        hi = sigma_max if sigma_max is not None else max(delta, t0, 0.0) + 60.0
        start = delta + step if math.isfinite(delta) else min(t0, 0.0) - 60.0
        grid = np.arange(start, hi + step, step)
        ratios = np.array([_leading_ratio(model, g, a00) for g in grid])
        good = ratios <= BUDGET_SHARE
        if not good[-1]:
            raise ValueError("the leading term never dominates on the search range")
        # smallest grid point from which every larger one is good
        k = len(good) - 1
        while k > 0 and good[k - 1]:
            k -= 1
        delta_prime = float(grid[k])
        ledger["tail_vs_leading"] = float(ratios[k])
    sigma_ref = delta_prime if math.isfinite(delta_prime) else t0
    # second third: lower-order rows, worst at the left edge
    beta = []
    for n in range(1, order + 1):
        b = model.absolute_sum(sigma_ref, n) + model.tail_bound(sigma_ref, n)
        beta.append(b * math.exp(sigma_ref * t0) / abs(a00))

    def lower(r):
        return sum(bn * r ** -(n + 1) for n, bn in enumerate(beta))

    r_low = _radius_for(lower)
    # third third: calibrated remainder in bracket units
    c_br = model.c_rem * math.pi ** -model.power / abs(a00)
    gap = t0 - model.t_sharp
    if gap <= 1e-12:
        half_plane = True
        r_rem = (c_br / BUDGET_SHARE) ** (1.0 / (order + 1)) if c_br > 0 else 0.0

        def rem(r):
            return c_br * r ** -(order + 1)
    else:
        half_plane = False
        if C is None:
            raise ValueError("lambda_sharp < lambda_0 needs the log-region constant C")
        expo = C * gap - (order + 1)
        if expo >= 0:
            raise ValueError(f"order {order} is too low for C = {C:g}: need N + 1 > C log(lambda_0/lambda_sharp)")
        r_rem = (c_br / BUDGET_SHARE) ** (1.0 / -expo) if c_br > 0 else 0.0

        def rem(r):
            return c_br * r ** expo
    radius = max(r_low, r_rem)
    ledger["lower_order_vs_leading"] = float(lower(radius)) if radius > 0 else 0.0
    ledger["remainder_vs_leading"] = float(rem(radius)) if radius > 0 else 0.0
    ledger["order"] = order
    ledger["c_rem"] = model.c_rem
    return ZeroFreeCertificate(delta_prime, None if half_plane else C, half_plane, radius, order, ledger)


def _radius_for(ratio: Callable[[float], float]) -> float:
    """Smallest ``r`` with ``ratio(r) <= 1/3`` for a decreasing ``ratio``."""
    if ratio(1e-12) <= BUDGET_SHARE:
        return 0.0
    lo, hi = 1e-12, 1.0
    while ratio(hi) > BUDGET_SHARE:
        lo, hi = hi, hi * 2.0
    for _ in range(200):
        mid = math.sqrt(lo * hi) if lo > 0 else 0.5 * hi
        if ratio(mid) > BUDGET_SHARE:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * hi:
            break
    return hi


# ---------------------------------------------------------------------------
# explicit two-term families


def _newton(h, dh, s0: complex, tol: float = 1e-15, max_iter: int = 60):
    s = complex(s0)
    for _ in range(max_iter):
        step = h(s) / dh(s)
        s -= step
        if abs(step) <= tol * max(1.0, abs(s)):
            return s, True
    return s, False


def _exp_family_zero(T: float, log_c: complex, n: int):
    """Zero of ``log s - s T = log_c - 2 pi i n`` (one branch of ``s exp(-sT) = c``)."""
    rhs = log_c - 2j * math.pi * n
    t = (math.pi / 2 - rhs.imag) / T
    s = complex(math.log(max(abs(t), 1.0)) / T - rhs.real / T, t)
    for _ in range(30):  # fixed-point sweep towards the branch
        s = (cmath.log(s) - rhs) / T
    return _newton(lambda z: cmath.log(z) - z * T - rhs, lambda z: 1.0 / z - T, s)


def model_zeros_exc(T: float, C0: complex, count: int, tol: float = 1e-12):
    """First ``count`` zeros of ``s exp(-sT) - C0`` with ``Im s >= 0``, sorted by ``Im s``.

    Each zero solves ``log s - sT = log C0 - 2 pi i n`` for one integer
    ``n``; the seed sits on the curve ``Re s = log(|s|/|C0|) / T``.
    """
    if not T > 0:
        raise ValueError("T must be positive")
    if C0 == 0:
        raise ValueError("C0 must be nonzero")
    log_c = cmath.log(complex(C0))
    found = []
    n = 0
    misses = 0
    while len(found) < count + 2 and misses < 8:
        s, ok = _exp_family_zero(T, log_c, n)
        if ok and s.imag >= -1e-12 and all(abs(s - z.s) > 1e-8 * max(1.0, abs(s)) for z in found):
            res = abs(s * cmath.exp(-s * T) - C0)
            found.append(ZeroRecord(complex(s.real, max(s.imag, 0.0)), res, "newton_asymptotic_seed",
                                    res < tol * max(1.0, abs(C0))))
            misses = 0
        else:
            misses += 1
        n += 1
    found.sort(key=lambda z: z.s.imag)
    return found[:count]


def log_line_seeds(a_hi: float, lam_hi: float, a_lo: float, lam_lo: float, im_range):
    """Seeds for the zeros of ``a_hi lam_hi^-s + a_lo / (s lam_lo^s)`` with ``Im s`` in ``im_range``.

    They satisfy the modulus condition ``|a_lo| |s| lam_hi^Re(s) = lam_lo^Re(s) |a_hi|``
    and the phase condition
    ``Im(s) log(lam_hi/lam_lo) - arg s + arg(-a_lo/a_hi) in 2 pi Z``.
    """
    L = math.log(lam_hi / lam_lo)
    r = a_lo / a_hi
    phase = cmath.phase(-r)
    lo, hi = im_range
    seeds = []
    m = math.ceil((lo * L - math.pi / 2 + phase) / (2 * math.pi)) - 1
    while True:
        t = (2 * math.pi * m + math.pi / 2 - phase) / L
        if t > hi + 2 * math.pi / L:
            break
        if t >= lo - 2 * math.pi / L:
            sigma = math.log(max(abs(t), 1.0) / abs(r)) / L
            seeds.append((m, complex(sigma, t)))
        m += 1
    return seeds


def log_line_function(a0_1: float, lam1: float, a1_0: float, lam0: float):
    """``f(s) = a0_1 lam1^-s + a1_0 / (s lam0^s)`` and its derivative."""
    l1, l0 = math.log(lam1), math.log(lam0)

    def f(s):
        return a0_1 * np.exp(-s * l1) + a1_0 * np.exp(-s * l0) / s

    def df(s):
        return -l1 * a0_1 * np.exp(-s * l1) - a1_0 * np.exp(-s * l0) * (l0 / s + 1.0 / (s * s))

    return f, df


def log_line_zeros(a0_1: float, lam1: float, a1_0: float, lam0: float, im_range):
    """Zeros of ``a0_1 lam1^-s + a1_0 / (s lam0^s)`` with ``Im s`` in ``im_range``.

    Newton runs on ``1 + r exp(s L) / s`` (``L = log(lam1/lam0)``,
    ``r = a1_0/a0_1``), which has the same zeros and unit scale.  Seeds that
    fail to converge are reported as unconfirmed records.
    """
    if a0_1 == 0 or a1_0 == 0:
        raise ValueError("both coefficients must be nonzero")
    if not lam1 > lam0 > 0:
        raise ValueError("need lam1 > lam0 > 0")
    L = math.log(lam1 / lam0)
    r = a1_0 / a0_1
    f, _ = log_line_function(a0_1, lam1, a1_0, lam0)
    out = []
    for m, seed in log_line_seeds(a0_1, lam1, a1_0, lam0, im_range):
        # same branch as the seed: log s - s L = log(-r) - 2 pi i m... solved in log form
        rhs = cmath.log(-r) - 2j * math.pi * m
        s, ok = _newton(lambda z: cmath.log(z) - z * L - rhs, lambda z: 1.0 / z - L, seed)
        if not im_range[0] <= s.imag <= im_range[1]:
            continue
        scale = abs(a0_1 * cmath.exp(-s * math.log(lam1)))
        res = abs(f(s)) / scale
        out.append(ZeroRecord(s, res, "newton_from_logline_seed", ok and res < 1e-12))
    out.sort(key=lambda z: z.s.imag)
    return out


def match_zeros(full: Sequence[complex], approx: Sequence[complex], spacing: float):
    """Pair each zero of ``full`` with the nearest of ``approx`` within half the spacing.

    Returns
    -------
    pairs : list of (complex, complex)
    unmatched : list of complex
    """
    approx = np.asarray(list(approx), dtype=complex)
    pairs, unmatched = [], []
    for z in full:
        if len(approx) == 0:
            unmatched.append(z)
            continue
        k = int(np.argmin(np.abs(approx - z)))
        if abs(approx[k] - z) <= 0.5 * spacing:
            pairs.append((z, complex(approx[k])))
        else:
            unmatched.append(z)
    return pairs, unmatched


# ---------------------------------------------------------------------------
# argument principle


_GK_X = np.array([0.991455371120813, 0.949107912342759, 0.864864423359769, 0.741531185599394,
                  0.586087235467691, 0.405845151377397, 0.207784955007898, 0.0])
_GK_WK = np.array([0.022935322010529, 0.063092092629979, 0.104790010322250, 0.140653259715525,
                   0.169004726639267, 0.190350578064785, 0.204432940075298, 0.209482141084728])
_GK_WG = np.array([0.129484966168870, 0.279705391489277, 0.381830050505119, 0.417959183673469])
_GK_NODES = np.concatenate([-_GK_X[:-1], _GK_X[::-1]])
_GK_K15 = np.concatenate([_GK_WK[:-1], _GK_WK[::-1]])
_GK_G7 = np.zeros(15)
_GK_G7[[1, 3, 5, 7, 9, 11, 13]] = np.concatenate([_GK_WG[:-1], _GK_WG[::-1]])


def _edge_integral(g, a: complex, b: complex, piece: float, tol: float = 1e-10,
                   max_depth: int = 30) -> complex:
    """Adaptive Gauss-Kronrod (7/15) integral of ``g`` along the segment from ``a`` to ``b``.

    ``g`` is evaluated on all fifteen nodes of a panel at once.
    """
    n = max(1, int(math.ceil(abs(b - a) / piece)))
    stack = [(a + (b - a) * k / n, a + (b - a) * (k + 1) / n, 0) for k in range(n)]
    total = 0j
    while stack:
        p, q, depth = stack.pop()
        half = 0.5 * (q - p)
        vals = g(0.5 * (p + q) + half * _GK_NODES)
        k15 = complex(np.dot(_GK_K15, vals)) * half
        g7 = complex(np.dot(_GK_G7, vals)) * half
        if abs(k15 - g7) <= tol * max(1.0, abs(k15)) * abs(q - p) / abs(b - a) or depth >= max_depth:
            total += k15
        else:
            m = 0.5 * (p + q)
            stack.append((p, m, depth + 1))
            stack.append((m, q, depth + 1))
    return total


def _corners(rect):
    x0, x1, y0, y1 = rect
    return [complex(x0, y0), complex(x1, y0), complex(x1, y1), complex(x0, y1)]


def _contour_clear(f, df, rect, distance: float, samples: int = 400) -> bool:
    c = _corners(rect)
    for a, b in zip(c, c[1:] + c[:1]):
        z = a + (b - a) * np.linspace(0.0, 1.0, samples)
        fz, dz = f(z), df(z)
        est = np.abs(fz) / np.maximum(np.abs(dz), 1e-300)
        if np.min(est) < distance:
            return False
    return True


def _winding(f, df, rect, piece: float) -> complex:
    c = _corners(rect)
    g = lambda z: df(z) / f(z)
    return sum(_edge_integral(g, a, b, piece) for a, b in zip(c, c[1:] + c[:1])) / (2j * math.pi)


def contour_moments(f, df, rect, piece: float = 0.5):
    """``(1/2 pi i)`` times the contour integrals of ``f'/f`` and ``s f'/f``."""
    c = _corners(rect)
    g = lambda z: z * df(z) / f(z)
    m1 = sum(_edge_integral(g, a, b, piece) for a, b in zip(c, c[1:] + c[:1])) / (2j * math.pi)
    return _winding(f, df, rect, piece), m1


def count_zeros_rect(f, df, rect, piece: float = 0.5, clearance: float = 1e-6,
                     retries: int = 3) -> int:
    """Number of zeros of ``f`` in ``rect = (re_lo, re_hi, im_lo, im_hi)`` by the argument principle.

    ``f`` and ``df`` must accept numpy arrays.  When a zero lies within
    ``clearance`` of the contour (estimated by ``|f/f'|``) or the winding
    number is not near an integer, the rectangle is grown slightly, at most
    ``retries`` times.

    Raises
    ------
    ContourError
        When the contour stays too close to a zero or the winding number is
        not within 0.05 of an integer.
    """
    rect = tuple(float(v) for v in rect)
    for attempt in range(retries + 1):
        # a zero close to the contour shows up either in |f/f'| or as a fractional winding
        if _contour_clear(f, df, rect, clearance):
            m0 = _winding(f, df, rect, piece)
            n = round(m0.real)
            if abs(m0 - n) <= WINDING_TOL:
                return int(n)
        grow = 1e-3 * (attempt + 1) * max(rect[1] - rect[0], rect[3] - rect[2])
        rect = (rect[0] - grow, rect[1] + grow, rect[2] - grow, rect[3] + grow)
    raise ContourError("a zero sits on the contour or the winding number is not an integer")


def scan_zeros(f, df, rect, piece: float = 0.5, min_size: float = 1e-6, newton_tol: float = 1e-10):
    """All zeros of ``f`` in ``rect``, by recursive splitting until each box holds one zero.

    A box with one zero yields it from the first contour moment, polished by
    Newton; the record is confirmed when the polished zero stays in its box
    and the residual is below ``newton_tol``.
    """
    out = []

    def visit(r, depth):
        n = count_zeros_rect(f, df, r, piece)
        if n == 0:
            return
        x0, x1, y0, y1 = r
        if n == 1 or max(x1 - x0, y1 - y0) < min_size:
            _, m1 = contour_moments(f, df, r, piece)
            s, _ = _newton(lambda z: complex(f(z)), lambda z: complex(df(z)), m1, 1e-15)
            scale = max(1.0, abs(complex(df(s))) * max(abs(s), 1.0))
            res = abs(complex(f(s)))
            inside = x0 - 1e-6 <= s.real <= x1 + 1e-6 and y0 - 1e-6 <= s.imag <= y1 + 1e-6
            for _ in range(n):
                out.append(ZeroRecord(s, res, "scan", inside and n == 1 and res < newton_tol * scale))
            return
        if x1 - x0 >= y1 - y0:
            xm = 0.5 * (x0 + x1) + 1e-7 * (x1 - x0)
            visit((x0, xm, y0, y1), depth + 1)
            visit((xm, x1, y0, y1), depth + 1)
        else:
            ym = 0.5 * (y0 + y1) + 1e-7 * (y1 - y0)
            visit((x0, x1, y0, ym), depth + 1)
            visit((x0, x1, ym, y1), depth + 1)

    visit(tuple(float(v) for v in rect), 0)
    out.sort(key=lambda z: (z.s.imag, z.s.real))
    return out


def series_function(model: DirichletSeriesModel):
    """``f, df`` of the bracket of ``model`` (zeros of the full value, prefactor removed)."""
    return model.bracket, model.bracket_derivative
