"""Scattered geodesics of a constant-curvature cusp surface.

Scattered geodesics from cusp ``i`` to cusp ``j`` correspond to double cosets
``Gamma_i \\ Gamma / Gamma_j``, and in the chart of cusp ``i`` to the horoballs
of cusp ``j`` with base points taken modulo the width of cusp ``i``.  With
``M = chart_i^{-1} gamma chart_j = (a b; c d)`` the target horoball is tangent
at ``a/c`` with Euclidean diameter ``1/(c^2 a_j)`` and the sojourn time is
``2 log|c|``.

Horoballs are found by a tile walk over the strip of one cusp period,
keeping tiles tall enough to reach the top of any ball with sojourn time at
most ``T_max``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .hypcore import INFINITY, Geodesic, Horoball, IsometryMap, horoball_entry_exit
from .surfaces import SurfaceSpec
from .tilewalk import DEFAULT_BUDGET

MULTIPLICITY_TOL = 1e-9
KEY_DIGITS = 9


@dataclass(frozen=True)
class ScatteredGeodesicRecord:
    """One scattered geodesic class from cusp ``i`` to cusp ``j``.

    ``representative`` is ``gamma`` in the base chart with the canonical
    cusp-normalized matrix ``chart_i^{-1} gamma chart_j`` (``c > 0``, ``a/c`` in
    ``[0, width_i)``, ``-d/c`` in ``[0, width_j)``).  ``word`` spells the tile
    path that found the class.  ``a0`` and ``a1`` are the zeroth and first
    stationary-phase coefficients.  ``start`` is the abscissa, in the chart
    of cusp ``i``, where a shot geodesic leaves the cusp (``None`` for the
    vertical line through ``a/c`` of the hyperbolic metric).
    """

    i: int
    j: int
    representative: IsometryMap
    sojourn_time: float
    a0: float = 1.0
    a1: Optional[float] = None
    source: str = "closed_form"
    homotopy_id: str = ""
    word: tuple = field(default=(), compare=False)
    start: Optional[float] = None

    @property
    def cusp_pair(self):
        return (self.i, self.j)


@dataclass(frozen=True)
class SojournSpectrum:
    """Distinct sojourn times of one cusp pair with multiplicities, ascending."""

    pair: tuple
    times: tuple
    multiplicities: tuple
    records: tuple

    @property
    def minimum(self) -> float:
        return self.times[0] if self.times else math.inf

    def all_times(self) -> np.ndarray:
        return np.array([r.sojourn_time for r in self.records])


def normalized_matrix(spec: SurfaceSpec, gamma: IsometryMap, i: int, j: int) -> IsometryMap:
    return spec.cusp(i).chart.inverse() @ gamma @ spec.cusp(j).chart


def canonical_matrix(spec: SurfaceSpec, m: IsometryMap, i: int, j: int):
    """Reduce a cusp-normalized matrix modulo both parabolic lattices.

    Returns ``None`` for the trivial coset (``c = 0``).
    """
    a, b, c, d = m.a, m.b, m.c, m.d
    if abs(c) < _trivial_cutoff(spec, i, j):
        return None
    if c < 0:
        a, b, c, d = -a, -b, -c, -d
    wi, wj = spec.cusp(i).width, spec.cusp(j).width
    # left translation by n wi: a += n wi c ; right translation by m wj: d += m wj c
    a = _reduce(a / c, wi) * c
    d = -_reduce(-d / c, wj) * c
    b = (a * d - 1.0) / c
    return IsometryMap(a, b, c, d)


def _reduce(x: float, width: float) -> float:
    r = x % width
    # snap values that land on the period boundary through rounding
    if width - r <= 1e-9 * width or r <= 1e-12 * width:
        return 0.0
    return r


def _trivial_cutoff(spec: SurfaceSpec, i: int, j: int) -> float:
    # disjoint cusp horoballs force c^2 >= 1/(a_i a_j) for every nontrivial class
    return 0.5 / math.sqrt(spec.cusp(i).a * spec.cusp(j).a)


def _key_of(m: IsometryMap, i: int, j: int) -> str:
    return f"{i}-{j}:{m.a / m.c:.{KEY_DIGITS}f}:{-m.d / m.c:.{KEY_DIGITS}f}:{m.c:.{KEY_DIGITS}g}"


def homotopy_id(spec: SurfaceSpec, gamma: IsometryMap, i: int, j: int) -> str:
    """Canonical key of the double coset of ``gamma`` for the cusp pair ``(i, j)``."""
    m = canonical_matrix(spec, normalized_matrix(spec, gamma, i, j), i, j)
    if m is None:
        raise ValueError("trivial double coset (gamma fixes the cusp)")
    return _key_of(m, i, j)


def sojourn_time_closed_form(spec: SurfaceSpec, gamma: IsometryMap, i: int, j: int) -> float:
    """Sojourn time of the class of ``gamma`` from the horoball entry geometry.

    The lift is the vertical line from infinity (cusp ``i``) to the base of
    the target horoball.  It leaves ``{y > a_i}`` at time ``-log a_i`` and
    enters the target ball at the time returned by ``horoball_entry_exit``.

    Raises
    ------
    ValueError
        When ``gamma`` fixes the cusp (lower-left entry zero).
    """
    m = normalized_matrix(spec, gamma, i, j)
    if abs(m.c) < _trivial_cutoff(spec, i, j):
        raise ValueError("not a scattered class: lower-left entry vanishes")
    a_i, a_j = spec.cusp(i).a, spec.cusp(j).a
    base = m.a / m.c
    ball = Horoball(base, m.c * m.c * a_j)
    crossing = horoball_entry_exit(ball, Geodesic(INFINITY, base))
    elapsed = crossing.entry_time + math.log(a_i)
    return elapsed - math.log(a_i) - math.log(a_j)


def _walk_epsilon(spec: SurfaceSpec, j: int, t_max: float) -> float:
    tops = [spec.tile_top_height(k) for k, t in enumerate(spec.tiles) if t.cusp == j]
    return math.exp(-t_max) / max(1.0, max(tops)) * (1.0 - 1e-9)


def horoball_candidates(spec: SurfaceSpec, i: int, j: int, t_max: float,
                        budget: int = DEFAULT_BUDGET, backend=None):
    """Cusp-normalized matrices of cusp-``j`` tiles met by the walk in cusp ``i``.

    Returns ``(mats, sel, res)``: ``mats`` has shape ``(n, 2, 2)`` with rows
    ``chart_i^{-1} h tau_k`` for each kept tile ``h(tile_k)`` of cusp ``j``,
    ``sel`` indexes those tiles in the walk result ``res``.
    """
    lo, width = spec.base_strip(i)
    eps = _walk_epsilon(spec, j, t_max)
    res = spec.walk(i, eps, lo, lo + width, 0.0, math.inf, budget, backend, compact=True)
    cusp_of = np.array([t.cusp for t in spec.tiles])
    sel = np.nonzero(cusp_of[res.tiles] == j)[0]
    taus = np.array([t.chart.as_array() for t in spec.tiles])
    mats = res.mats[sel].reshape(-1, 2, 2) @ taus[res.tiles[sel]]
    return mats, sel, res


def enumerate_scattered(spec: SurfaceSpec, i: int, j: int, t_max: float,
                        budget: int = DEFAULT_BUDGET, backend=None,
                        words: bool = True) -> list:
    """All scattered classes from cusp ``i`` to cusp ``j`` with sojourn time at most ``t_max``.

    Bumps are ignored: times are those of the hyperbolic metric.  Results are
    sorted by ``(sojourn_time, homotopy_id)``.  Each class is represented by
    the tile reached along the shortest walk path, which keeps rounding
    in the matrix entries small.  ``words=False`` skips spelling the paths.

    Raises
    ------
    WalkBudgetExceeded
        When the tile walk needs more than ``budget`` tiles.
    """
    if not math.isfinite(t_max):
        raise ValueError("t_max must be finite")
    spec.cusp(i), spec.cusp(j)
    mats, sel, res = horoball_candidates(spec, i, j, t_max, budget, backend)
    wi, wj = spec.cusp(i).width, spec.cusp(j).width
    a_j = spec.cusp(j).a
    a, b, c, d = mats[:, 0, 0], mats[:, 0, 1], mats[:, 1, 0], mats[:, 1, 1]
    keep = np.abs(c) >= _trivial_cutoff(spec, i, j)
    sign = np.where(c < 0, -1.0, 1.0)
    a, c, d = (a * sign)[keep], (c * sign)[keep], (d * sign)[keep]
    idx = sel[keep]
    t = 2.0 * np.log(c)
    inside = t <= t_max + 1e-12
    a, c, d, t, idx = a[inside], c[inside], d[inside], t[inside], idx[inside]
    if len(idx) == 0:
        return []
    x = np.mod(a / c, wi)
    x = np.where(wi - x <= 1e-9 * wi, 0.0, x)
    diam = 1.0 / (c * c * a_j)
    depth = res.depths[idx]
    order = np.lexsort((depth, x))
    # distinct horoballs of one cusp have bases at least sqrt(D1 D2) apart
    xs, ds = x[order], diam[order]
    new_cluster = np.diff(xs) >= 0.25 * np.sqrt(ds[1:] * ds[:-1])
    cluster = np.concatenate([[0], np.cumsum(new_cluster)])
    if len(order) > 1 and xs[0] + wi - xs[-1] < 0.25 * math.sqrt(ds[0] * ds[-1]):
        cluster[cluster == cluster[-1]] = 0
    # first member of each cluster in (cluster, depth) order is the shallowest
    by_depth = np.lexsort((depth[order], cluster))
    first = np.concatenate([[True], np.diff(cluster[by_depth]) != 0])
    members = order[by_depth[first]]
    a, c, d, idx = a[members], c[members], d[members], idx[members]
    a = np.where(wi - np.mod(a / c, wi) <= 1e-9 * wi, 0.0, np.mod(a / c, wi)) * c
    yr = np.mod(-d / c, wj)
    d = -np.where(wj - yr <= 1e-9 * wj, 0.0, yr) * c
    b = (a * d - 1.0) / c
    normed = np.stack([np.stack([a, b], -1), np.stack([c, d], -1)], -2)
    gammas = spec.cusp(i).chart.as_array() @ normed @ spec.cusp(j).chart.inverse().as_array()
    times = 2.0 * np.log(c)
    records = []
    for n in range(len(members)):
        g = gammas[n]
        key = f"{i}-{j}:{a[n] / c[n]:.{KEY_DIGITS}f}:{-d[n] / c[n]:.{KEY_DIGITS}f}:{c[n]:.{KEY_DIGITS}g}"
        word = res.word(int(idx[n]), spec.tiling) if words else ()
        records.append(ScatteredGeodesicRecord(
            i, j, IsometryMap(float(g[0, 0]), float(g[0, 1]), float(g[1, 0]), float(g[1, 1])),
            float(times[n]), 1.0, None, "closed_form", key, word))
    records.sort(key=lambda r: (r.sojourn_time, r.homotopy_id))
    return records


def spectrum(records: Sequence[ScatteredGeodesicRecord], pair=None) -> SojournSpectrum:
    """Group records by sojourn time; times within ``MULTIPLICITY_TOL`` share a level."""
    recs = sorted(records, key=lambda r: (r.sojourn_time, r.homotopy_id))
    if pair is None:
        pair = recs[0].cusp_pair if recs else (0, 0)
    times, mult, groups = [], [], []
    for r in recs:
        if times and abs(r.sojourn_time - groups[-1][0].sojourn_time) < MULTIPLICITY_TOL:
            mult[-1] += 1
            groups[-1].append(r)
        else:
            times.append(r.sojourn_time)
            mult.append(1)
            groups.append([r])
    return SojournSpectrum(tuple(pair), tuple(times), tuple(mult), tuple(recs))


def _as_times(data) -> np.ndarray:
    """Sorted sojourn times from a spectrum, a record list or plain numbers."""
    if isinstance(data, SojournSpectrum):
        data = data.all_times()
    elif len(data) and isinstance(data[0], ScatteredGeodesicRecord):
        data = [r.sojourn_time for r in data]
    return np.sort(np.asarray(data, dtype=float))


def count_sojourn(spec_or_times, t: float) -> int:
    """Number of classes with sojourn time at most ``t``."""
    return int(np.searchsorted(_as_times(spec_or_times), t, side="right"))


def estimate_abscissa(times, t_max: Optional[float] = None, points: int = 64,
                      min_classes: int = 20) -> float:
    """Growth exponent of the counting function from a least-squares fit of ``log N(T)``.

    The fit uses ``points`` equally spaced values over the top half of
    ``[min(times), t_max]``.

    Raises
    ------
    ValueError
        With fewer than ``min_classes`` classes.
    """
    times = _as_times(times)
    if len(times) < min_classes:
        raise ValueError(f"abscissa estimate needs at least {min_classes} classes, got {len(times)}")
    hi = float(times[-1]) if t_max is None else float(t_max)
    lo = float(times[0])
    grid = np.linspace(0.5 * (lo + hi), hi, points)
    counts = np.searchsorted(times, grid, side="right")
    slope, _ = np.polyfit(grid, np.log(counts), 1)
    return float(slope)


def growth_constant(times, delta: float) -> float:
    """Smallest ``G`` with ``N(T) <= G exp(delta T)`` over the enumerated range."""
    times = _as_times(times)
    if len(times) == 0:
        return 0.0
    counts = np.arange(1, len(times) + 1)
    return float(np.max(counts * np.exp(-delta * times)))


def _pair_times(spectra: dict, i: int, j: int):
    if (i, j) in spectra:
        return spectra[(i, j)]
    return spectra[(j, i)]


def sojourn_cycles(spectra: dict, kappa: int, t_cut: float = math.inf) -> list:
    """Sorted sojourn-cycle values up to ``t_cut``.

    ``spectra`` maps cusp pairs ``(i, j)`` (1-based, either order) to sorted
    sequences of sojourn times with multiplicity.  Each cycle picks a
    permutation ``sigma`` and one time from each pair ``(i, sigma(i))``.
    """
    if kappa > 8:
        raise ValueError("cycle enumeration is limited to at most 8 cusps")
    out = []
    for sigma in itertools.permutations(range(1, kappa + 1)):
        lists = [np.sort(np.asarray(_pair_times(spectra, i + 1, sigma[i]), dtype=float))
                 for i in range(kappa)]
        mins = [l[0] if len(l) else math.inf for l in lists]
        suffix = np.concatenate([np.cumsum(mins[::-1])[::-1], [0.0]])

        def rec(pos, acc):
            if pos == kappa:
                out.append(acc)
                return
            for t in lists[pos]:
                if acc + t + suffix[pos + 1] > t_cut + 1e-12:
                    break
                rec(pos + 1, acc + t)

        rec(0, 0.0)
    return sorted(out)


def min_cycle(minima: dict, kappa: int) -> float:
    """Smallest sojourn cycle from the per-pair minima."""
    best = math.inf
    for sigma in itertools.permutations(range(1, kappa + 1)):
        best = min(best, sum(_pair_times(minima, i + 1, sigma[i]) for i in range(kappa)))
    return best


def t_sharp(spec: SurfaceSpec, minima: dict):
    """Remainder exponent: ``T_sharp = min_sigma sum_i min(-log b_i b_j, T0_ij)``.

    Returns ``(T_sharp, lambda_sharp)`` with ``lambda_sharp = exp(T_sharp)``.
    """
    kappa = spec.kappa
    capped = {}
    for i in range(1, kappa + 1):
        for j in range(1, kappa + 1):
            t0 = _pair_times(minima, i, j)
            capped[(i, j)] = min(-math.log(spec.cusp(i).b * spec.cusp(j).b), t0)
    ts = min_cycle(capped, kappa)
    return ts, math.exp(ts)


def enumerate_all(spec: SurfaceSpec, t_max: float, budget: int = DEFAULT_BUDGET,
                  backend=None) -> dict:
    """Records for every cusp pair ``i <= j`` keyed by ``(i, j)``."""
    out = {}
    for i in range(1, spec.kappa + 1):
        for j in range(i, spec.kappa + 1):
            out[(i, j)] = enumerate_scattered(spec, i, j, t_max, budget, backend)
    return out


def brute_force_classes(spec: SurfaceSpec, i: int, j: int, t_max: float, length: int) -> dict:
    """Classes reached by all freely reduced generator words up to ``length``.

    Independent of the tile walk: multiplies out words letter by letter.
    Returns ``{homotopy_id: sojourn_time}`` for classes with time at most ``t_max``.
    """
    letters = []
    for g in spec.generators:
        letters.append(g.as_array())
        letters.append(g.inverse().as_array())
    letters = np.array(letters)
    n_letters = len(letters)
    left = spec.cusp(i).chart.inverse().as_array()
    right = spec.cusp(j).chart.as_array()
    found = {}

    def record(mats):
        normed = np.einsum("ab,nbc,cd->nad", left, mats, right)
        c = normed[:, 1, 0]
        ok = np.abs(c) >= _trivial_cutoff(spec, i, j)
        ok &= 2.0 * np.log(np.abs(np.where(ok, c, 1.0))) <= t_max + 1e-9
        for m in normed[ok]:
            cm = canonical_matrix(spec, IsometryMap.from_matrix(m), i, j)
            found[_key_of(cm, i, j)] = 2.0 * math.log(cm.c)

    mats = np.eye(2)[None]
    last = np.array([-1])
    record(mats)
    for _ in range(length):
        new_m, new_last = [], []
        for k in range(n_letters):
            inverse_of_k = k ^ 1
            keep = last != inverse_of_k
            new_m.append(mats[keep] @ letters[k])
            new_last.append(np.full(int(keep.sum()), k))
        mats = np.concatenate(new_m)
        last = np.concatenate(new_last)
        record(mats)
    return found


def realizing_geodesic(spec: SurfaceSpec, record: ScatteredGeodesicRecord):
    """Lift of the class in the chart of cusp ``i``: the vertical line above ``a/c``.

    Returns ``(x0, target_ball)`` with ``target_ball`` the image of ``{y > a_j}``.
    """
    m = normalized_matrix(spec, record.representative, record.i, record.j)
    x0 = m.a / m.c
    return x0, Horoball(x0, m.c * m.c * spec.cusp(record.j).a)


def with_coefficients(record: ScatteredGeodesicRecord, **changes) -> ScatteredGeodesicRecord:
    return replace(record, **changes)
