"""Geodesics, Jacobi fields and stationary-phase data in a conformally perturbed metric.

The metric is ``exp(2 phi)`` times the hyperbolic metric of the upper
half-plane, with ``phi`` the periodized bump field of a surface.  A unit-speed
geodesic is stored as its position and the Euclidean angle ``theta`` of its
velocity, so the Euclidean speed is ``y exp(-phi)`` and the metric speed is
one by construction.  Along the geodesic the scalar Jacobi equation
``J'' + K J = 0`` and the Riccati equation ``u' + u^2 + K = 0`` are carried.

Every scattered class is handled in the chart of its source cusp ``i``: the
geodesic leaves the cusp vertically at height ``1.01 b_i`` (above every bump)
and ends in the chart of cusp ``j`` at height ``2 b_j``.  Both ends live in
constant curvature, where Jacobi fields split as ``A e^t + B e^-t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import DOP853, solve_ivp
from scipy.special import loggamma

from .geodesics import ScatteredGeodesicRecord, normalized_matrix
from .hypcore import INFINITY, IsometryMap, UhpPoint
from .surfaces import (ConformalBump, ConformalField, SurfaceSpec, lifts_in_chart,
                       with_bumps)

RTOL = 1e-12
ATOL = 1e-14
START_FACTOR = 1.01
EXIT_FACTOR = 2.0
SHOOT_TOL = 1e-12
EXCLUSION_FACTOR = 3.0
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
# phase span (radians) resolved by one 16-point panel to ~1e-13
PHASE_PER_PANEL = 16.0


class IntegrationFailure(RuntimeError):
    """The geodesic integrator stalled or never reached its target."""


class NonConvergence(RuntimeError):
    """An iterative solve stopped without meeting its tolerance."""

    def __init__(self, message: str, residual: float = math.nan):
        super().__init__(message)
        self.residual = residual


class QuadratureError(RuntimeError):
    """A horosphere quadrature could not be carried out to tolerance."""


@dataclass(frozen=True)
class FlowState:
    """Point of the unit tangent bundle: position, velocity angle and time."""

    position: UhpPoint
    angle: float
    time: float = 0.0

    def metric_speed(self, field: ConformalField) -> float:
        """Metric norm of the velocity ``y exp(-phi) (cos, sin)``; equals one."""
        phi = float(field.evaluate(self.position.x, self.position.y)[0])
        euclid = self.position.y * math.exp(-phi)
        return math.exp(phi) * euclid / self.position.y


@dataclass(frozen=True)
class JacobiFrame:
    """Scalar Jacobi field, its derivative, the Riccati variable and the curvature."""

    J: float
    Jp: float
    u: float
    curvature: float

    @property
    def riccati_gap(self) -> float:
        """``|u - J'/J|``, meaningful where ``|J|`` is not small."""
        return abs(self.u - self.Jp / self.J)


@dataclass(frozen=True)
class CoefficientBundle:
    """Leading stationary-phase data of one scattered class.

    ``a0`` comes from the asymptotic split of the unstable Jacobi field and
    ``a0_potential`` from integrating ``(1 - u)/2`` along the geodesic.
    ``hessian`` is the second derivative of the Busemann function of the
    source cusp along the target horosphere (arclength parameter) at the
    stationary point, ``jtilde`` the twisted Jacobian there and ``A_const``
    the growth coefficient of the unstable field.  With these conventions
    ``a0**2 * hessian == 2 * jtilde**2``.
    """

    a0: float
    a0_potential: float
    hessian: float
    jtilde: float
    A_const: float
    unstable: float
    stable: float
    k_min: float


@dataclass
class Trajectory:
    """Dense solution of the geodesic and Jacobi equations."""

    t: np.ndarray
    states: np.ndarray
    sol: object
    field: ConformalField
    status: str

    @property
    def t_end(self) -> float:
        return float(self.t[-1])

    def state(self, t: float) -> FlowState:
        x, y, th = self.sol(t)[:3]
        return FlowState(UhpPoint(float(x), float(y)), float(th), float(t))

    def jacobi(self, t: float) -> JacobiFrame:
        s = self.sol(t)
        k = float(self.field.curvature(s[0], s[1]))
        u = s[5] if len(s) > 5 else s[4] / s[3]
        return JacobiFrame(float(s[3]), float(s[4]), float(u), k)

    def table(self, times=None) -> np.ndarray:
        """Rows ``(t, x, y, angle, K, u)`` for export."""
        times = self.t if times is None else np.asarray(times, dtype=float)
        s = self.sol(times)
        k = self.field.curvature(s[0], s[1])
        u = s[5] if s.shape[0] > 5 else s[4] / s[3]
        return np.column_stack([times, s[0], s[1], s[2], k, u])


# ---------------------------------------------------------------------------
# equations of motion


def _rhs(field: ConformalField, riccati: bool):
    def rhs(t, s):
        x, y, th = s[0], s[1], s[2]
        phi, px, py, lap = field.evaluate(x, y)
        e = np.exp(-phi)
        speed = y * e
        k = e * e * (-1.0 - lap)
        c, sn = np.cos(th), np.sin(th)
        out = [speed * c, speed * sn, speed * (-px * sn + (py - 1.0 / y) * c), s[4], -k * s[3]]
        if riccati:
            out.append(-s[5] * s[5] - k)
            out.append(1.0 - s[5])
        return np.array(out, dtype=float)
    return rhs


def integrate_geodesic(field: ConformalField, state0: FlowState, t_span,
                       jacobi=(1.0, 1.0), riccati: Optional[float] = None, events=None,
                       method: str = "DOP853", rtol: float = RTOL, atol: float = ATOL,
                       max_step: float = np.inf) -> Trajectory:
    """Integrate the geodesic flow with its Jacobi (and optionally Riccati) fields.

    Parameters
    ----------
    field : ConformalField
        Conformal factor in the working chart.
    state0 : FlowState
        Initial point and velocity angle.
    t_span : (float, float)
        Time interval; may run backwards.
    jacobi : (float, float)
        Initial ``J`` and ``J'``.
    riccati : float, optional
        Initial Riccati variable; when given the state also carries ``u`` and
        ``int (1 - u) dt``.
    events : callable or list, optional
        Passed to ``scipy.integrate.solve_ivp``.

    Raises
    ------
    IntegrationFailure
        When the step size underflows or the solver fails.
    """
    y0 = [state0.position.x, state0.position.y, state0.angle, jacobi[0], jacobi[1]]
    if riccati is not None:
        y0 += [riccati, 0.0]
    t0, t1 = state0.time + t_span[0], state0.time + t_span[1]
    sol = solve_ivp(_rhs(field, riccati is not None), (t0, t1), y0, method=method,
                    rtol=rtol, atol=atol, dense_output=True, events=events, max_step=max_step)
    if sol.status < 0:
        raise IntegrationFailure(f"geodesic integration failed: {sol.message}")
    status = "event" if sol.status == 1 else "complete"
    return Trajectory(sol.t, sol.y, sol.sol, field, status)


def hyperbolic_endpoints(x: float, y: float, theta: float):
    """Forward and backward boundary endpoints of the hyperbolic geodesic through a point.

    Infinite endpoints are returned as ``math.inf``.
    """
    c, s = math.cos(theta), math.sin(theta)
    fwd = math.inf if 1.0 - s <= 1e-300 else x + y * c / (1.0 - s)
    bwd = math.inf if 1.0 + s <= 1e-300 else x - y * c / (1.0 + s)
    return fwd, bwd


# ---------------------------------------------------------------------------
# one scattered class


@dataclass
class ClassGeometry:
    """Working data for one class: charts, start height, exit height and bump lifts."""

    spec: SurfaceSpec
    i: int
    j: int
    m: IsometryMap
    y_start: float
    b_j: float
    field: ConformalField

    @property
    def target(self) -> float:
        return self.m.a / self.m.c

    @property
    def flip(self) -> bool:
        return self.m.det < 0

    def height_j(self, x, y):
        """Height in the chart of cusp ``j`` of a point of the chart of cusp ``i``."""
        m = self.m
        return y / ((m.a - m.c * x) ** 2 + (m.c * y) ** 2)

    def angle_j(self, x, y, theta):
        """Velocity angle in the chart of cusp ``j``."""
        m = self.m
        if self.flip:
            return math.pi - theta - 2.0 * np.angle((m.a - m.c * x) + 1j * m.c * y)
        return theta - 2.0 * np.angle((m.a - m.c * x) - 1j * m.c * y)

    def to_chart_j(self, z):
        m = self.m
        if self.flip:
            z = np.conj(z)
        return (m.d * z - m.b) / (-m.c * z + m.a)

    def scaled(self, factor: float) -> "ClassGeometry":
        return replace(self, field=self.field.scaled(factor))


def class_geometry(spec: SurfaceSpec, record: ScatteredGeodesicRecord,
                   x_center: Optional[float] = None, cone: float = 0.5) -> ClassGeometry:
    """Charts and the bump lifts met near the lift of ``record`` in the chart of cusp ``i``."""
    i, j = record.i, record.j
    m = normalized_matrix(spec, record.representative, i, j)
    if m.c < 0:
        m = IsometryMap(-m.a, -m.b, -m.c, -m.d)
    y_start = START_FACTOR * spec.cusp(i).b
    b_j = spec.cusp(j).b
    if not spec.bumps:
        field_ = ConformalField([], [], [])
    else:
        x0 = m.a / m.c if x_center is None else x_center
        eps = 0.25 / (m.c * m.c * b_j)
        field_ = lifts_in_chart(spec, i, eps, x0, x0, cone, y_start)
    return ClassGeometry(spec, i, j, m, y_start, b_j, field_)


def _exit_events(geom: ClassGeometry):
    level = math.log(EXIT_FACTOR * geom.b_j)

    def reach(t, s):
        return math.log(geom.height_j(s[0], s[1])) - level
    reach.terminal = True
    reach.direction = 1.0

    floor = 1e-3 / (geom.m.c * geom.m.c * geom.b_j)

    def sink(t, s):
        return s[1] - floor
    sink.terminal = True
    sink.direction = -1.0
    return [reach, sink]


def _horizon(geom: ClassGeometry) -> float:
    return math.log(geom.y_start * geom.m.c * geom.m.c * EXIT_FACTOR * geom.b_j) + 40.0


def run_class(geom: ClassGeometry, x_start: float, riccati: bool = False,
              method: str = "DOP853", rtol: float = RTOL) -> Trajectory:
    """Integrate from ``(x_start, y_start)`` straight down until height ``2 b_j`` in cusp ``j``."""
    state0 = FlowState(UhpPoint(x_start, geom.y_start), -math.pi / 2)
    j0 = 1.0 / geom.y_start
    traj = integrate_geodesic(geom.field, state0, (0.0, _horizon(geom)), (j0, j0),
                              1.0 if riccati else None, _exit_events(geom), method, rtol)
    if traj.status != "event" or traj.states[1, -1] < 1.5e-3 / (geom.m.c ** 2 * geom.b_j):
        raise IntegrationFailure("geodesic never reached the target cusp")
    return traj


def exit_residual(geom: ClassGeometry, traj: Trajectory) -> float:
    """Cosine of the exit angle in the chart of cusp ``j`` (zero for a vertical exit)."""
    x, y, th = traj.states[:3, -1]
    return float(np.cos(geom.angle_j(x, y, th)))


def trajectory_time(geom: ClassGeometry, traj: Trajectory) -> float:
    """Sojourn time read off a trajectory ending at height ``2 b_j``."""
    x, y = traj.states[:2, -1]
    return traj.t_end - math.log(geom.y_start) - math.log(float(geom.height_j(x, y)))


def _secant(fun, x0: float, x1: float, tol: float, max_iter: int = 40):
    f0, f1 = fun(x0), fun(x1)
    for _ in range(max_iter):
        if abs(f1) < tol:
            return x1, f1
        if f1 == f0:
            break
        x0, x1, f0 = x1, x1 - f1 * (x1 - x0) / (f1 - f0), f1
        f1 = fun(x1)
    if abs(f1) < tol:
        return x1, f1
    raise NonConvergence(f"shooting stalled with residual {abs(f1):.3e}", abs(f1))


def shoot_scattered(spec: SurfaceSpec, record: ScatteredGeodesicRecord, steps: int = 1,
                    tol: float = SHOOT_TOL, initial: Optional[float] = None
                    ) -> ScatteredGeodesicRecord:
    """Find the geodesic of the class in the (possibly perturbed) metric of ``spec``.

    The start abscissa is continued from the hyperbolic solution while the
    bump amplitudes are raised in ``steps`` equal stages; each stage is a
    secant solve on the exit-angle residual.  ``initial`` overrides the
    hyperbolic starting guess.

    Raises
    ------
    NonConvergence
        When a secant solve stalls (the last residual is attached).
    IntegrationFailure
        When a trial geodesic does not reach the target cusp.
    ValueError
        When the solution drifts by half a cusp width or more, which signals
        a jump to another homotopy class.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    geom = class_geometry(spec, record)
    x = geom.target if initial is None else initial
    width = spec.cusp(record.i).width
    h = 1e-7 / (geom.m.c * geom.m.c * geom.b_j)
    for k in range(1, steps + 1):
        stage = geom.scaled(k / steps)
        x, _ = _secant(lambda xs: exit_residual(stage, run_class(stage, xs)), x, x + h, tol)
    if abs(x - geom.target) >= 0.5 * width:
        raise ValueError("shooting left the homotopy class of the record")
    traj = run_class(geom, x)
    return replace(record, sojourn_time=trajectory_time(geom, traj), source="shooting",
                   start=x)


def _start_of(geom: ClassGeometry, record: ScatteredGeodesicRecord) -> float:
    return geom.target if record.start is None else record.start


def compute_a0(spec: SurfaceSpec, record: ScatteredGeodesicRecord) -> CoefficientBundle:
    """Zeroth coefficient of the class by two independent routes.

    The record must carry the geodesic of the metric of ``spec`` (as returned
    by ``shoot_scattered``) unless the surface has no bumps.  The unstable
    Jacobi field starts as ``1/y`` above the bumps; after the last bump it is
    split as ``A e^t + B e^-t`` and ``a0 = (y_start A)^(-1/2)``.  The second
    route integrates the Riccati equation with a different scheme and adds
    the closed-form tail of ``(1 - u)/2``.

    Raises
    ------
    IntegrationFailure
        When the geodesic does not reach the constant-curvature end.
    """
    geom = class_geometry(spec, record, _start_of(class_geometry(spec, record), record))
    x = _start_of(geom, record)
    traj = run_class(geom, x)
    t1 = traj.t_end
    J1, Jp1 = traj.states[3:5, -1]
    A = 0.5 * (J1 + Jp1) * math.exp(-t1)
    B = 0.5 * (J1 - Jp1) * math.exp(t1)
    a0 = (geom.y_start * A) ** -0.5
    # second route: Riccati variable with its own integrator
    ric = run_class(geom, x, riccati=True, method="RK45", rtol=1e-12)
    u1, integral = ric.states[5, -1], ric.states[6, -1]
    rho = (1.0 - u1) / (1.0 + u1)
    a0_pot = math.exp(0.5 * integral + 0.5 * math.log1p(rho))
    # stationary point: height b_j in the chart of cusp j, reached log 2 before the end
    x1, y1 = traj.states[:2, -1]
    t_h = t1 + math.log(geom.b_j / float(geom.height_j(x1, y1)))
    jh = A * math.exp(t_h) + B * math.exp(-t_h)
    unstable = (A * math.exp(t_h) - B * math.exp(-t_h)) / jh
    stable = -1.0
    jtilde = math.sqrt(math.exp(t_h - math.log(geom.y_start)) / jh)
    k = geom.field.curvature(traj.states[0], traj.states[1])
    return CoefficientBundle(a0, a0_pot, unstable - stable, jtilde, A, unstable, stable,
                             float(np.min(k)))


def reversed_record(spec: SurfaceSpec, record: ScatteredGeodesicRecord) -> ScatteredGeodesicRecord:
    """The same geodesic run backwards, as a class from cusp ``j`` to cusp ``i``."""
    return replace(record, i=record.j, j=record.i, representative=record.representative.inverse(),
                   start=None, source="closed_form", homotopy_id="", word=())


# ---------------------------------------------------------------------------
# horosphere integrals


def _gl_panels(lo: float, hi: float, n: int):
    edges = np.linspace(lo, hi, n + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * _GL_NODES).ravel()
    weights = (half[:, None] * _GL_WEIGHTS).ravel()
    return nodes, weights


def horocycle_integral(s: complex, tol: float = 1e-14) -> complex:
    """``int (1 + u^2)^(-s) du`` over the real line by composite Gauss-Legendre.

    The substitution ``u = sinh v`` turns the algebraic tail into
    ``cosh(v)^(1 - 2s)``, which decays exponentially.
    """
    s = complex(s)
    sigma = s.real
    if sigma <= 0.5:
        raise ValueError("the horocycle integral needs Re s > 1/2")
    # cosh(v)^(1-2 sigma) < tol (2 sigma - 1) / 2 beyond v_max
    v_max = (math.log(2.0 / (tol * (2 * sigma - 1))) + (2 * sigma - 1) * math.log(2.0)) / (2 * sigma - 1)
    omega = 2.0 * abs(s.imag) + 2.0 * sigma
    panels = max(8, int(math.ceil(2.0 * v_max * omega / 6.0)))
    v, w = _gl_panels(-v_max, v_max, panels)
    lc = np.log(np.cosh(v))
    return complex(np.sum(w * np.exp((1.0 - 2.0 * s) * lc)))


def horocycle_integral_exact(s: complex) -> complex:
    """Closed form ``sqrt(pi) Gamma(s - 1/2) / Gamma(s)``, used as a reference."""
    s = complex(s)
    return complex(math.sqrt(math.pi) * np.exp(loggamma(s - 0.5) - loggamma(s)))


@dataclass
class _Branch:
    u: np.ndarray
    w: np.ndarray
    G: np.ndarray
    log_jt: np.ndarray


class HorosphereIntegral:
    """``b_j^s`` times the integral of ``exp(-s G) Jtilde`` over the horosphere of one class.

    Without bumps along the class the value is ``exp(-s T)`` times the
    horocycle integral.  Otherwise the difference to that value is
    integrated over the part of the horosphere reached by geodesics from the
    source cusp that cross a bump: each quadrature node on the horosphere is
    matched to its geodesic by a secant solve in the start abscissa, run on
    all nodes at once.

    Parameters
    ----------
    spec, record
        Surface and class.
    im_max : float
        Largest ``|Im s|`` to be evaluated; sets the node density.
    sigma_min : float
        Smallest ``Re s``; sets the truncation of unbounded branches.
    """

    def __init__(self, spec: SurfaceSpec, record: ScatteredGeodesicRecord, im_max: float = 100.0,
                 sigma_min: float = 2.0, u_max: Optional[float] = None):
        self.spec = spec
        self.record = record
        m = normalized_matrix(spec, record.representative, record.i, record.j)
        if m.c < 0:
            m = IsometryMap(-m.a, -m.b, -m.c, -m.d)
        self.T_hyperbolic = 2.0 * math.log(m.c)
        self.T = record.sojourn_time
        self.branches = []
        self.tail_bound = 0.0
        if u_max is None:
            u_max = min(1e3, 1e-13 ** (-1.0 / (2.0 * sigma_min - 1.0)))
        if spec.bumps:
            self._setup(spec, record, m, im_max, sigma_min, u_max)

    def _setup(self, spec, record, m, im_max, sigma_min, u_max):
        i, j = record.i, record.j
        b_j = spec.cusp(j).b
        y_start = START_FACTOR * spec.cusp(i).b
        x_star = m.a / m.c
        diam = 1.0 / (m.c * m.c * b_j)
        left, right = x_star - 0.5 * diam, x_star + 0.5 * diam
        lifts = lifts_in_chart(spec, i, 0.45 * diam, left, right, 0.1, y_start)
        geom = ClassGeometry(spec, i, j, m, y_start, b_j, lifts)
        self.geom = geom
        intervals = []
        for cx, cy, rho in zip(lifts.cx, lifts.cy, lifts.rho):
            ec, er = cy * math.cosh(rho), cy * math.sinh(rho)
            # lifts entirely below the equator of the ball cannot meet the paths above it
            if ec + er <= 0.5 * diam or cx + er <= left or cx - er >= right:
                continue
            pad = 0.1 * er
            intervals.append([cx - er - pad, cx + er + pad])
        if not intervals:
            return
        intervals.sort()
        merged = [intervals[0]]
        for lo, hi in intervals[1:]:
            if lo <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], hi)
            else:
                merged.append([lo, hi])
        P = -m.d / m.c
        for lo, hi in merged:
            if lo - 0.05 * diam < left or hi + 0.05 * diam > right:
                raise QuadratureError("a perturbed geodesic grazes the target horosphere")
            pieces = [(lo, hi)] if not lo < x_star < hi else [(lo, x_star), (x_star, hi)]
            for a, b in pieces:
                ua, ub = self._u_entry(m, P, b_j, a), self._u_entry(m, P, b_j, b)
                self._add_entry(geom, P, min(ua, ub), max(ua, ub), im_max)
                # exit points |u| = 1/|u_entry|; the vertical through x_star exits at infinity
                inner = max(abs(ua), abs(ub))
                outer = min(abs(ua), abs(ub))
                sign = math.copysign(1.0, ua if ua != 0.0 else ub)
                hi_abs = 1.0 / outer if outer > 0 else u_max
                if outer == 0.0:
                    # both metrics decay like |u|^(-2 sigma) beyond u_max
                    self.tail_bound += 2.0 * u_max ** (1 - 2 * sigma_min) / (2 * sigma_min - 1)
                self._add_exit(geom, P, sign, 1.0 / inner, hi_abs, im_max)
        self.tail_bound *= math.exp(-sigma_min * min(self.T, self.T_hyperbolic)) * 2.0

    @staticmethod
    def _u_entry(m, P, b_j, x):
        if abs(x - m.a / m.c) < 1e-300:
            return 0.0
        e = (m.d * x - m.b) / (m.a - m.c * x)
        w = (e - P) / b_j
        return (w - math.copysign(math.sqrt(w * w - 4.0), w)) / 2.0

    @staticmethod
    def _x_of_entry(m, P, b_j, u):
        """Start abscissa of the hyperbolic geodesic through the horosphere point ``u``."""
        u = np.asarray(u, dtype=float)
        with np.errstate(divide="ignore"):
            e = P + b_j * (u * u + 1.0) / u
        x = np.where(u == 0.0, m.a / m.c, (m.a * e + m.b) / (m.c * e + m.d))
        return x

    def _add_entry(self, geom, P, u_lo, u_hi, im_max):
        if u_hi - u_lo <= 0:
            return
        panels = max(4, int(math.ceil((u_hi - u_lo) * (im_max + 4.0) / PHASE_PER_PANEL)))
        u, w = _gl_panels(u_lo, u_hi, panels)
        G, log_jt = self._solve_nodes(geom, P, u, exit_branch=False)
        self.branches.append(_Branch(u, w, G, log_jt))

    def _add_exit(self, geom, P, sign, a_lo, a_hi, im_max):
        if a_hi <= a_lo:
            return
        z_lo, z_hi = math.log(a_lo), math.log(a_hi)
        panels = max(4, int(math.ceil((z_hi - z_lo) * (2.0 * im_max + 4.0) / PHASE_PER_PANEL)))
        z, wz = _gl_panels(z_lo, z_hi, panels)
        u = sign * np.exp(z)
        w = wz * np.exp(z)
        G, log_jt = self._solve_nodes(geom, P, u, exit_branch=True)
        self.branches.append(_Branch(u, w, G, log_jt))

    # -- matching nodes to geodesics ---------------------------------------------------------

    def _solve_nodes(self, geom, P, u, exit_branch, tol=1e-13, max_iter=30):
        m, b_j = geom.m, geom.b_j
        target = 1.0 / u if exit_branch else u
        row = 1 if exit_branch else 0

        def image(xs):
            data = family_crossings(geom, xs)[row]
            return (1.0 / data[0] if exit_branch else data[0]), data

        # secant per node, re-integrating only the nodes still unresolved
        x0 = self._x_of_entry(m, P, b_j, target)
        x1 = x0 + 1e-7 / (m.c * m.c * b_j)
        f0 = image(x0)[0] - target
        f1, data = image(x1)
        f1 = f1 - target
        active = np.abs(f1) >= tol
        for _ in range(max_iter):
            if not np.any(active):
                break
            denom = f1[active] - f0[active]
            ok = denom != 0
            step = np.where(ok, f1[active] * (x1[active] - x0[active]) / np.where(ok, denom, 1.0), 0.0)
            x0[active], f0[active] = x1[active], f1[active]
            x1[active] = x1[active] - step
            fa, da = image(x1[active])
            f1[active] = fa - target[active]
            data[:, active] = da
            active = np.abs(f1) >= tol
        if np.max(np.abs(f1)) >= 100 * tol:
            raise QuadratureError(f"horosphere node matching stalled (max gap {np.max(np.abs(f1)):.2e})")
        return data[1], data[2]

    # -- evaluation ------------------------------------------------------------------------------

    def value(self, s: complex) -> complex:
        s = complex(s)
        out = cmath_exp(-s * self.T_hyperbolic) * horocycle_integral(s)
        if not self.branches:
            return out
        log_b = math.log(self.geom.b_j)
        for br in self.branches:
            h_var = np.exp(s * log_b - s * br.G + br.log_jt)
            h_cc = np.exp(-s * self.T_hyperbolic - s * np.log1p(br.u * br.u))
            out += complex(np.sum(br.w * (h_var - h_cc)))
        return out


def cmath_exp(z: complex) -> complex:
    return complex(np.exp(complex(z)))


def family_crossings(geom: ClassGeometry, xs, rtol: float = 1e-12):
    """Entry and exit data on the target horosphere for geodesics started at abscissae ``xs``.

    All geodesics are integrated as one system.  Each is stopped once it is
    strictly inside the target horoball, where the metric is hyperbolic, and
    both crossings follow in closed form.

    Returns
    -------
    entry, exit : (3, n) arrays
        Rows: horosphere coordinate ``u`` (arclength from the foot of the
        hyperbolic stationary geodesic), Busemann value ``G`` and
        ``log Jtilde``.
    """
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    n = len(xs)
    m, b_j = geom.m, geom.b_j
    field_ = geom.field

    def rhs(t, s):
        x, y, th, J, Jp = s.reshape(5, n)
        phi, px, py, lap = field_.evaluate(x, y)
        e = np.exp(-phi)
        speed = y * e
        k = e * e * (-1.0 - lap)
        c, sn = np.cos(th), np.sin(th)
        return np.concatenate([speed * c, speed * sn, speed * (-px * sn + (py - 1.0 / y) * c),
                               Jp, -k * J])

    j0 = 1.0 / geom.y_start
    y0 = np.concatenate([xs, np.full(n, geom.y_start), np.full(n, -math.pi / 2),
                         np.full(n, j0), np.full(n, j0)])
    solver = DOP853(rhs, 0.0, y0, _horizon(geom), rtol=rtol, atol=ATOL)
    caught = np.zeros(n, dtype=bool)
    snap = np.zeros((6, n))
    while not np.all(caught):
        if solver.status != "running":
            raise IntegrationFailure("some geodesics never entered the target horoball")
        solver.step()
        if solver.status == "failed":
            raise IntegrationFailure("geodesic family integration failed")
        x, y, th, J, Jp = solver.y.reshape(5, n)
        inside = (geom.height_j(x, y) > 1.001 * b_j) & ~caught
        if np.any(inside):
            snap[:5, inside] = solver.y.reshape(5, n)[:, inside]
            snap[5, inside] = solver.t
            caught |= inside
    x, y, th, J, Jp, t = snap
    z = x + 1j * y
    zj = geom.to_chart_j(z)
    thj = geom.angle_j(x, y, th)
    xj, yj = zj.real, zj.imag
    c, sn = np.cos(thj), np.sin(thj)
    with np.errstate(divide="ignore", invalid="ignore"):
        fwd = xj + yj * c / (1.0 - sn)
        bwd = xj - yj * c / (1.0 + sn)
    centre = 0.5 * (fwd + bwd)
    radius = 0.5 * np.abs(fwd - bwd)
    half = np.sqrt(radius * radius - b_j * b_j)
    toward_bwd = np.sign(bwd - fwd)
    p_entry = centre + toward_bwd * half
    p_exit = centre - toward_bwd * half
    P = -m.d / m.c

    def crossing(px_, sign):
        d = np.arccosh(1.0 + ((px_ - xj) ** 2 + (b_j - yj) ** 2) / (2.0 * b_j * yj))
        tc = t + sign * d
        jc = J * np.cosh(sign * d) + Jp * np.sinh(sign * d)
        G = tc - math.log(geom.y_start)
        return np.array([(px_ - P) / b_j, G, 0.5 * (G - np.log(jc))])

    return crossing(p_entry, -1.0), crossing(p_exit, 1.0)


def horosphere_quadrature_phi(spec: SurfaceSpec, records: Sequence[ScatteredGeodesicRecord],
                              s: complex, im_max: Optional[float] = None,
                              sigma_min: Optional[float] = None) -> complex:
    """Sum over classes of ``b_j^s`` times the horosphere integral of ``exp(-s G) Jtilde``.

    ``records`` are the classes of one cusp pair up to the truncation time.
    Without bumps every class contributes ``exp(-s T)`` times the same
    horocycle integral, which is computed once.
    """
    s = complex(s)
    if not records:
        return 0j
    if not spec.bumps:
        times = np.array([r.sojourn_time for r in records])
        return complex(np.sum(np.exp(-s * times))) * horocycle_integral(s)
    im_max = abs(s.imag) if im_max is None else im_max
    sigma_min = s.real if sigma_min is None else sigma_min
    return sum(HorosphereIntegral(spec, r, im_max, sigma_min).value(s) for r in records)


def extract_A1(spec: SurfaceSpec, record: ScatteredGeodesicRecord, a0: Optional[float] = None,
               sigma: float = 3.0, ladder: Sequence[float] = (50.0, 100.0, 200.0, 400.0)):
    """First correction of the stationary-phase expansion from quadrature on a ladder.

    With ``I(s)`` the horosphere integral of the class, ``s R(s)`` with
    ``R = I (s/pi)^(1/2) exp(sT) / a0 - 1`` is fitted by a polynomial in
    ``1/s`` through the ladder points ``s = sigma + i t``; its constant term
    is ``A1``.

    Returns
    -------
    A1 : float
    estimates : list of float
        Extrapolants using the first 1, 2, ... ladder points (real parts).

    Raises
    ------
    NonConvergence
        When successive extrapolants do not approach each other.
    """
    if a0 is None:
        a0 = 1.0 if not spec.bumps else compute_a0(spec, record).a0
    quad = HorosphereIntegral(spec, record, max(ladder), sigma)
    s_vals = np.array([complex(sigma, t) for t in ladder])
    sr = np.array([s * (quad.value(s) * np.sqrt(s / math.pi) * np.exp(s * quad.T) / a0 - 1.0)
                   for s in s_vals])
    # extrapolate from the largest |s| downwards: k points fit k unknowns
    order = np.argsort(-np.abs(s_vals))
    estimates = []
    for k in range(1, len(s_vals) + 1):
        sel = order[:k]
        V = np.vander(1.0 / s_vals[sel], k, increasing=True)
        coef = np.linalg.solve(V, sr[sel])
        estimates.append(float(coef[0].real))
    diffs = np.abs(np.diff(estimates))
    if len(diffs) > 1 and not np.all(diffs[1:] <= diffs[:-1] * 1.0001 + 1e-12):
        raise NonConvergence("ladder extrapolants do not settle", float(diffs[-1]))
    return estimates[-1], estimates


# ---------------------------------------------------------------------------
# first variation


def _bump_field(spec: SurfaceSpec, geom: ClassGeometry, bump: ConformalBump, with_maps=False):
    eps = 0.25 / (geom.m.c * geom.m.c * geom.b_j)
    x0 = geom.target
    return lifts_in_chart(spec, geom.i, eps, x0, x0, 0.5, geom.y_start, bumps=[bump],
                          with_maps=with_maps)


def perturbation_family(spec: SurfaceSpec, bump: ConformalBump):
    """Map ``eps -> surface`` with the bump at amplitude ``eps`` times its own.

    The heights ``b_i`` depend only on the bump support, so every member
    shares the same constant-curvature region.
    """
    base = with_bumps(spec, [bump.scaled(0.0)])

    def member(eps: float) -> SurfaceSpec:
        bumps = list(base.bumps)
        bumps[-1] = replace(bumps[-1], amplitude=bump.amplitude * eps)
        return replace(base, bumps=tuple(bumps))
    return member


def _check_self_intersections(geom: ClassGeometry, maps: np.ndarray, lifts: ConformalField,
                              radius: float):
    """Reject a bump whose support comes near a crossing of two strands of the geodesic."""
    x0 = geom.target
    near = [k for k in range(len(lifts))
            if math.asinh(abs(lifts.cx[k] - x0) / lifts.cy[k]) < EXCLUSION_FACTOR * radius]
    for p in near:
        for q in near:
            if p == q:
                continue
            g = IsometryMap.from_matrix(maps[p].reshape(2, 2)) @ \
                IsometryMap.from_matrix(maps[q].reshape(2, 2)).inverse()
            ends = [g.apply_boundary(x0), g.apply_boundary(INFINITY)]
            if any(e is INFINITY for e in ends):
                continue
            lo, hi = sorted(ends)
            if not lo < x0 < hi:
                continue
            # the transported strand crosses the vertical line x = x0 here
            cen, rad = 0.5 * (lo + hi), 0.5 * (hi - lo)
            z = complex(x0, math.sqrt(max(rad * rad - (x0 - cen) ** 2, 0.0)))
            c = complex(lifts.cx[p], lifts.cy[p])
            d = math.acosh(1.0 + abs(z - c) ** 2 / (2.0 * z.imag * c.imag))
            if d < EXCLUSION_FACTOR * radius:
                raise ValueError("bump support is too close to a self-intersection of the geodesic")


def first_variation(spec: SurfaceSpec, record: ScatteredGeodesicRecord, bump: ConformalBump,
                    panels: int = 4000):
    """Derivatives of the sojourn time and of ``log a0`` under ``g -> exp(2 eps psi) g``.

    ``psi`` is the periodized profile of ``bump`` (amplitude included).  The
    geodesic of the class must not meet any bump of ``spec``, so that the
    curvature is ``-1`` along it.  Returns ``(dT, dlog_a0)`` with
    ``dT = int psi dt`` and
    ``dlog_a0 = 1/2 int (dK) / (U - S) dt``, ``dK = -2 psi K - exp(-2 phi) Lap psi``.

    Raises
    ------
    ValueError
        When the base geodesic crosses a bump of ``spec`` or the new bump lies
        near a self-intersection.
    """
    fam = perturbation_family(spec, bump)
    base = fam(0.0)
    geom = class_geometry(base, record)
    x0 = geom.target
    for cx, cy, rho in zip(geom.field.cx, geom.field.cy, geom.field.rho):
        if math.asinh(abs(cx - x0) / cy) < rho and np.any(geom.field.amp):
            raise ValueError("the base geodesic crosses a bump; the formula needs curvature -1 along it")
    unit = replace(base.bumps[-1], amplitude=bump.amplitude)
    psi_field, maps = _bump_field(base, geom, unit, with_maps=True)
    if len(psi_field) == 0:
        return 0.0, 0.0
    _check_self_intersections(geom, maps, psi_field, bump.radius)
    traj = run_class(geom, x0)
    t1 = traj.t_end
    # stable Riccati variable from the cusp-j end, integrated backwards
    k_of = lambda t: float(geom.field.curvature(*traj.sol(t)[:2]))
    back = solve_ivp(lambda t, S: [-S[0] * S[0] - k_of(t)], (t1, 0.0), [-1.0], method="DOP853",
                     rtol=1e-11, atol=1e-13, dense_output=True)
    t, w = _gl_panels(0.0, t1, panels)
    s = traj.sol(t)
    x, y = s[0], s[1]
    psi, _, _, lap_psi = psi_field.evaluate(x, y)
    phi, _, _, lap_phi = geom.field.evaluate(x, y)
    K = np.exp(-2 * phi) * (-1.0 - lap_phi)
    U = s[4] / s[3]
    S = back.sol(t)[0]
    dK = -2.0 * psi * K - np.exp(-2.0 * phi) * lap_psi
    dT = float(np.sum(w * psi))
    dlog_a0 = float(0.5 * np.sum(w * dK / (U - S)))
    return dT, dlog_a0


def fermi_curvature_variation(psi_field: ConformalField, traj: Trajectory, t: np.ndarray,
                              step: float = 1e-3) -> np.ndarray:
    """Curvature variation ``-1/2 d^2 h_11 / dr^2`` of ``h = 2 psi g`` in Fermi coordinates.

    ``r`` is the signed distance along hyperbolic normal geodesics.  The
    formula is exact for perturbations that only change the tangential
    component ``h_11``; for a conformal change it leaves out the ``h_rr``
    contribution, and ``first_variation`` uses the full formula instead.
    """
    s = traj.sol(t)
    x, y, th = s[0], s[1], s[2]
    vals = []
    for r in (-step, 0.0, step):
        xr, yr = hyperbolic_shoot(x, y, th + math.pi / 2, r)
        vals.append(2.0 * psi_field.evaluate(xr, yr)[0] * np.cosh(r) ** 2)
    return -0.5 * (vals[0] - 2.0 * vals[1] + vals[2]) / (step * step)


def hyperbolic_shoot(x, y, theta, r):
    """Point at hyperbolic distance ``r`` from ``(x, y)`` along the direction ``theta``."""
    # rotate the upward geodesic through i by theta - pi/2, then move i to x + iy
    half = 0.5 * (np.asarray(theta) - math.pi / 2)
    c, s = np.cos(half), np.sin(half)
    w = 1j * np.exp(r)
    w = (c * w + s) / (-s * w + c)
    out = x + y * w
    return out.real, out.imag


def attach_coefficients(spec: SurfaceSpec, records: Sequence[ScatteredGeodesicRecord],
                        order: int = 0) -> list:
    """Records with ``a0`` (and ``a1`` for ``order`` 1) filled in.

    Classes whose geodesic stays in constant curvature share one
    horosphere integral up to the factor ``exp(-s T)``, so their ``a0`` is
    one and ``A1`` is extracted once.  Classes meeting a bump are shot and
    integrated individually.
    """
    out = []
    shared_a1 = None
    for r in records:
        geom = class_geometry(spec, r)
        flat = len(geom.field) == 0 or not np.any(geom.field.amp)
        if flat:
            a0, a1 = 1.0, None
            if order == 1:
                if shared_a1 is None:
                    shared_a1 = extract_A1(spec, replace(r, a0=1.0), 1.0)[0]
                a1 = shared_a1
            out.append(replace(r, a0=a0, a1=a1))
            continue
        shot = shoot_scattered(spec, r, steps=2)
        a0 = float(compute_a0(spec, shot).a0)
        a1 = a0 * extract_A1(spec, shot, a0)[0] if order == 1 else None
        out.append(replace(shot, a0=a0, a1=a1))
    return out
