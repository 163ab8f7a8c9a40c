"""Upper half-plane geometry: isometries, distances, Busemann functions, horoballs.

Isometries are real 2x2 matrices with determinant +1 or -1.  A matrix with
determinant -1 acts by ``z -> (a*conj(z) + b) / (c*conj(z) + d)``, so
reflections compose by plain matrix multiplication.  Surface groups only
ever contain determinant +1 elements; reflections appear while building
fundamental domains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

DET_TOL = 1e-12
DEFAULT_TOL = 1e-10


class Infinity:
    """The boundary point at infinity, as a tagged singleton."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "INFINITY"

    def __reduce__(self):
        return (Infinity, ())


INFINITY = Infinity()

BoundaryPoint = Union[float, Infinity]


def is_infinite(p) -> bool:
    return p is INFINITY


@dataclass(frozen=True)
class UhpPoint:
    """A point of the upper half-plane with horizontal coordinate ``x`` and height ``y``."""

    x: float
    y: float

    def __post_init__(self):
        if not self.y > 0:
            raise ValueError(f"height must be positive, got {self.y!r}")

    @property
    def z(self) -> complex:
        return complex(self.x, self.y)

    @classmethod
    def from_complex(cls, z: complex) -> "UhpPoint":
        return cls(float(z.real), float(z.imag))


@dataclass(frozen=True)
class IsometryMap:
    """Isometry of the half-plane given by a real matrix ``(a b; c d)``.

    Parameters
    ----------
    a, b, c, d : float
        Matrix entries.  ``|det|`` must equal 1 within ``DET_TOL``, scaled by
        the squared entry size for long products.
    word : tuple of int, optional
        Group-word provenance.  Entry ``k + 1`` stands for generator ``k``
        and ``-(k + 1)`` for its inverse.  Words concatenate under
        composition.
    """

    a: float
    b: float
    c: float
    d: float
    word: Optional[tuple] = field(default=None, compare=False)

    def __post_init__(self):
        det = self.a * self.d - self.b * self.c
        scale = max(1.0, self.a ** 2 + self.b ** 2 + self.c ** 2 + self.d ** 2)
        if abs(abs(det) - 1.0) > DET_TOL * scale:
            raise ValueError(f"|det| must be 1, got {det!r}")

    @classmethod
    def from_matrix(cls, m, word=None) -> "IsometryMap":
        """Build from any real matrix with nonzero determinant, rescaling to ``|det| = 1``."""
        m = np.asarray(m, dtype=float)
        det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
        if det == 0 or not math.isfinite(det):
            raise ValueError("singular matrix")
        m = m / math.sqrt(abs(det))
        return cls(float(m[0, 0]), float(m[0, 1]), float(m[1, 0]), float(m[1, 1]), word)

    @classmethod
    def identity(cls) -> "IsometryMap":
        return cls(1.0, 0.0, 0.0, 1.0, ())

    @property
    def det(self) -> float:
        return self.a * self.d - self.b * self.c

    @property
    def preserves_orientation(self) -> bool:
        return self.det > 0

    @property
    def trace(self) -> float:
        return self.a + self.d

    def as_array(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]])

    def __matmul__(self, other: "IsometryMap") -> "IsometryMap":
        a = self.a * other.a + self.b * other.c
        b = self.a * other.b + self.b * other.d
        c = self.c * other.a + self.d * other.c
        d = self.c * other.b + self.d * other.d
        word = None
        if self.word is not None and other.word is not None:
            word = tuple(self.word) + tuple(other.word)
        return IsometryMap.from_matrix([[a, b], [c, d]], word)

    def inverse(self) -> "IsometryMap":
        det = self.det
        word = None
        if self.word is not None:
            word = tuple(-w for w in reversed(self.word))
        return IsometryMap(self.d / det, -self.b / det, -self.c / det, self.a / det, word)

    def with_word(self, word) -> "IsometryMap":
        return IsometryMap(self.a, self.b, self.c, self.d, tuple(word))

    def apply_complex(self, z: complex) -> complex:
        if self.det < 0:
            z = z.conjugate()
        return (self.a * z + self.b) / (self.c * z + self.d)

    def apply(self, p: UhpPoint) -> UhpPoint:
        w = self.apply_complex(p.z)
        # the image of a half-plane point is a half-plane point; clamp rounding only
        return UhpPoint(w.real, max(w.imag, np.finfo(float).tiny))

    def apply_boundary(self, x: BoundaryPoint) -> BoundaryPoint:
        """Image of a boundary point (a real number or ``INFINITY``)."""
        if x is INFINITY:
            return INFINITY if self.c == 0 else self.a / self.c
        den = self.c * x + self.d
        if den == 0:
            return INFINITY
        return (self.a * x + self.b) / den

    def is_parabolic(self, tol: float = DEFAULT_TOL) -> bool:
        return self.det > 0 and abs(self.trace ** 2 - 4.0) <= tol and not self.is_identity(tol)

    def is_identity(self, tol: float = 1e-9) -> bool:
        """True when the matrix equals plus or minus the identity within ``tol``."""
        if self.det < 0:
            return False
        s = 1.0 if self.a + self.d >= 0 else -1.0
        return (abs(s * self.a - 1) <= tol and abs(s * self.d - 1) <= tol
                and abs(self.b) <= tol and abs(self.c) <= tol)

    def fixes(self, x: BoundaryPoint, tol: float = DEFAULT_TOL) -> bool:
        y = self.apply_boundary(x)
        if x is INFINITY or y is INFINITY:
            return x is y
        return abs(x - y) <= tol * max(1.0, abs(x))


def apply_isometry(m: IsometryMap, z: UhpPoint) -> UhpPoint:
    """Apply an isometry to a half-plane point."""
    return m.apply(z)


def translation(t: float) -> IsometryMap:
    return IsometryMap(1.0, float(t), 0.0, 1.0)


def dilation(k: float) -> IsometryMap:
    r = math.sqrt(k)
    return IsometryMap(r, 0.0, 0.0, 1.0 / r)


def reflection_in_vertical(x0: float) -> IsometryMap:
    """Reflection across the vertical geodesic ``x = x0``."""
    return IsometryMap(-1.0, 2.0 * x0, 0.0, 1.0)


def reflection_in_circle(center: float, radius: float) -> IsometryMap:
    """Reflection across the geodesic semicircle with given center and radius."""
    return IsometryMap.from_matrix([[center, radius ** 2 - center ** 2], [1.0, -center]])


def half_turn(p: UhpPoint) -> IsometryMap:
    """Rotation by pi about the point ``p``."""
    s = math.sqrt(p.y)
    move = IsometryMap(s, p.x / s, 0.0, 1.0 / s)
    rot = IsometryMap(0.0, -1.0, 1.0, 0.0)
    return move @ rot @ move.inverse()


def hyp_distance(z1: UhpPoint, z2: UhpPoint) -> float:
    """Hyperbolic distance, computed as ``2 asinh(|z1 - z2| / (2 sqrt(y1 y2)))``."""
    return 2.0 * math.asinh(abs(z1.z - z2.z) / (2.0 * math.sqrt(z1.y * z2.y)))


@dataclass(frozen=True)
class CuspPoint:
    """A parabolic boundary point together with its normalizing chart.

    ``chart`` maps infinity to the point and the standard cusp coordinates
    to the lifted cusp coordinates, so that the Busemann function is
    ``-log Im(chart^{-1} z)``.
    """

    chart: IsometryMap

    @property
    def boundary(self) -> BoundaryPoint:
        return self.chart.apply_boundary(INFINITY)

    @classmethod
    def at_infinity(cls) -> "CuspPoint":
        return cls(IsometryMap.identity())

    def moved(self, g: IsometryMap) -> "CuspPoint":
        """The same normalized point pushed forward by ``g``."""
        return CuspPoint(g @ self.chart)


def busemann_G(p: CuspPoint, z: UhpPoint) -> float:
    """Busemann function of a normalized parabolic point, ``-log`` of the cusp height."""
    if not isinstance(p, CuspPoint):
        raise TypeError("busemann_G needs a normalized parabolic point (CuspPoint)")
    w = p.chart.inverse().apply_complex(z.z)
    return -math.log(w.imag)


@dataclass(frozen=True)
class Horoball:
    """Horoball ``{y > height}`` at infinity, or the disk tangent at ``base`` of diameter ``1/height``."""

    base: BoundaryPoint
    height: float

    def __post_init__(self):
        if not self.height > 0:
            raise ValueError("horoball height must be positive")

    @property
    def diameter(self) -> float:
        if self.base is INFINITY:
            return math.inf
        return 1.0 / self.height

    def normalizing_chart(self) -> IsometryMap:
        """Isometry sending infinity to the base so that the ball is the image of ``{y > height}``."""
        if self.base is INFINITY:
            return IsometryMap.identity()
        return IsometryMap(float(self.base), -1.0, 1.0, 0.0)

    def contains(self, z: UhpPoint) -> bool:
        w = self.normalizing_chart().inverse().apply_complex(z.z)
        return w.imag > self.height


@dataclass(frozen=True)
class Geodesic:
    """Oriented complete geodesic from ``start`` to ``end`` (boundary points).

    The unit-speed parametrization is ``t -> frame(i e^t)``.
    """

    start: BoundaryPoint
    end: BoundaryPoint

    def __post_init__(self):
        if self.start is self.end or (self.start is not INFINITY and self.end is not INFINITY
                                       and self.start == self.end):
            raise ValueError("geodesic endpoints must differ")

    @property
    def frame(self) -> IsometryMap:
        u, v = self.start, self.end
        if v is INFINITY:
            return IsometryMap(1.0, float(u), 0.0, 1.0)
        if u is INFINITY:
            return IsometryMap(float(v), -1.0, 1.0, 0.0)
        if v > u:
            return IsometryMap.from_matrix([[v, u], [1.0, 1.0]])
        return IsometryMap.from_matrix([[v, -u], [1.0, -1.0]])

    def point(self, t: float) -> UhpPoint:
        return self.frame.apply(UhpPoint(0.0, math.exp(t)))

    def time_of(self, z: UhpPoint) -> float:
        """Parameter of the orthogonal projection of ``z`` onto the geodesic."""
        w = self.frame.inverse().apply_complex(z.z)
        return math.log(abs(w))

    def distance_to(self, z: UhpPoint) -> float:
        w = self.frame.inverse().apply_complex(z.z)
        return math.asinh(abs(w.real) / w.imag)

    def signed_offset(self, z: UhpPoint) -> float:
        """``sinh`` of the signed distance from ``z`` to the geodesic."""
        w = self.frame.inverse().apply_complex(z.z)
        return w.real / w.imag


def geodesic_through(z1: UhpPoint, z2: UhpPoint) -> Geodesic:
    """Complete geodesic through two points, oriented from ``z1`` towards ``z2``."""
    dx = z2.x - z1.x
    if abs(dx) <= 1e-14 * max(1.0, abs(z1.x), abs(z2.x)):
        return Geodesic(z1.x, INFINITY) if z2.y > z1.y else Geodesic(INFINITY, z1.x)
    center = (abs(z2.z) ** 2 - abs(z1.z) ** 2) / (2.0 * dx)
    radius = abs(z1.z - center)
    if dx > 0:
        return Geodesic(center - radius, center + radius)
    return Geodesic(center + radius, center - radius)


@dataclass(frozen=True)
class HoroballCrossing:
    """Entry and exit of a geodesic through a horoball.

    Times refer to the unit-speed parametrization of the geodesic.  ``exit_time``
    is ``None`` when the geodesic ends at the base of the ball, and ``entry_time``
    is ``None`` when it starts there.
    """

    entry_time: Optional[float]
    exit_time: Optional[float]
    entry: Optional[UhpPoint]
    exit: Optional[UhpPoint]

    @property
    def entry_height(self) -> float:
        return self.entry.y


class NoIntersection(ValueError):
    """The geodesic does not meet the horoball."""


def horoball_entry_exit(ball: Horoball, geodesic: Geodesic) -> HoroballCrossing:
    """Times and points where ``geodesic`` crosses the boundary of ``ball``.

    Raises
    ------
    NoIntersection
        When the geodesic misses the closed ball or is tangent to it.
    """
    frame = ball.normalizing_chart().inverse() @ geodesic.frame
    c, d, r = frame.c, frame.d, ball.height
    # height along the geodesic in the ball chart is e^t / (c^2 e^{2t} + d^2)
    if abs(c) < 1e-300:
        t_in, t_out = math.log(r * d * d), None
    elif abs(d) < 1e-300:
        t_in, t_out = None, -math.log(r * c * c)
    else:
        disc = 1.0 - 4.0 * r * r * c * c * d * d
        if disc <= 0:
            raise NoIntersection("geodesic misses the horoball")
        sq = math.sqrt(disc)
        # roots of r c^2 E^2 - E + r d^2 = 0, small root written stably
        e_big = (1.0 + sq) / (2.0 * r * c * c)
        e_small = (2.0 * r * d * d) / (1.0 + sq)
        t_in, t_out = math.log(e_small), math.log(e_big)
    entry = geodesic.point(t_in) if t_in is not None else None
    exit_ = geodesic.point(t_out) if t_out is not None else None
    return HoroballCrossing(t_in, t_out, entry, exit_)


def boundary_image(m: IsometryMap, x: BoundaryPoint) -> BoundaryPoint:
    return m.apply_boundary(x)


def random_isometry(rng: np.random.Generator, scale: float = 1.0) -> IsometryMap:
    """Random orientation-preserving isometry (used by property tests and diagnostics)."""
    a, b, c = rng.normal(scale=scale, size=3)
    a = a if abs(a) > 0.1 else 0.1 + abs(a)
    d = (1.0 + b * c) / a
    return IsometryMap.from_matrix([[a, b], [c, d]])


def compose_all(maps: Sequence[IsometryMap]) -> IsometryMap:
    out = IsometryMap.identity()
    for m in maps:
        out = out @ m
    return out
