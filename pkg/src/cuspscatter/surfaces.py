"""Cusp surfaces presented by a tiled fundamental domain.

A surface is a finite set of prototiles in one half-plane chart (the base
chart).  Each prototile is a geodesic polygon with exactly one ideal vertex,
and every side records the group element ``g`` and prototile ``k'`` such
that the tile across that side is ``g(tile k')``.  The group generated by
these side pairings is the surface group.  Each cusp carries a chart that
sends infinity to its parabolic point with translation length ``width``.

Curvature perturbations are conformal: the metric is ``exp(2 phi) g_hyp``
where ``phi`` is a sum of radial bumps ``A (1 - d^2/rho^2)^4`` in the
hyperbolic distance ``d`` to the bump center.  Each bump must sit inside a
single prototile, which makes its lifts the images of its center under the
tiles of that prototile.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .hypcore import (INFINITY, CuspPoint, Geodesic, IsometryMap, UhpPoint, half_turn,
                      reflection_in_circle, reflection_in_vertical, translation)
from .tilewalk import DEFAULT_BUDGET, TilingArrays, walk_tiles

MAX_ELL_DEFAULT = 0.6
DEFAULT_ELL = 0.5


@dataclass(frozen=True)
class CuspRecord:
    """Cusp ``index`` (1-based) with its normalizing chart and reference heights.

    ``a`` is the height at which the cusp circle has length one
    (``width / a == 1``), ``b`` the height above which the metric is
    hyperbolic, and ``b_star >= b`` the working height used to keep every
    retained sojourn time above ``-log(b_star_i b_star_j)``.
    """

    index: int
    chart: IsometryMap
    width: float
    a: float
    b: float
    b_star: float
    base_tile: int

    @property
    def fixed_point(self):
        return self.chart.apply_boundary(INFINITY)

    @property
    def parabolic_generator(self) -> IsometryMap:
        return self.chart @ translation(self.width) @ self.chart.inverse()


@dataclass(frozen=True)
class ConformalBump:
    """Radial bump ``amplitude * (1 - d^2/radius^2)^4`` around ``center`` (base chart).

    ``radius`` is a hyperbolic radius; ``tile`` is the prototile holding the support.
    """

    center: UhpPoint
    radius: float
    amplitude: float
    tile: int = -1

    def scaled(self, factor: float) -> "ConformalBump":
        return replace(self, amplitude=self.amplitude * factor)

    @property
    def euclidean_disk(self):
        """Center and radius of the support as a Euclidean disk."""
        y = self.center.y
        return complex(self.center.x, y * math.cosh(self.radius)), y * math.sinh(self.radius)


@dataclass(frozen=True)
class Neighbour:
    """Tile across a side: ``generator`` index (-1 for identity), inverted or not, and prototile."""

    generator: int
    inverse: bool
    tile: int


@dataclass(frozen=True)
class Tile:
    """Prototile: vertices in the base chart (complex, or ``INFINITY``), side ``s`` joining
    vertices ``s`` and ``s + 1``."""

    vertices: tuple
    cusp: int
    chart: IsometryMap
    neighbours: tuple
    interior: complex


@dataclass(frozen=True)
class SurfaceSpec:
    name: str
    generators: tuple
    cusps: tuple
    tiles: tuple
    bumps: tuple = ()
    dimension: int = 1
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dimension != 1:
            raise ValueError("the geometry engine handles surfaces only (dimension 1)")
        if not self.cusps:
            raise ValueError("a cusp surface needs at least one cusp")

    @property
    def kappa(self) -> int:
        return len(self.cusps)

    @property
    def has_bumps(self) -> bool:
        return any(b.amplitude != 0.0 for b in self.bumps)

    def cusp(self, i: int) -> CuspRecord:
        if not 1 <= i <= len(self.cusps):
            raise ValueError(f"no cusp {i}")
        return self.cusps[i - 1]

    def cusp_point(self, i: int, gamma: Optional[IsometryMap] = None) -> CuspPoint:
        """Normalized parabolic point ``gamma(p_i)`` in the base chart."""
        chart = self.cusp(i).chart
        return CuspPoint(chart if gamma is None else gamma @ chart)

    def generator_map(self, index: int, inverse: bool = False) -> IsometryMap:
        if index < 0:
            return IsometryMap.identity()
        g = self.generators[index]
        return g.inverse() if inverse else g

    def neighbour_map(self, k: int, s: int) -> IsometryMap:
        nb = self.tiles[k].neighbours[s]
        return self.generator_map(nb.generator, nb.inverse)

    def tile_top_height(self, k: int) -> float:
        """Largest height of a finite vertex of tile ``k`` in its own cusp chart."""
        tile = self.tiles[k]
        inv = tile.chart.inverse()
        top = 0.0
        for v in tile.vertices:
            w = _move_vertex(inv, v)
            if w is not INFINITY:
                top = max(top, w.imag)
        return top

    @cached_property
    def tiling(self) -> TilingArrays:
        n_tiles = len(self.tiles)
        nv = max(len(t.vertices) for t in self.tiles)
        vx = np.zeros((n_tiles, nv))
        vy = np.zeros((n_tiles, nv))
        vinf = np.zeros((n_tiles, nv), dtype=np.int8)
        nverts = np.zeros(n_tiles, dtype=np.int64)
        nb_mat = np.zeros((n_tiles, nv, 4))
        nb_tile = np.zeros((n_tiles, nv), dtype=np.int64)
        nb_code = np.zeros((n_tiles, nv), dtype=np.int64)
        for k, tile in enumerate(self.tiles):
            nverts[k] = len(tile.vertices)
            for v, p in enumerate(tile.vertices):
                if p is INFINITY:
                    vinf[k, v] = 1
                else:
                    vx[k, v], vy[k, v] = p.real, p.imag
            for s, nb in enumerate(tile.neighbours):
                g = self.neighbour_map(k, s)
                nb_mat[k, s] = (g.a, g.b, g.c, g.d)
                nb_tile[k, s] = nb.tile
                if nb.generator >= 0:
                    nb_code[k, s] = -(nb.generator + 1) if nb.inverse else nb.generator + 1
        ix = np.array([t.interior.real for t in self.tiles])
        iy = np.array([t.interior.imag for t in self.tiles])
        return TilingArrays(vx, vy, vinf, nverts, nb_mat, nb_tile, nb_code, ix, iy,
                            self._compact_data())

    def _compact_data(self):
        chains, tau, hcut, lx = [], [], [], []
        for tile in self.tiles:
            inv = tile.chart.inverse()
            local = [_move_vertex(inv, v) for v in tile.vertices]
            ideal = [v for v, p in enumerate(local) if p is INFINITY]
            tau.append((tile.chart.a, tile.chart.b, tile.chart.c, tile.chart.d))
            if len(ideal) != 1:
                chains.append([(0.0, 1.0)])
                hcut.append(0.0)
                lx.append((0.0, 0.0))
                continue
            n = len(local)
            iv = ideal[0]
            prev, nxt = local[(iv - 1) % n], local[(iv + 1) % n]
            cut = min(prev.imag, nxt.imag)
            pts = [complex(nxt.real, cut)]
            pts += [local[(iv + m) % n] for m in range(1, n)]
            pts.append(complex(prev.real, cut))
            base = [tile.chart.apply_complex(z) for z in pts]
            chains.append([(z.real, z.imag) for z in base])
            hcut.append(cut)
            lx.append((prev.real, nxt.real))
        return chains, np.array(tau), np.array(hcut), np.array(lx)

    def tile_sides(self, k: int, chart: Optional[IsometryMap] = None) -> list:
        """Complete geodesics carrying the sides of tile ``k`` (optionally moved by ``chart``)."""
        verts = self.tiles[k].vertices
        if chart is not None:
            verts = [_move_vertex(chart, v) for v in verts]
        n = len(verts)
        return [side_geodesic(verts[s], verts[(s + 1) % n]) for s in range(n)]

    def tile_contains(self, k: int, z: complex, chart: Optional[IsometryMap] = None,
                      margin: float = 0.0) -> bool:
        """True when ``z`` lies in tile ``k`` at hyperbolic distance more than ``margin`` from its sides."""
        interior = self.tiles[k].interior
        if chart is not None:
            interior = chart.apply_complex(interior)
        p = UhpPoint.from_complex(z)
        q = UhpPoint.from_complex(interior)
        for geo in self.tile_sides(k, chart):
            off_p = geo.signed_offset(p)
            off_q = geo.signed_offset(q)
            if off_p * off_q <= 0 or abs(off_p) <= math.sinh(margin):
                return False
        return True

    def walk(self, i: int, eps: float, lo: float, hi: float, cone: float = 0.0,
             ymax: float = math.inf, budget: int = DEFAULT_BUDGET, backend=None,
             compact: bool = False):
        """Tile walk in the chart of cusp ``i``, starting from that cusp's base tile."""
        cusp = self.cusp(i)
        start = cusp.chart.inverse()
        return walk_tiles(self.tiling, (start.a, start.b, start.c, start.d), cusp.base_tile,
                          eps, lo, hi, cone, ymax, budget, backend, compact)

    def base_strip(self, i: int) -> tuple:
        """Left edge of the base tile of cusp ``i`` in its chart and the chart width."""
        cusp = self.cusp(i)
        inv = cusp.chart.inverse()
        moved = [_move_vertex(inv, v) for v in self.tiles[cusp.base_tile].vertices]
        xs = [v.real for v in moved if v is not INFINITY]
        return min(xs), cusp.width


def _move_vertex(m: IsometryMap, v):
    if v is INFINITY:
        out = m.apply_boundary(INFINITY)
        return INFINITY if out is INFINITY else complex(out, 0.0)
    if v.imag == 0.0:
        out = m.apply_boundary(v.real)
        return INFINITY if out is INFINITY else complex(out, 0.0)
    return m.apply_complex(v)


def side_geodesic(p, q) -> Geodesic:
    """Complete geodesic through two polygon vertices (points, ideal points or ``INFINITY``)."""
    if p is INFINITY:
        return Geodesic(INFINITY, q.real)
    if q is INFINITY:
        return Geodesic(p.real, INFINITY)
    dx = q.real - p.real
    if abs(dx) <= 1e-13 * max(1.0, abs(p.real), abs(q.real)):
        return Geodesic(p.real, INFINITY) if q.imag > p.imag else Geodesic(INFINITY, p.real)
    center = (abs(q) ** 2 - abs(p) ** 2) / (2.0 * dx)
    radius = abs(p - center)
    if dx > 0:
        return Geodesic(center - radius, center + radius)
    return Geodesic(center + radius, center - radius)


# ---------------------------------------------------------------------------
# pentagon builders


def two_cusp_height(ell: float) -> float:
    """Height of the top finite vertex of the two-cusp pentagon."""
    return 0.5 / (math.sqrt(2.0) + math.sqrt(1.0 + math.exp(-2.0 * ell)))


def _dedupe_generators(maps):
    """Assign generator indices to side-pairing maps, identifying ``g`` with ``g^{-1}``."""
    gens = []
    codes = []
    for g in maps:
        if g.is_identity(1e-9):
            codes.append((-1, False))
            continue
        found = None
        for idx, h in enumerate(gens):
            if (g @ h.inverse()).is_identity(1e-9):
                found = (idx, False)
                break
            if (g @ h).is_identity(1e-9):
                found = (idx, True)
                break
        if found is None:
            gens.append(g)
            found = (len(gens) - 1, False)
        codes.append(found)
    return gens, codes


TWO_CUSP_COLOURING = (1, 2, 1, 2, 1)


def build_pentagon_two_cusp(ell: float, max_ell: float = MAX_ELL_DEFAULT,
                            colouring: Sequence[int] = TWO_CUSP_COLOURING) -> SurfaceSpec:
    """Two-cusp surface glued from four right-angled pentagons with one ideal vertex.

    The prototile has vertices ``inf, i y0, (y0 + i y0)/sqrt2, P3, 1/2 + i h`` with
    ``h = y0 exp(-ell)``.  Its five sides lie on ``x = 0``, the circle of radius
    ``y0`` about 0, the circle of radius ``y0`` about ``sqrt2 y0``, the circle of
    radius ``h`` about 1/2, and ``x = 1/2``.  The four copies are images of the
    prototile under the reflection group in its sides.  ``colouring`` assigns
    each side a nonzero element of the Klein four-group (encoded 1, 2, 3 with
    addition by xor); the surface group is the kernel of the induced
    homomorphism.  Both vertical sides must share a colour (so that tiles 0
    and 1 form the cusp at infinity) and sides meeting at a right angle must
    differ (so that the kernel is torsion free).

    Raises
    ------
    ValueError
        If ``ell <= 0``, ``ell > max_ell`` or the colouring is inadmissible.
    """
    if not ell > 0:
        raise ValueError("ell must be positive")
    if ell > max_ell:
        raise ValueError(f"ell = {ell} exceeds the accepted range (ell <= {max_ell})")
    colour = [int(c) for c in colouring]
    if (len(colour) != 5 or any(c not in (1, 2, 3) for c in colour) or colour[0] != colour[4]
            or any(colour[s] == colour[s + 1] for s in range(4))
            or len(set(colour)) < 2):
        raise ValueError(f"inadmissible colouring {colouring!r}")
    y0 = two_cusp_height(ell)
    h = y0 * math.exp(-ell)
    m = math.sqrt(2.0) * y0
    # D meets C2: |z - m| = y0, |z - 1/2| = h
    x3 = (h * h - y0 * y0 + m * m - 0.25) / (2.0 * (m - 0.5))
    p3 = complex(x3, math.sqrt(y0 * y0 - (x3 - m) ** 2))
    proto = (INFINITY, complex(0.0, y0), complex(y0, y0) / math.sqrt(2.0), p3, complex(0.5, h))
    refl = [reflection_in_vertical(0.0), reflection_in_circle(0.0, y0),
            reflection_in_circle(m, y0), reflection_in_circle(0.5, h),
            reflection_in_vertical(0.5)]
    # tiles are labelled by their colour class; the two tiles of each cusp share
    # their ideal vertex (infinity, and the image of infinity across C1)
    r_vl, r_c1, r_vr = refl[0], refl[1], refl[4]
    place = {0: (IsometryMap.identity(), 0), colour[0]: (r_vr, 1),
             colour[1]: (r_c1, 1), colour[1] ^ colour[0]: (r_c1 @ r_vl, 0)}
    cusp_one = {0, colour[0]}
    cusp_two = sorted(set(range(4)) - cusp_one)
    side_maps = []
    for k in range(4):
        for s in range(5):
            k2 = k ^ colour[s]
            side_maps.append(place[k][0] @ refl[s] @ place[k2][0].inverse())
    gens, codes = _dedupe_generators(side_maps)
    gens = [g.with_word((i + 1,)) for i, g in enumerate(gens)]
    # cusp charts: orientation-preserving copies of the tile placements
    charts = {}
    chart_class = {}
    for k in range(4):
        g, parity = place[k]
        charts[k] = g @ refl[0] if parity else g
        chart_class[k] = k ^ (colour[0] if parity else 0)
    for group in (sorted(cusp_one), cusp_two):
        if chart_class[group[0]] != chart_class[group[1]]:
            raise ValueError(f"colouring {colouring!r} gives inconsistent cusp charts")
    base2 = cusp_two[0]
    proto_interior = complex(0.25, 2.0 * y0)
    tiles = []
    for k in range(4):
        verts = tuple(_move_vertex(place[k][0], v) for v in proto)
        nbs = tuple(Neighbour(codes[5 * k + s][0], codes[5 * k + s][1], k ^ colour[s])
                    for s in range(5))
        tiles.append(Tile(verts, 1 if k in cusp_one else 2, charts[k], nbs,
                          place[k][0].apply_complex(proto_interior)))
    b_star = y0 * math.exp(0.05)
    cusps = (CuspRecord(1, IsometryMap.identity(), 1.0, 1.0, y0, b_star, 0),
             CuspRecord(2, charts[base2], 1.0, 1.0, y0, b_star, base2))
    params = {"ell": float(ell), "y0": y0}
    if tuple(colour) != TWO_CUSP_COLOURING:
        params["colouring"] = list(colour)
    return SurfaceSpec("pentagon2", tuple(gens), cusps, tuple(tiles), params=params)


ONE_CUSP_HALF_WIDTH = 1.25


def build_pentagon_one_cusp(half_width: float = ONE_CUSP_HALF_WIDTH) -> SurfaceSpec:
    """One-cusp punctured torus from two symmetric right-angled pentagons.

    The first pentagon has vertical sides ``x = -w`` (A) and ``x = w`` (B), top
    vertices ``-w + i`` and ``w + i``, sides C and E on the unit circles about
    ``-w`` and ``w`` and side D on the circle of radius ``sqrt(w^2 - 1)`` about 0.
    The second pentagon is its translate by ``2w``.  Pairings: A with B' by the
    translation by ``4w``, B with A' (shared side), C with E by the reflection in E
    composed with ``x -> -x``, C' with E' likewise, and D with D' by the half-turn
    about the top of D composed with the translation by ``-2w``.

    The chart keeps the top vertices at height 1, so the cusp circle has length
    ``4w`` at height 1 and length 1 at height ``a = 4w``.
    """
    w = float(half_width)
    if not 1.0 < w < math.sqrt(2.0):
        raise ValueError("half width must lie in (1, sqrt 2) so that all sojourn times are >= 0")
    r = math.sqrt(w * w - 1.0)
    proto = (INFINITY, complex(-w, 1.0), complex(-r * r / w, r / w),
             complex(r * r / w, r / w), complex(w, 1.0))
    shift = translation(2.0 * w)
    t = translation(4.0 * w)
    flip = IsometryMap(-1.0, 0.0, 0.0, 1.0)  # x -> -x
    g_ce = reflection_in_circle(w, 1.0) @ flip
    g_d = half_turn(UhpPoint(0.0, r)) @ shift.inverse()
    g_ce2 = shift @ g_ce @ shift.inverse()
    gens = [g.with_word((i + 1,)) for i, g in enumerate((t, g_ce, g_d, g_ce2))]
    # sides: A, C, D, E, B for the first tile and A', C', D', E', B' for the second
    nb1 = (Neighbour(0, True, 1), Neighbour(1, True, 0), Neighbour(2, False, 1),
           Neighbour(1, False, 0), Neighbour(-1, False, 1))
    nb2 = (Neighbour(-1, False, 0), Neighbour(3, True, 1), Neighbour(2, True, 0),
           Neighbour(3, False, 1), Neighbour(0, False, 0))
    interior = complex(0.0, 1.5)
    tiles = (Tile(proto, 1, IsometryMap.identity(), nb1, interior),
             Tile(tuple(_move_vertex(shift, v) for v in proto), 1, IsometryMap.identity(), nb2,
                  shift.apply_complex(interior)))
    width = 4.0 * w
    cusps = (CuspRecord(1, IsometryMap.identity(), width, width, 1.0, math.exp(0.05), 0),)
    return SurfaceSpec("pentagon1", tuple(gens), cusps, tiles, params={"half_width": w})


# ---------------------------------------------------------------------------
# consistency checks


def vertex_cycle_products(spec: SurfaceSpec, tol: float = 1e-9) -> list:
    """Walk around every finite vertex of every prototile and return the holonomy.

    Returns a list of ``(tile, vertex, cycle_length, product)``; for a
    consistent gluing every product is plus or minus the identity.
    """
    out = []
    for k0, tile0 in enumerate(spec.tiles):
        n0 = len(tile0.vertices)
        for v0 in range(n0):
            p0 = tile0.vertices[v0]
            if p0 is INFINITY or p0.imag == 0.0:
                continue
            g = IsometryMap.identity()
            k, v, side = k0, v0, v0  # leave through the side starting at v
            length = 0
            while True:
                tile = spec.tiles[k]
                n = len(tile.vertices)
                h = spec.neighbour_map(k, side)
                other = tile.vertices[(side + 1) % n] if side == v else tile.vertices[side]
                point = g.apply_complex(tile.vertices[v])
                far = _move_vertex(g, other)
                g = g @ h
                k = tile.neighbours[side].tile
                tile = spec.tiles[k]
                n = len(tile.vertices)
                images = [_move_vertex(g, u) for u in tile.vertices]
                v = min(range(n), key=lambda i: _gap(images[i], point))
                if _gap(images[v], point) > 1e-7:
                    raise ValueError(f"side pairing of tile {k0} does not match vertices")
                # the side we arrived through is the one at v whose other end is `far`
                prev_side, next_side = (v - 1) % n, v
                arrived_prev = _gap(images[(v - 1) % n], far) < _gap(images[(v + 1) % n], far)
                side = next_side if arrived_prev else prev_side
                length += 1
                if k == k0 and v == v0 and side == v0:
                    break
                if length > 64:
                    raise ValueError("vertex cycle does not close")
            out.append((k0, v0, length, g))
    return out


def _gap(p, q) -> float:
    if p is INFINITY or q is INFINITY:
        return 0.0 if p is q else math.inf
    return abs(p - q)


def check_relators(spec: SurfaceSpec, tol: float = 1e-9) -> bool:
    return all(g.is_identity(tol) for _, _, _, g in vertex_cycle_products(spec))


def check_free_action(spec: SurfaceSpec, max_length: int = 4) -> bool:
    """Sampled freeness check: no nontrivial word up to ``max_length`` is elliptic or a reflection."""
    letters = []
    for g in spec.generators:
        letters.extend([g, g.inverse()])
    frontier = [IsometryMap.identity()]
    for _ in range(max_length):
        nxt = []
        for w in frontier:
            for g in letters:
                p = w @ g
                if p.is_identity(1e-9):
                    continue
                if not p.preserves_orientation or abs(p.trace) < 2.0 - 1e-9:
                    return False
                nxt.append(p)
        frontier = nxt
    return True


# ---------------------------------------------------------------------------
# conformal bumps


def _profile_terms(dist, rho):
    """Radial profile pieces: value, F'(d)/sinh(d) and F'' + coth(d) F' (zero outside)."""
    q = (dist / rho) ** 2
    inside = q < 1.0
    one = np.where(inside, 1.0 - q, 0.0)
    d2 = dist * dist
    small = dist < 1e-3
    d_over_sinh = np.where(small, 1.0 - d2 / 6.0 + 7.0 * d2 * d2 / 360.0,
                           dist / np.sinh(np.where(small, 1.0, dist)))
    d_coth = np.where(small, 1.0 + d2 / 3.0 - d2 * d2 / 45.0,
                      dist / np.tanh(np.where(small, 1.0, dist)))
    value = one ** 4
    grad_factor = -8.0 * one ** 3 / rho ** 2 * d_over_sinh
    lap = -8.0 * one ** 3 / rho ** 2 * (1.0 + d_coth) + 48.0 * d2 * one ** 2 / rho ** 4
    return value, grad_factor, lap


class ConformalField:
    """The conformal factor ``phi`` built from explicit bump lifts in one chart.

    Parameters
    ----------
    centers : array of complex
    radii, amplitudes : arrays of float
    """

    def __init__(self, centers, radii, amplitudes):
        self.cx = np.real(np.asarray(centers, dtype=complex)).reshape(-1)
        self.cy = np.imag(np.asarray(centers, dtype=complex)).reshape(-1)
        self.rho = np.broadcast_to(np.asarray(radii, dtype=float), self.cx.shape).copy()
        self.amp = np.broadcast_to(np.asarray(amplitudes, dtype=float), self.cx.shape).copy()

    def __len__(self):
        return len(self.cx)

    def scaled(self, factor: float) -> "ConformalField":
        return ConformalField(self.cx + 1j * self.cy, self.rho, self.amp * factor)

    def evaluate(self, x, y):
        """Return ``(phi, phi_x, phi_y, lap_phi)`` with ``lap_phi`` the hyperbolic Laplacian."""
        x = np.asarray(x, dtype=float)[..., None]
        y = np.asarray(y, dtype=float)[..., None]
        if len(self.cx) == 0:
            z = np.zeros(np.broadcast(x, y).shape[:-1])
            return z, z, z, z
        dx = x - self.cx
        dy = y - self.cy
        e = dx * dx + dy * dy
        dist = 2.0 * np.arcsinh(np.sqrt(e / (4.0 * y * self.cy)))
        value, gfac, lap = _profile_terms(dist, self.rho)
        qx = dx / (y * self.cy)
        qy = dy / (y * self.cy) - e / (2.0 * y * y * self.cy)
        phi = np.sum(self.amp * value, axis=-1)
        phi_x = np.sum(self.amp * gfac * qx, axis=-1)
        phi_y = np.sum(self.amp * gfac * qy, axis=-1)
        lap_phi = np.sum(self.amp * lap, axis=-1)
        return phi, phi_x, phi_y, lap_phi

    def curvature(self, x, y):
        phi, _, _, lap = self.evaluate(x, y)
        return np.exp(-2.0 * phi) * (-1.0 - lap)

    def support_intervals_on_vertical(self, x0: float):
        """Height intervals where the vertical line ``x = x0`` meets each support disk."""
        out = []
        for cx, cy, rho in zip(self.cx, self.cy, self.rho):
            ec, er = cy * math.cosh(rho), cy * math.sinh(rho)
            off = abs(x0 - cx)
            if off < er:
                half = math.sqrt(er * er - off * off)
                out.append((ec - half, ec + half))
        return out


def fundamental_lifts(spec: SurfaceSpec) -> ConformalField:
    """Bump lifts in the base chart meeting the fundamental domain or its neighbouring tiles."""
    centers, radii, amps = [], [], []
    for bump in spec.bumps:
        pts = [bump.center.z]
        for k, tile in enumerate(spec.tiles):
            for s, nb in enumerate(tile.neighbours):
                if nb.tile == bump.tile:
                    pts.append(spec.neighbour_map(k, s).apply_complex(bump.center.z))
        for p in pts:
            if all(abs(p - q) > 1e-9 for q in centers):
                centers.append(p)
                radii.append(bump.radius)
                amps.append(bump.amplitude)
    return ConformalField(centers, radii, amps)


def lifts_in_chart(spec: SurfaceSpec, i: int, eps: float, lo: float, hi: float,
                   cone: float = 0.0, ymax: float = math.inf, bumps=None,
                   with_maps: bool = False):
    """Bump lifts, seen in the chart of cusp ``i``, inside tiles kept by a tile walk.

    ``bumps`` defaults to the bumps of ``spec``; other bumps must carry their
    prototile index.  With ``with_maps`` also return, per lift, the matrix
    taking the base chart to the chart of cusp ``i`` on that lift's tile.
    """
    bumps = spec.bumps if bumps is None else bumps
    if not bumps:
        out = ConformalField([], [], [])
        return (out, np.zeros((0, 4))) if with_maps else out
    res = spec.walk(i, eps, lo, hi, cone, ymax)
    centers, radii, amps, maps = [], [], [], []
    for bump in bumps:
        if bump.tile < 0:
            raise ValueError("bump has no prototile; place it with with_bumps")
        sel = res.mats[res.tiles == bump.tile]
        if len(sel) == 0:
            continue
        z = bump.center.z
        a, b, c, d = sel.T
        flip = a * d - b * c < 0
        zz = np.where(flip, np.conj(z), z)
        w = (a * zz + b) / (c * zz + d)
        centers.extend(w.tolist())
        radii.extend([bump.radius] * len(w))
        amps.extend([bump.amplitude] * len(w))
        maps.extend(sel.tolist())
    out = ConformalField(centers, radii, amps)
    return (out, np.array(maps).reshape(-1, 4)) if with_maps else out


def curvature_at(spec: SurfaceSpec, z: UhpPoint) -> float:
    """Gauss curvature of the perturbed metric at a base-chart point of the fundamental domain."""
    if not spec.bumps:
        return -1.0
    return float(fundamental_lifts(spec).curvature(z.x, z.y))


def check_negative_curvature(spec: SurfaceSpec, resolution: int = 40):
    """Sample the curvature over the fundamental domain.

    Returns
    -------
    ok : bool
        True when every sample is negative.
    k_min, k_max : float
        Smallest and largest sampled curvature (pinching bounds).
    """
    if resolution < 1:
        raise ValueError("resolution must be positive")
    if not spec.has_bumps:
        return True, -1.0, -1.0
    field_ = fundamental_lifts(spec)
    samples = [np.array([-1.0])]
    for bump in spec.bumps:
        # polar grid over the support in hyperbolic polar coordinates about the center
        rr = np.linspace(0.0, bump.radius, resolution + 1)
        th = np.linspace(0.0, 2 * np.pi, 4 * resolution, endpoint=False)
        R, TH = np.meshgrid(rr, th)
        cy = bump.center.y
        # point at hyperbolic distance R from (0, 1) in direction TH, then scaled and shifted
        denom = np.cosh(R) - np.sinh(R) * np.sin(TH)
        px = np.sinh(R) * np.cos(TH) / denom
        py = 1.0 / denom
        samples.append(field_.curvature(bump.center.x + cy * px, cy * py).ravel())
    for k, tile in enumerate(spec.tiles):
        finite = [v for v in tile.vertices if v is not INFINITY]
        xs = [v.real for v in finite]
        ys = [v.imag for v in finite if v.imag > 0]
        gx = np.linspace(min(xs), max(xs), resolution)
        gy = np.geomspace(min(ys) * 0.5, max(ys) * 2.0, resolution)
        X, Y = np.meshgrid(gx, gy)
        samples.append(field_.curvature(X, Y).ravel())
    allk = np.concatenate(samples)
    k_min, k_max = float(allk.min()), float(allk.max())
    return k_max < 0, k_min, k_max


def locate_tile(spec: SurfaceSpec, z: complex) -> int:
    for k in range(len(spec.tiles)):
        if spec.tile_contains(k, z):
            return k
    raise ValueError(f"point {z} is not inside the fundamental domain")


def with_bumps(spec: SurfaceSpec, bumps: Sequence[ConformalBump]) -> SurfaceSpec:
    """Attach conformal bumps, validating their placement and raising the heights ``b_i``.

    Each bump support must lie inside one prototile.  For every cusp the
    height ``b_i`` is raised above all lifts of the supports so that
    ``{y > b_i}`` stays hyperbolic; ``b_i`` may not exceed ``a_i``.
    """
    placed = []
    for bump in bumps:
        if not bump.radius > 0:
            raise ValueError("bump radius must be positive")
        k = locate_tile(spec, bump.center.z)
        if not spec.tile_contains(k, bump.center.z, margin=bump.radius):
            raise ValueError("bump support must lie inside a single tile of the fundamental domain")
        placed.append(replace(bump, tile=k))
    out = replace(spec, bumps=tuple(spec.bumps) + tuple(placed))
    cusps = []
    for cusp in out.cusps:
        lo, width = out.base_strip(cusp.index)
        b = cusp.b
        lifts = lifts_in_chart(out, cusp.index, 0.999 * b, lo, lo + width)
        if len(lifts):
            top = float(np.max(lifts.cy * np.exp(lifts.rho)))
            if top >= b:
                b = top * (1.0 + 1e-6)
        if b > cusp.a:
            raise ValueError(f"bump reaches above height a in cusp {cusp.index}")
        cusps.append(replace(cusp, b=b, b_star=max(cusp.b_star, b)))
    return replace(out, cusps=tuple(cusps))


def busemann_margin(spec: SurfaceSpec, i: int, samples: int = 64) -> float:
    """Minimum of ``G_p + log b_i`` over sampled support points of all bump lifts near cusp ``i``."""
    cusp = spec.cusp(i)
    lo, width = spec.base_strip(i)
    lifts = lifts_in_chart(spec, i, 0.5 * cusp.b, lo, lo + width)
    best = math.inf
    th = np.linspace(0, 2 * np.pi, samples, endpoint=False)
    for cx, cy, rho in zip(lifts.cx, lifts.cy, lifts.rho):
        ec, er = cy * math.cosh(rho), cy * math.sinh(rho)
        ys = ec + er * np.sin(th)
        best = min(best, float(np.min(-np.log(ys) + math.log(cusp.b))))
    return best


# ---------------------------------------------------------------------------
# JSON


def _fmt(x: float) -> str:
    if not math.isfinite(x):
        raise ValueError("cannot serialize non-finite number")
    if x == 0.0:
        # keep the sign of zero through a round trip
        return "-0.0" if math.copysign(1.0, x) < 0 else "0.0"
    return format(float(x), ".17g")


def _dump(obj) -> str:
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _fmt(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if obj is None:
        return "null"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_dump(o) for o in obj) + "]"
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(k)}: {_dump(v)}" for k, v in obj.items()) + "}"
    raise TypeError(f"cannot serialize {type(obj)}")


def dump_json(obj) -> str:
    """JSON text with every float written to 17 significant digits."""
    return _dump(obj)


def _mat(m: IsometryMap):
    return [m.a, m.b, m.c, m.d]


def _vertex(v):
    return "inf" if v is INFINITY else [v.real, v.imag]


def spec_to_dict(spec: SurfaceSpec) -> dict:
    return {
        "name": spec.name,
        "dimension": spec.dimension,
        "params": dict(spec.params),
        "generators": [_mat(g) for g in spec.generators],
        "cusps": [{"index": c.index, "fixed_point": _vertex(complex(c.fixed_point, 0.0))
                   if c.fixed_point is not INFINITY else "inf",
                   "chart": _mat(c.chart), "width": c.width, "a": c.a, "b": c.b,
                   "b_star": c.b_star, "base_tile": c.base_tile} for c in spec.cusps],
        "tiles": [{"vertices": [_vertex(v) for v in t.vertices], "cusp": t.cusp,
                   "chart": _mat(t.chart),
                   "neighbours": [[n.generator, n.inverse, n.tile] for n in t.neighbours],
                   "interior": [t.interior.real, t.interior.imag]} for t in spec.tiles],
        "bumps": [{"center": [b.center.x, b.center.y], "radius": b.radius,
                   "amplitude": b.amplitude, "tile": b.tile} for b in spec.bumps],
    }


def spec_to_json(spec: SurfaceSpec) -> str:
    return dump_json(spec_to_dict(spec))


def _load_map(v, word=None) -> IsometryMap:
    return IsometryMap(float(v[0]), float(v[1]), float(v[2]), float(v[3]), word)


def _load_vertex(v):
    return INFINITY if v == "inf" else complex(float(v[0]), float(v[1]))


def spec_from_dict(d: dict) -> SurfaceSpec:
    gens = tuple(_load_map(g, (i + 1,)) for i, g in enumerate(d["generators"]))
    cusps = tuple(CuspRecord(int(c["index"]), _load_map(c["chart"]), float(c["width"]),
                             float(c["a"]), float(c["b"]), float(c["b_star"]),
                             int(c["base_tile"])) for c in d["cusps"])
    tiles = tuple(Tile(tuple(_load_vertex(v) for v in t["vertices"]), int(t["cusp"]),
                       _load_map(t["chart"]),
                       tuple(Neighbour(int(n[0]), bool(n[1]), int(n[2])) for n in t["neighbours"]),
                       complex(float(t["interior"][0]), float(t["interior"][1])))
                  for t in d["tiles"])
    bumps = tuple(ConformalBump(UhpPoint(float(b["center"][0]), float(b["center"][1])),
                                float(b["radius"]), float(b["amplitude"]), int(b["tile"]))
                  for b in d.get("bumps", []))
    return SurfaceSpec(d["name"], gens, cusps, tiles, bumps, int(d.get("dimension", 1)),
                       dict(d.get("params", {})))


def spec_from_json(text: str) -> SurfaceSpec:
    return spec_from_dict(json.loads(text))


def builtin_surface(name: str, **params) -> SurfaceSpec:
    """Built-in surfaces by name: ``pentagon1`` and ``pentagon2`` (parameter ``ell``, default 0.5)."""
    if name == "pentagon1":
        return build_pentagon_one_cusp(**params)
    if name == "pentagon2":
        params.setdefault("ell", DEFAULT_ELL)
        return build_pentagon_two_cusp(**params)
    raise ValueError(f"unknown built-in surface {name!r}")
