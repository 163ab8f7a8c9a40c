"""Pure-Python tile walk, used when the compiled kernel is unavailable.

Same contract as the compiled ``_tilewalk.walk``; see ``tilewalk.walk_tiles``.
"""

import math

import numpy as np

KEY_SCALE = 1e3
SNAP = 1e-13


def _image(a, b, c, d, flip, x, y, inf):
    """Image of a vertex; returns (x, y, is_infinite)."""
    # products of generators leave rounding-level entries where a parabolic map
    # has exact zeros; without the relative test an ideal vertex that should go
    # to infinity lands at a huge finite abscissa
    if inf:
        if abs(c) <= SNAP * abs(a):
            return 0.0, 0.0, True
        return a / c, 0.0, False
    if y == 0.0 and abs(c * x + d) <= SNAP * abs(a * x + b):
        return 0.0, 0.0, True
    if flip:
        y = -y
    den_r = c * x + d
    den_i = c * y
    nr = a * x + b
    ni = a * y
    den2 = den_r * den_r + den_i * den_i
    if den2 == 0.0:
        return 0.0, 0.0, True
    xr = (nr * den_r + ni * den_i) / den2
    yi = (ni * den_r - nr * den_i) / den2
    return xr, abs(yi), False


def _extent(px, py, pinf, n):
    """Max height and x-range of a geodesic polygon given its vertex images."""
    hmax = 0.0
    xl = math.inf
    xr = -math.inf
    has_inf = False
    for v in range(n):
        if pinf[v]:
            has_inf = True
            continue
        if px[v] < xl:
            xl = px[v]
        if px[v] > xr:
            xr = px[v]
        if py[v] > hmax:
            hmax = py[v]
    if has_inf:
        return math.inf, xl, xr
    for v in range(n):
        w = (v + 1) % n
        x1, y1, x2, y2 = px[v], py[v], px[w], py[w]
        dx = x2 - x1
        if abs(dx) <= 1e-15 * (abs(x1) + abs(x2) + 1e-300):
            continue
        cen = ((x2 * x2 + y2 * y2) - (x1 * x1 + y1 * y1)) / (2.0 * dx)
        if min(x1, x2) < cen < max(x1, x2):
            rad = math.sqrt((x1 - cen) ** 2 + y1 * y1)
            if rad > hmax:
                hmax = rad
    return hmax, xl, xr


def _segment_extent(px, py, closed):
    """Max height of the geodesic segments joining consecutive points."""
    hmax = max(py)
    n = len(px)
    for v in range(n if closed else n - 1):
        w = (v + 1) % n
        x1, y1, x2, y2 = px[v], py[v], px[w], py[w]
        dx = x2 - x1
        if abs(dx) <= 1e-15 * (abs(x1) + abs(x2) + 1e-300):
            continue
        cen = ((x2 * x2 + y2 * y2) - (x1 * x1 + y1 * y1)) / (2.0 * dx)
        if min(x1, x2) < cen < max(x1, x2):
            rad = math.sqrt((x1 - cen) ** 2 + y1 * y1)
            if rad > hmax:
                hmax = rad
    return hmax


def _compact_height(a, b, c, d, flip, chain_x, chain_y, tau, hcut, lxa, lxb):
    """Max height of the image of a tile with its cusp spike cut off along a horocycle.

    ``chain_x, chain_y`` list the cut point A, the finite vertices, and the cut
    point B in order (base chart); the horocycle joins B back to A.
    """
    px = []
    py = []
    for x, y in zip(chain_x, chain_y):
        ox, oy, _ = _image(a, b, c, d, flip, x, y, False)
        px.append(ox)
        py.append(oy)
    hmax = _segment_extent(px, py, False)
    # full chart of the horocycle: current matrix times the tile's cusp chart
    tc = c * tau[0] + d * tau[2]
    td = c * tau[1] + d * tau[3]
    if abs(tc) <= SNAP * (abs(c * tau[0]) + abs(d * tau[2])):
        return math.inf
    xtop = -td / tc
    if min(lxa, lxb) <= xtop <= max(lxa, lxb):
        hmax = max(hmax, 1.0 / (tc * tc * hcut))
    return hmax


def walk(vx, vy, vinf, nverts, nb_mat, nb_tile, ix, iy, start_mat, start_tile,
         eps, lo, hi, cone, ymax, budget, compact=None):
    """Breadth-first walk over tiles meeting the pruning region.

    ``compact``, when given, is ``(chains, tau, hcut, lx)`` per prototile and
    switches the height test to the tile with its cusp spike removed
    (prototiles with ``hcut <= 0`` have no spike).

    Returns
    -------
    mats : (n, 4) float array
        Chart matrices ``(a, b, c, d)`` of the kept tiles.
    tiles : (n,) int array
        Prototile index of each kept tile.
    parents, sides, depths : (n,) int arrays
        BFS tree: parent index (-1 for the root), the side crossed and the
        number of sides crossed from the root.
    status : int
        0 on completion, 1 when the budget was exhausted.
    """
    n_tiles = len(nverts)
    vx = [list(map(float, r)) for r in np.asarray(vx)]
    vy = [list(map(float, r)) for r in np.asarray(vy)]
    vinf = [list(map(bool, r)) for r in np.asarray(vinf)]
    nverts = [int(v) for v in nverts]
    nb_mat = np.asarray(nb_mat, dtype=float)
    nbm = [[tuple(map(float, nb_mat[k, s])) for s in range(nverts[k])] for k in range(n_tiles)]
    nbt = [[int(nb_tile[k][s]) for s in range(nverts[k])] for k in range(n_tiles)]
    ix = [float(v) for v in ix]
    iy = [float(v) for v in iy]

    mats = []
    tiles = []
    parents = []
    sides = []
    depths = []
    seen = set()

    def key_of(a, b, c, d, k):
        x, y, inf = _image(a, b, c, d, a * d - b * c < 0, ix[k], iy[k], False)
        return (k, round(math.log(y) * KEY_SCALE), round(x / y * KEY_SCALE))

    if compact is not None:
        chains, tau, hcut, lx = compact
        chains = [([float(p[0]) for p in ch], [float(p[1]) for p in ch]) for ch in chains]
        tau = [tuple(map(float, t)) for t in np.asarray(tau)]
        hcut = [float(h) for h in hcut]
        lx = [tuple(map(float, t)) for t in np.asarray(lx)]

    def keep(a, b, c, d, k):
        flip = a * d - b * c < 0
        n = nverts[k]
        if compact is not None and hcut[k] > 0:
            h = _compact_height(a, b, c, d, flip, chains[k][0], chains[k][1], tau[k], hcut[k],
                                lx[k][0], lx[k][1])
            if h < eps:
                return False
        px = [0.0] * n
        py = [0.0] * n
        pinf = [False] * n
        for v in range(n):
            px[v], py[v], pinf[v] = _image(a, b, c, d, flip, vx[k][v], vy[k][v], vinf[k][v])
        h, xl, xr = _extent(px, py, pinf, n)
        if h < eps:
            return False
        gap = max(0.0, lo - xr, xl - hi)
        return gap <= cone * min(h, ymax)

    a, b, c, d = map(float, start_mat)
    seen.add(key_of(a, b, c, d, start_tile))
    mats.append((a, b, c, d))
    tiles.append(start_tile)
    parents.append(-1)
    sides.append(-1)
    depths.append(0)
    head = 0
    status = 0
    while head < len(mats):
        a, b, c, d = mats[head]
        k = tiles[head]
        for s in range(nverts[k]):
            ga, gb, gc, gd = nbm[k][s]
            na = a * ga + b * gc
            nb = a * gb + b * gd
            nc = c * ga + d * gc
            nd = c * gb + d * gd
            det = abs(na * nd - nb * nc)
            if det != 1.0:
                r = math.sqrt(det)
                na, nb, nc, nd = na / r, nb / r, nc / r, nd / r
            kk = nbt[k][s]
            key = key_of(na, nb, nc, nd, kk)
            if key in seen:
                continue
            seen.add(key)
            if not keep(na, nb, nc, nd, kk):
                continue
            if len(mats) >= budget:
                status = 1
                break
            mats.append((na, nb, nc, nd))
            tiles.append(kk)
            parents.append(head)
            sides.append(s)
            depths.append(depths[head] + 1)
        if status:
            break
        head += 1
    return (np.array(mats, dtype=float).reshape(-1, 4), np.array(tiles, dtype=np.int64),
            np.array(parents, dtype=np.int64), np.array(sides, dtype=np.int64),
            np.array(depths, dtype=np.int64), status)
