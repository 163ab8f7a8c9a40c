# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled tile walk.  Same contract as ``_tilewalk_py.walk``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, log, fabs, INFINITY, llround
from libcpp.set cimport set as cset
from libcpp.pair cimport pair
from libcpp.vector cimport vector

cnp.import_array()

cdef double KEY_SCALE = 1e3
cdef double SNAP = 1e-13


cdef inline bint _image(double a, double b, double c, double d, bint flip,
                        double x, double y, bint inf, double *ox, double *oy) noexcept nogil:
    """Vertex image; returns True when the image is the point at infinity."""
    cdef double den_r, den_i, nr, ni, den2
    # relative tests: generator products leave rounding-level entries where a
    # parabolic map has exact zeros (see _tilewalk_py._image)
    if inf:
        if fabs(c) <= SNAP * fabs(a):
            return True
        ox[0] = a / c
        oy[0] = 0.0
        return False
    if y == 0.0 and fabs(c * x + d) <= SNAP * fabs(a * x + b):
        return True
    if flip:
        y = -y
    den_r = c * x + d
    den_i = c * y
    nr = a * x + b
    ni = a * y
    den2 = den_r * den_r + den_i * den_i
    if den2 == 0.0:
        return True
    ox[0] = (nr * den_r + ni * den_i) / den2
    oy[0] = fabs((ni * den_r - nr * den_i) / den2)
    return False


cdef inline pair[long long, long long] _key(double a, double b, double c, double d,
                                            long k, double ix, double iy) noexcept nogil:
    cdef double x = 0.0, y = 1.0
    cdef pair[long long, long long] key
    _image(a, b, c, d, a * d - b * c < 0, ix, iy, False, &x, &y)
    key.first = k * 4294967296LL + llround(log(y) * KEY_SCALE) + 2147483648LL
    key.second = llround(x / y * KEY_SCALE)
    return key


cdef bint _keep(double a, double b, double c, double d, long k,
                const double[:, :] vx, const double[:, :] vy, const cnp.int8_t[:, :] vinf,
                const cnp.int64_t[:] nverts, double eps, double lo, double hi,
                double cone, double ymax, double *px, double *py, int *pinf) noexcept nogil:
    cdef long n = nverts[k], v, w
    cdef bint flip = a * d - b * c < 0
    cdef bint has_inf = False
    cdef double hmax = 0.0, xl = INFINITY, xr = -INFINITY
    cdef double x1, y1, x2, y2, dx, cen, rad, gap, h
    for v in range(n):
        pinf[v] = _image(a, b, c, d, flip, vx[k, v], vy[k, v], vinf[k, v] != 0, &px[v], &py[v])
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
        h = INFINITY
    else:
        for v in range(n):
            w = (v + 1) % n
            x1 = px[v]
            y1 = py[v]
            x2 = px[w]
            y2 = py[w]
            dx = x2 - x1
            if fabs(dx) <= 1e-15 * (fabs(x1) + fabs(x2) + 1e-300):
                continue
            cen = ((x2 * x2 + y2 * y2) - (x1 * x1 + y1 * y1)) / (2.0 * dx)
            if (x1 < cen < x2) or (x2 < cen < x1):
                rad = sqrt((x1 - cen) * (x1 - cen) + y1 * y1)
                if rad > hmax:
                    hmax = rad
        h = hmax
    if h < eps:
        return False
    gap = 0.0
    if lo - xr > gap:
        gap = lo - xr
    if xl - hi > gap:
        gap = xl - hi
    if h < ymax:
        return gap <= cone * h
    return gap <= cone * ymax


cdef double _compact_height(double a, double b, double c, double d, long k,
                           const double[:, :] chx, const double[:, :] chy,
                           const cnp.int64_t[:] chn, const double[:, :] tau,
                           const double[:] hcut, const double[:, :] lx,
                           double *px, double *py) noexcept nogil:
    """Height of the tile image with its cusp spike cut off along a horocycle."""
    cdef bint flip = a * d - b * c < 0
    cdef long n = chn[k], v
    cdef double hmax = 0.0, x1, y1, x2, y2, dx, cen, rad, tc, td, xtop
    for v in range(n):
        _image(a, b, c, d, flip, chx[k, v], chy[k, v], False, &px[v], &py[v])
        if py[v] > hmax:
            hmax = py[v]
    for v in range(n - 1):
        x1 = px[v]
        y1 = py[v]
        x2 = px[v + 1]
        y2 = py[v + 1]
        dx = x2 - x1
        if fabs(dx) <= 1e-15 * (fabs(x1) + fabs(x2) + 1e-300):
            continue
        cen = ((x2 * x2 + y2 * y2) - (x1 * x1 + y1 * y1)) / (2.0 * dx)
        if (x1 < cen < x2) or (x2 < cen < x1):
            rad = sqrt((x1 - cen) * (x1 - cen) + y1 * y1)
            if rad > hmax:
                hmax = rad
    tc = c * tau[k, 0] + d * tau[k, 2]
    td = c * tau[k, 1] + d * tau[k, 3]
    if fabs(tc) <= SNAP * (fabs(c * tau[k, 0]) + fabs(d * tau[k, 2])):
        return INFINITY
    xtop = -td / tc
    if (lx[k, 0] <= xtop <= lx[k, 1]) or (lx[k, 1] <= xtop <= lx[k, 0]):
        if 1.0 / (tc * tc * hcut[k]) > hmax:
            hmax = 1.0 / (tc * tc * hcut[k])
    return hmax


def walk(vx, vy, vinf, nverts, nb_mat, nb_tile, ix, iy, start_mat, long start_tile,
         double eps, double lo, double hi, double cone, double ymax, long budget,
         compact=None):
    cdef const double[:, :] cvx = np.ascontiguousarray(vx, dtype=np.float64)
    cdef const double[:, :] cvy = np.ascontiguousarray(vy, dtype=np.float64)
    cdef const cnp.int8_t[:, :] cvinf = np.ascontiguousarray(vinf, dtype=np.int8)
    cdef const cnp.int64_t[:] cnv = np.ascontiguousarray(nverts, dtype=np.int64)
    cdef const double[:, :, :] cnb = np.ascontiguousarray(nb_mat, dtype=np.float64)
    cdef const cnp.int64_t[:, :] cnt = np.ascontiguousarray(nb_tile, dtype=np.int64)
    cdef const double[:] cix = np.ascontiguousarray(ix, dtype=np.float64)
    cdef const double[:] ciy = np.ascontiguousarray(iy, dtype=np.float64)
    cdef double[:] st = np.ascontiguousarray(start_mat, dtype=np.float64)
    cdef bint use_compact = compact is not None
    n_tiles = cnv.shape[0]
    if use_compact:
        chains, tau_in, hcut_in, lx_in = compact
        width = max(len(ch) for ch in chains)
        chx_in = np.zeros((n_tiles, width))
        chy_in = np.zeros((n_tiles, width))
        chn_in = np.zeros(n_tiles, dtype=np.int64)
        for t, ch in enumerate(chains):
            chn_in[t] = len(ch)
            for v, p in enumerate(ch):
                chx_in[t, v] = p[0]
                chy_in[t, v] = p[1]
    else:
        width = 1
        chx_in = np.zeros((n_tiles, 1))
        chy_in = np.zeros((n_tiles, 1))
        chn_in = np.zeros(n_tiles, dtype=np.int64)
        tau_in = np.zeros((n_tiles, 4))
        hcut_in = np.zeros(n_tiles)
        lx_in = np.zeros((n_tiles, 2))
    cdef const double[:, :] chx = chx_in
    cdef const double[:, :] chy = chy_in
    cdef const cnp.int64_t[:] chn = chn_in
    cdef const double[:, :] ctau = np.ascontiguousarray(tau_in, dtype=np.float64)
    cdef const double[:] chcut = np.ascontiguousarray(hcut_in, dtype=np.float64)
    cdef const double[:, :] clx = np.ascontiguousarray(lx_in, dtype=np.float64)
    cdef vector[double] cx_buf, cy_buf
    cx_buf.resize(width)
    cy_buf.resize(width)

    cdef vector[double] mats
    cdef vector[long] tiles
    cdef vector[long] parents
    cdef vector[long] sides
    cdef vector[long] depths
    cdef cset[pair[long long, long long]] seen
    cdef pair[long long, long long] key
    cdef long maxv = cvx.shape[1]
    cdef vector[double] bx, by
    cdef vector[int] bflag
    cdef long head = 0, k, s, kk, status = 0
    cdef double a, b, c, d, ga, gb, gc, gd, na, nb, nc, nd, det, r

    bx.resize(maxv)
    by.resize(maxv)
    bflag.resize(maxv)

    a = st[0]; b = st[1]; c = st[2]; d = st[3]
    seen.insert(_key(a, b, c, d, start_tile, cix[start_tile], ciy[start_tile]))
    mats.push_back(a); mats.push_back(b); mats.push_back(c); mats.push_back(d)
    tiles.push_back(start_tile)
    parents.push_back(-1)
    sides.push_back(-1)
    depths.push_back(0)

    with nogil:
        while head < <long> tiles.size():
            a = mats[4 * head]
            b = mats[4 * head + 1]
            c = mats[4 * head + 2]
            d = mats[4 * head + 3]
            k = tiles[head]
            for s in range(cnv[k]):
                ga = cnb[k, s, 0]
                gb = cnb[k, s, 1]
                gc = cnb[k, s, 2]
                gd = cnb[k, s, 3]
                na = a * ga + b * gc
                nb = a * gb + b * gd
                nc = c * ga + d * gc
                nd = c * gb + d * gd
                det = fabs(na * nd - nb * nc)
                if det != 1.0:
                    r = sqrt(det)
                    na = na / r
                    nb = nb / r
                    nc = nc / r
                    nd = nd / r
                kk = cnt[k, s]
                key = _key(na, nb, nc, nd, kk, cix[kk], ciy[kk])
                if seen.count(key):
                    continue
                seen.insert(key)
                if use_compact and chcut[kk] > 0:
                    if _compact_height(na, nb, nc, nd, kk, chx, chy, chn, ctau, chcut, clx,
                                       cx_buf.data(), cy_buf.data()) < eps:
                        continue
                if not _keep(na, nb, nc, nd, kk, cvx, cvy, cvinf, cnv, eps, lo, hi, cone, ymax,
                             bx.data(), by.data(), bflag.data()):
                    continue
                if <long> tiles.size() >= budget:
                    status = 1
                    break
                mats.push_back(na); mats.push_back(nb); mats.push_back(nc); mats.push_back(nd)
                tiles.push_back(kk)
                parents.push_back(head)
                sides.push_back(s)
                depths.push_back(depths[head] + 1)
            if status:
                break
            head += 1

    cdef long n = tiles.size(), i
    out_m = np.empty((n, 4), dtype=np.float64)
    out_t = np.empty(n, dtype=np.int64)
    out_p = np.empty(n, dtype=np.int64)
    out_s = np.empty(n, dtype=np.int64)
    out_d = np.empty(n, dtype=np.int64)
    cdef double[:, :] om = out_m
    cdef cnp.int64_t[:] ot = out_t, op = out_p, os_ = out_s, od = out_d
    for i in range(n):
        om[i, 0] = mats[4 * i]
        om[i, 1] = mats[4 * i + 1]
        om[i, 2] = mats[4 * i + 2]
        om[i, 3] = mats[4 * i + 3]
        ot[i] = tiles[i]
        op[i] = parents[i]
        os_[i] = sides[i]
        od[i] = depths[i]
    return out_m, out_t, out_p, out_s, out_d, status
