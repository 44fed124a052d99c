# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels; see ``_kernels_py.py`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, fabs, floor, INFINITY

cnp.import_array()

DEF ON_EDGE_TOL = 1e-9


cdef inline double _softplus(double x) nogil:
    if x > 0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


cdef inline double _expit(double x) nogil:
    cdef double e
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


cdef inline bint _on_segment(double px, double py, double ax, double ay,
                             double bx, double by, double tol) nogil:
    cdef double dx = bx - ax, dy = by - ay
    cdef double len2 = dx * dx + dy * dy
    cdef double t = 0.0, ex, ey
    if len2 > 0:
        t = ((px - ax) * dx + (py - ay) * dy) / len2
        if t < 0:
            t = 0.0
        elif t > 1:
            t = 1.0
    ex = ax + t * dx - px
    ey = ay + t * dy - py
    return ex * ex + ey * ey <= tol * tol


def points_on_ring(const double[:, ::1] pts, const double[:, ::1] ring, double tol=ON_EDGE_TOL):
    cdef Py_ssize_t npts = pts.shape[0], n = ring.shape[0], p, i, j
    out = np.zeros(npts, dtype=bool)
    cdef cnp.uint8_t[::1] o = out.view(np.uint8)
    with nogil:
        for p in range(npts):
            j = n - 1
            for i in range(n):
                if _on_segment(pts[p, 0], pts[p, 1], ring[j, 0], ring[j, 1], ring[i, 0], ring[i, 1], tol):
                    o[p] = 1
                    break
                j = i
    return out


def points_in_ring(const double[:, ::1] pts, const double[:, ::1] ring):
    cdef Py_ssize_t npts = pts.shape[0], n = ring.shape[0], p, i, j
    cdef double px, py, xi, yi, xj, yj
    cdef bint inside, edge
    out = np.zeros(npts, dtype=bool)
    cdef cnp.uint8_t[::1] o = out.view(np.uint8)
    with nogil:
        for p in range(npts):
            px = pts[p, 0]
            py = pts[p, 1]
            inside = False
            edge = False
            j = n - 1
            for i in range(n):
                xi = ring[i, 0]; yi = ring[i, 1]
                xj = ring[j, 0]; yj = ring[j, 1]
                if _on_segment(px, py, xj, yj, xi, yi, ON_EDGE_TOL):
                    edge = True
                    break
                if yi != yj and ((yi > py) != (yj > py)):
                    if px < (xj - xi) * (py - yi) / (yj - yi) + xi:
                        inside = not inside
                j = i
            o[p] = 1 if (inside or edge) else 0
    return out


def mixture_terms(const double[::1] eta, const double[::1] log_alpha,
                  const cnp.int64_t[::1] offsets, const double[::1] y, const double[::1] n):
    cdef Py_ssize_t C = offsets.shape[0] - 1, N = eta.shape[0], c, k, k0, k1
    cdef double value = 0.0, cmax, tot, s, sig, d1, d2, pk
    u_arr = np.empty(N)
    d_arr = np.empty(N)
    cdef double[::1] u = u_arr
    cdef double[::1] d = d_arr
    with nogil:
        for c in range(C):
            k0 = offsets[c]
            k1 = offsets[c + 1]
            cmax = -INFINITY
            for k in range(k0, k1):
                s = log_alpha[k] + y[c] * eta[k] - n[c] * _softplus(eta[k])
                u[k] = s
                if s > cmax:
                    cmax = s
            tot = 0.0
            for k in range(k0, k1):
                u[k] = exp(u[k] - cmax)
                tot += u[k]
            value -= cmax + log(tot)
            for k in range(k0, k1):
                pk = u[k] / tot
                sig = _expit(eta[k])
                d1 = y[c] - n[c] * sig
                d2 = -n[c] * sig * (1.0 - sig)
                u[k] = pk * d1
                d[k] = -pk * (d1 * d1 + d2)
    return value, u_arr, d_arr


def locate_points(const double[:, ::1] pts, const double[:, ::1] nodes, const cnp.int64_t[:, ::1] tris,
                  double x0, double y0, double cell, Py_ssize_t nx, Py_ssize_t ny,
                  const cnp.int64_t[::1] cell_start, const cnp.int64_t[::1] cell_tris, double tol=1e-12):
    cdef Py_ssize_t npts = pts.shape[0], p, q, t, ix, iy, cid
    cdef double px, py, ax, ay, v0x, v0y, v1x, v1y, v2x, v2y, det, la, lb, lc, s
    tri_arr = np.full(npts, -1, dtype=np.int64)
    bary_arr = np.zeros((npts, 3))
    cdef cnp.int64_t[::1] tri_out = tri_arr
    cdef double[:, ::1] bary = bary_arr
    with nogil:
        for p in range(npts):
            px = pts[p, 0]
            py = pts[p, 1]
            if px < x0 or py < y0 or px > x0 + nx * cell or py > y0 + ny * cell:
                continue
            ix = <Py_ssize_t> floor((px - x0) / cell)
            iy = <Py_ssize_t> floor((py - y0) / cell)
            if ix >= nx:
                ix = nx - 1
            if iy >= ny:
                iy = ny - 1
            cid = iy * nx + ix
            for q in range(cell_start[cid], cell_start[cid + 1]):
                t = cell_tris[q]
                ax = nodes[tris[t, 0], 0]; ay = nodes[tris[t, 0], 1]
                v0x = nodes[tris[t, 1], 0] - ax; v0y = nodes[tris[t, 1], 1] - ay
                v1x = nodes[tris[t, 2], 0] - ax; v1y = nodes[tris[t, 2], 1] - ay
                v2x = px - ax; v2y = py - ay
                det = v0x * v1y - v1x * v0y
                lb = (v2x * v1y - v1x * v2y) / det
                lc = (v0x * v2y - v2x * v0y) / det
                la = 1.0 - lb - lc
                if la >= -tol and lb >= -tol and lc >= -tol:
                    if la < 0: la = 0.0
                    if lb < 0: lb = 0.0
                    if lc < 0: lc = 0.0
                    s = la + lb + lc
                    tri_out[p] = t
                    bary[p, 0] = la / s
                    bary[p, 1] = lb / s
                    bary[p, 2] = lc / s
                    break
    return tri_arr, bary_arr
