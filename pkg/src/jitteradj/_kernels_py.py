"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``.

Both implementations share signatures and must agree to rounding error;
``tests/test_kernels.py`` runs them side by side.
"""

import numpy as np
from scipy.special import expit

ON_EDGE_TOL = 1e-9


def points_on_ring(pts, ring, tol=ON_EDGE_TOL):
    px = pts[:, 0][:, None]
    py = pts[:, 1][:, None]
    a = ring
    b = np.roll(ring, -1, axis=0)
    dx = (b[:, 0] - a[:, 0])[None, :]
    dy = (b[:, 1] - a[:, 1])[None, :]
    len2 = dx * dx + dy * dy
    t = ((px - a[:, 0][None, :]) * dx + (py - a[:, 1][None, :]) * dy) / np.where(len2 > 0, len2, 1.0)
    t = np.clip(t, 0.0, 1.0)
    ex = a[:, 0][None, :] + t * dx - px
    ey = a[:, 1][None, :] + t * dy - py
    return np.any(ex * ex + ey * ey <= tol * tol, axis=1)


def points_in_ring(pts, ring):
    px = pts[:, 0]
    py = pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    n = len(ring)
    j = n - 1
    for i in range(n):
        xi, yi = ring[i]
        xj, yj = ring[j]
        if yi != yj:
            crosses = (yi > py) != (yj > py)
            xint = (xj - xi) * (py - yi) / (yj - yi) + xi
            inside ^= crosses & (px < xint)
        j = i
    return inside | points_on_ring(pts, ring)


def mixture_terms(eta, log_alpha, offsets, y, n):
    """Negative log of per-cluster binomial mixtures and their derivatives.

    For cluster c with points k in ``offsets[c]:offsets[c+1]`` the term is
    ``-log sum_k alpha_k exp(y eta_k - n log(1 + e^eta_k))``. Returns
    ``(value, u, d)`` with gradient ``-u`` and Hessian
    ``diag(d) + sum_c u_c u_c^T`` with respect to ``eta``.
    """
    counts = np.diff(offsets)
    yk = np.repeat(y, counts)
    nk = np.repeat(n, counts)
    ll = yk * eta - nk * np.logaddexp(0.0, eta)
    s = log_alpha + ll
    starts = offsets[:-1]
    cmax = np.maximum.reduceat(s, starts)
    e = np.exp(s - np.repeat(cmax, counts))
    tot = np.add.reduceat(e, starts)
    lse = cmax + np.log(tot)
    pi = e / np.repeat(tot, counts)
    sig = expit(eta)
    d1 = yk - nk * sig
    d2 = -nk * sig * (1.0 - sig)
    u = pi * d1
    d = -pi * (d1 * d1 + d2)
    return float(-lse.sum()), u, d


def locate_points(pts, nodes, tris, x0, y0, cell, nx, ny, cell_start, cell_tris, tol=1e-12):
    """Find the containing triangle and barycentric weights of each point.

    Returns ``(tri, bary)``; ``tri`` is -1 for points outside every triangle.
    """
    npts = len(pts)
    tri_out = np.full(npts, -1, dtype=np.int64)
    bary = np.zeros((npts, 3))
    px, py = pts[:, 0], pts[:, 1]
    ok = (px >= x0) & (py >= y0) & (px <= x0 + nx * cell) & (py <= y0 + ny * cell)
    # a point on the far grid edge belongs to the last cell
    ix = np.clip(np.floor((px - x0) / cell), 0, nx - 1).astype(np.int64)
    iy = np.clip(np.floor((py - y0) / cell), 0, ny - 1).astype(np.int64)
    cid = iy * nx + ix
    start = np.where(ok, cell_start[cid], 0)
    count = np.where(ok, cell_start[cid + 1] - cell_start[cid], 0)
    todo = np.nonzero(count > 0)[0]
    j = 0
    while todo.size:
        t = cell_tris[start[todo] + j]
        a = nodes[tris[t, 0]]
        b = nodes[tris[t, 1]]
        c = nodes[tris[t, 2]]
        p = pts[todo]
        v0 = b - a
        v1 = c - a
        v2 = p - a
        det = v0[:, 0] * v1[:, 1] - v1[:, 0] * v0[:, 1]
        lb = (v2[:, 0] * v1[:, 1] - v1[:, 0] * v2[:, 1]) / det
        lc = (v0[:, 0] * v2[:, 1] - v2[:, 0] * v0[:, 1]) / det
        la = 1.0 - lb - lc
        hit = (la >= -tol) & (lb >= -tol) & (lc >= -tol)
        if np.any(hit):
            idx = todo[hit]
            lam = np.column_stack([la[hit], lb[hit], lc[hit]])
            lam = np.clip(lam, 0.0, None)
            lam /= lam.sum(axis=1, keepdims=True)
            tri_out[idx] = t[hit]
            bary[idx] = lam
        j += 1
        keep = ~hit & (count[todo] > j)
        todo = todo[keep]
    return tri_out, bary
