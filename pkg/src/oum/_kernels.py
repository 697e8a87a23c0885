"""Compiled inner loops: weight kernels and golden-section edge minimizers.

Every weight kernel has the signature ``(params, x, y, ux, uy) -> float``.
The ``*_impl`` functions are plain Python so they can also be driven by
arbitrary Python weights (see :func:`oum.problem.WeightField.from_function`).
"""
import math

import numpy as np
from numba import njit

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
SCAN = 32


@njit(cache=True)
def isotropic_kernel(params, x, y, ux, uy):
    return params[0]


@njit(cache=True)
def rectangle_kernel(params, x, y, ux, uy):
    # reciprocal radius of the rectangle [-a, a] x [-b, b] along u
    return max(abs(ux) / params[0], abs(uy) / params[1])


@njit(cache=True)
def ellipse_kernel(params, x, y, ux, uy):
    return math.sqrt((ux / params[0]) ** 2 + (uy / params[1]) ** 2)


def _edge_cost_impl(wfn, params, xix, xiy, ax, ay, bx, by, va, vb, tol, max_iter):
    """Minimize F(z) = z*va + (1-z)*vb + |x(z)-xi| g(xi, dir) on [0, 1].

    x(z) = z*a + (1-z)*b. Returns (cost, z, status); status 0 is success,
    1 a nonpositive or non-finite weight, 2 a point of the edge hitting xi.
    """
    length = math.hypot(bx - ax, by - ay)
    ztol = tol / length if length > 0.0 else 1.0
    status = 0

    def F(z):
        px = z * ax + (1.0 - z) * bx - xix
        py = z * ay + (1.0 - z) * by - xiy
        tau = math.hypot(px, py)
        if tau == 0.0:
            return math.inf, 2
        g = wfn(params, xix, xiy, px / tau, py / tau)
        if not (g > 0.0) or not math.isfinite(g):
            return math.inf, 1
        return z * va + (1.0 - z) * vb + tau * g, 0

    lo = 0.0
    hi = 1.0
    c = hi - INV_PHI * (hi - lo)
    d = lo + INV_PHI * (hi - lo)
    fc, sc = F(c)
    fd, sd = F(d)
    if sc > status:
        status = sc
    if sd > status:
        status = sd
    it = 0
    while hi - lo > ztol and it < max_iter:
        if fc <= fd:
            hi = d
            d = c
            fd = fc
            c = hi - INV_PHI * (hi - lo)
            fc, sc = F(c)
            if sc > status:
                status = sc
        else:
            lo = c
            c = d
            fc = fd
            d = lo + INV_PHI * (hi - lo)
            fd, sd = F(d)
            if sd > status:
                status = sd
        it += 1
    zm = 0.5 * (lo + hi)
    best, sm = F(zm)
    bz = zm
    f1, s1 = F(1.0)
    f0, s0 = F(0.0)
    for s in (sm, s1, s0):
        if s > status:
            status = s
    if f1 < best:
        best = f1
        bz = 1.0
    if f0 < best:
        best = f0
        bz = 0.0
    return best, bz, status


def _ham_edge_impl(wfn, params, xix, xiy, ax, ay, bx, by, va, vb, mu, tol, max_iter):
    """Minimize (z*va + (1-z)*vb - mu)/tau(z) + g(xi, u(z)) on [0, 1].

    A coarse scan picks the bracket, then the same golden-section search and
    endpoint handling as the edge cost. Returns (value, z, status).
    """
    length = math.hypot(bx - ax, by - ay)
    ztol = tol / length if length > 0.0 else 1.0
    status = 0

    def Q(z):
        px = z * ax + (1.0 - z) * bx - xix
        py = z * ay + (1.0 - z) * by - xiy
        tau = math.hypot(px, py)
        if tau == 0.0:
            return math.inf, 2
        g = wfn(params, xix, xiy, px / tau, py / tau)
        if not (g > 0.0) or not math.isfinite(g):
            return math.inf, 1
        return (z * va + (1.0 - z) * vb - mu) / tau + g, 0

    # (F - mu) / tau need not be unimodal; bracket the best coarse sample first
    best_k = 0
    best_q = math.inf
    for k in range(SCAN + 1):
        qk, sk = Q(k / SCAN)
        if sk > status:
            status = sk
        if qk < best_q:
            best_q = qk
            best_k = k
    lo = max(0.0, (best_k - 1) / SCAN)
    hi = min(1.0, (best_k + 1) / SCAN)
    c = hi - INV_PHI * (hi - lo)
    d = lo + INV_PHI * (hi - lo)
    fc, sc = Q(c)
    fd, sd = Q(d)
    if sc > status:
        status = sc
    if sd > status:
        status = sd
    it = 0
    while hi - lo > ztol and it < max_iter:
        if fc <= fd:
            hi = d
            d = c
            fd = fc
            c = hi - INV_PHI * (hi - lo)
            fc, sc = Q(c)
            if sc > status:
                status = sc
        else:
            lo = c
            c = d
            fc = fd
            d = lo + INV_PHI * (hi - lo)
            fd, sd = Q(d)
            if sd > status:
                status = sd
        it += 1
    zm = 0.5 * (lo + hi)
    best, sm = Q(zm)
    bz = zm
    f1, s1 = Q(1.0)
    f0, s0 = Q(0.0)
    for s in (sm, s1, s0):
        if s > status:
            status = s
    if f1 < best:
        best = f1
        bz = 1.0
    if f0 < best:
        best = f0
        bz = 0.0
    return best, bz, status


edge_cost = njit(_edge_cost_impl)
ham_edge = njit(_ham_edge_impl)


@njit
def edge_cost_batch(wfn, params, xi, a, b, va, vb, tol, max_iter):
    m = xi.shape[0]
    cost = np.empty(m)
    zeta = np.empty(m)
    status = 0
    for k in range(m):
        c, z, s = edge_cost(wfn, params, xi[k, 0], xi[k, 1], a[k, 0], a[k, 1],
                            b[k, 0], b[k, 1], va[k], vb[k], tol, max_iter)
        cost[k] = c
        zeta[k] = z
        if s > status:
            status = s
    return cost, zeta, status


@njit
def ham_edge_batch(wfn, params, xi, a, b, va, vb, mu, tol, max_iter):
    m = xi.shape[0]
    val = np.empty(m)
    zeta = np.empty(m)
    status = 0
    for k in range(m):
        q, z, s = ham_edge(wfn, params, xi[k, 0], xi[k, 1], a[k, 0], a[k, 1],
                           b[k, 0], b[k, 1], va[k], vb[k], mu[k], tol, max_iter)
        val[k] = q
        zeta[k] = z
        if s > status:
            status = s
    return val, zeta, status


@njit
def weight_batch(wfn, params, xs, us):
    m = xs.shape[0]
    out = np.empty(m)
    for k in range(m):
        out[k] = wfn(params, xs[k, 0], xs[k, 1], us[k, 0], us[k, 1])
    return out


def edge_cost_batch_py(wfn, params, xi, a, b, va, vb, tol, max_iter):
    m = xi.shape[0]
    cost = np.empty(m)
    zeta = np.empty(m)
    status = 0
    for k in range(m):
        c, z, s = _edge_cost_impl(wfn, params, xi[k, 0], xi[k, 1], a[k, 0], a[k, 1],
                                  b[k, 0], b[k, 1], va[k], vb[k], tol, max_iter)
        cost[k] = c
        zeta[k] = z
        status = max(status, s)
    return cost, zeta, status


def ham_edge_batch_py(wfn, params, xi, a, b, va, vb, mu, tol, max_iter):
    m = xi.shape[0]
    val = np.empty(m)
    zeta = np.empty(m)
    status = 0
    for k in range(m):
        q, z, s = _ham_edge_impl(wfn, params, xi[k, 0], xi[k, 1], a[k, 0], a[k, 1],
                                 b[k, 0], b[k, 1], va[k], vb[k], mu[k], tol, max_iter)
        val[k] = q
        zeta[k] = z
        status = max(status, s)
    return val, zeta, status
