# cython: boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled hot loops.

Twin of ``_pyloops``: same signatures, same operation grouping, so both
backends give bit-identical results from the same pre-drawn random arrays.
Compiled without -ffast-math on purpose.
"""

from libc.math cimport sqrt

import numpy as np

FAMILY_OU = 1
FAMILY_CONST = 2

BACKEND_NAME = "compiled"

cdef int _OU = 1


cdef inline Py_ssize_t _bisect_left(const double[::1] a, double x, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = n, mid
    while lo < hi:
        mid = (lo + hi) // 2
        if a[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo


cdef inline Py_ssize_t _nearest(const double[::1] pts, double x, Py_ssize_t n) noexcept nogil:
    # nearest grid point, ties to the lower index
    cdef Py_ssize_t j = _bisect_left(pts, x, n)
    if j == 0:
        return 0
    if j == n:
        return n - 1
    if (x - pts[j - 1]) <= (pts[j] - x):
        return j - 1
    return j


cdef inline double _drift(int code, double p0, double x, double u) noexcept nogil:
    if code == _OU:
        return -p0 * x + u
    return p0


cdef inline double _stagecost(int code, double p2, double p3, double x, double u) noexcept nogil:
    cdef double c
    if code == _OU:
        c = x * x + p2 * u * u
        if c > p3:
            c = p3
        return c
    return p2


def nearest_index_batch(points, x):
    """Indices of the nearest grid point, ties resolved to the lower index."""
    cdef const double[::1] pts = np.ascontiguousarray(points, dtype=np.float64)
    xa = np.ascontiguousarray(np.atleast_1d(x), dtype=np.float64)
    cdef const double[::1] xv = xa
    out = np.empty(xa.shape[0], dtype=np.int64)
    cdef long long[::1] ov = out
    cdef Py_ssize_t k, n = xa.shape[0], m = pts.shape[0]
    for k in range(n):
        ov[k] = _nearest(pts, xv[k], m)
    return out


def evolve_batch(int code, fp, x0, u, normals, double delta, double lo, double hi):
    """Run m Euler substeps for n independent chains under frozen actions."""
    cdef const double[::1] p = np.ascontiguousarray(fp, dtype=np.float64)
    x = np.array(x0, dtype=np.float64, copy=True)
    cdef double[::1] xv = x
    cdef const double[::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef const double[:, ::1] z = np.ascontiguousarray(normals, dtype=np.float64)
    cdef Py_ssize_t r, j, n = xv.shape[0], m = z.shape[1]
    cdef double p0 = p[0], sd = p[1] * sqrt(delta)
    cdef double xx, b, uu
    with nogil:
        for r in range(n):
            xx = xv[r]
            uu = uv[r]
            for j in range(m):
                b = _drift(code, p0, xx, uu)
                xx = (xx + b * delta) + sd * z[r, j]
                if xx < lo:
                    xx = lo
                elif xx > hi:
                    xx = hi
            xv[r] = xx
    return x


def rollout_cost_batch(int code, fp, x0, pol_actions, points, Py_ssize_t m,
                       normals, disc, double delta, double lo, double hi):
    """Discounted-cost rollouts for a batch under a grid policy."""
    cdef const double[::1] p = np.ascontiguousarray(fp, dtype=np.float64)
    cdef const double[::1] pol = np.ascontiguousarray(pol_actions, dtype=np.float64)
    cdef const double[::1] pts = np.ascontiguousarray(points, dtype=np.float64)
    cdef const double[:, ::1] z = np.ascontiguousarray(normals, dtype=np.float64)
    cdef const double[::1] dv = np.ascontiguousarray(disc, dtype=np.float64)
    x = np.array(x0, dtype=np.float64, copy=True)
    cdef double[::1] xv = x
    cdef Py_ssize_t n = xv.shape[0], total = z.shape[1]
    cdef Py_ssize_t steps = total // m
    cost = np.zeros(n, dtype=np.float64)
    cdef double[::1] cv = cost
    cdef Py_ssize_t r, k, j, t, i, npts = pts.shape[0]
    cdef double p0 = p[0], p2 = 0.0, p3 = 0.0
    if code == _OU:
        p2 = p[2]
        p3 = p[3]
    else:
        p2 = p[2]
    cdef double sd = p[1] * sqrt(delta)
    cdef double xx, uu, sc, b, acc
    with nogil:
        for r in range(n):
            xx = xv[r]
            acc = 0.0
            for k in range(steps):
                i = _nearest(pts, xx, npts)
                uu = pol[i]
                for j in range(m):
                    t = k * m + j
                    sc = _stagecost(code, p2, p3, xx, uu)
                    acc = acc + dv[t] * (sc * delta)
                    b = _drift(code, p0, xx, uu)
                    xx = (xx + b * delta) + sd * z[r, t]
                    if xx < lo:
                        xx = lo
                    elif xx > hi:
                        xx = hi
            cv[r] = acc
            xv[r] = xx
    return cost, x


def qlearn_diffusion_chunk(int code, fp, points, act_values, q, visits,
                           double x, a_idx, normals, double delta, double h,
                           double beta_h, double lo, double hi, int raw_cost,
                           double env_min, double env_max):
    """Sequential tabular updates along one exploration segment."""
    cdef const double[::1] p = np.ascontiguousarray(fp, dtype=np.float64)
    cdef const double[::1] pts = np.ascontiguousarray(points, dtype=np.float64)
    cdef const double[::1] avals = np.ascontiguousarray(act_values, dtype=np.float64)
    cdef double[:, ::1] qv = q
    cdef long long[:, ::1] vis = visits
    cdef const long long[::1] av = np.ascontiguousarray(a_idx, dtype=np.int64)
    cdef const double[:, ::1] z = np.ascontiguousarray(normals, dtype=np.float64)
    cdef Py_ssize_t steps = av.shape[0], m = z.shape[1]
    cdef Py_ssize_t npts = pts.shape[0], nact = qv.shape[1]
    cdef double p0 = p[0], p2 = 0.0, p3 = 0.0, c0 = 0.0
    if code == _OU:
        p2 = p[2]
        p3 = p[3]
    else:
        c0 = p[2]
    cdef double sd = p[1] * sqrt(delta)
    cdef Py_ssize_t k, j, i, inext, a, v
    cdef double uu, xc, sc, cost_r, b, mn, qq, alpha, newv
    with nogil:
        for k in range(steps):
            i = _nearest(pts, x, npts)
            a = av[k]
            uu = avals[a]
            xc = x if raw_cost else pts[i]
            if code == _OU:
                sc = xc * xc + p2 * uu * uu
                if sc > p3:
                    sc = p3
            else:
                sc = c0
            cost_r = sc * h
            for j in range(m):
                b = _drift(code, p0, x, uu)
                x = (x + b * delta) + sd * z[k, j]
                if x < lo:
                    x = lo
                elif x > hi:
                    x = hi
            inext = _nearest(pts, x, npts)
            mn = qv[inext, 0]
            for v in range(1, nact):
                qq = qv[inext, v]
                if qq < mn:
                    mn = qq
            alpha = 1.0 / (1.0 + <double> vis[i, a])
            newv = (1.0 - alpha) * qv[i, a] + alpha * (cost_r + beta_h * mn)
            qv[i, a] = newv
            vis[i, a] += 1
            if newv < env_min:
                env_min = newv
            if newv > env_max:
                env_max = newv
    return x, env_min, env_max


def qlearn_mdp_chunk(cum_kernel, cost, q, visits, Py_ssize_t state, a_idx,
                     unif, double beta_h, double env_min, double env_max):
    """Same update loop but transitions drawn from an explicit finite kernel."""
    cdef const double[:, :, ::1] cum = np.ascontiguousarray(cum_kernel, dtype=np.float64)
    cdef const double[:, ::1] cv = np.ascontiguousarray(cost, dtype=np.float64)
    cdef double[:, ::1] qv = q
    cdef long long[:, ::1] vis = visits
    cdef const long long[::1] av = np.ascontiguousarray(a_idx, dtype=np.int64)
    cdef const double[::1] uv = np.ascontiguousarray(unif, dtype=np.float64)
    cdef Py_ssize_t steps = av.shape[0], m = cum.shape[2], nact = qv.shape[1]
    cdef Py_ssize_t k, j, a, v, i = state
    cdef double cost_r, u, mn, qq, alpha, newv
    with nogil:
        for k in range(steps):
            a = av[k]
            cost_r = cv[i, a]
            u = uv[k]
            j = 0
            while j < m - 1 and u >= cum[i, a, j]:
                j += 1
            mn = qv[j, 0]
            for v in range(1, nact):
                qq = qv[j, v]
                if qq < mn:
                    mn = qq
            alpha = 1.0 / (1.0 + <double> vis[i, a])
            newv = (1.0 - alpha) * qv[i, a] + alpha * (cost_r + beta_h * mn)
            qv[i, a] = newv
            vis[i, a] += 1
            if newv < env_min:
                env_min = newv
            if newv > env_max:
                env_max = newv
            i = j
    return i, env_min, env_max
