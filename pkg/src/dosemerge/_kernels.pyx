# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: per-subject residual sums and peak effect search.

Mirrors ``_kernels_py`` operation for operation, including the limit forms
used when rate constants coincide.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, expm1, log, INFINITY, isfinite

cnp.import_array()

cdef double RATE_TOL = 1e-8
cdef double TRIPLE_RATE_TOL = 1e-5
cdef double INV_PHI = 0.6180339887498949


cdef inline double exp_diff(double a, double b, double t) noexcept nogil:
    cdef double s, big, gap
    if a > b:
        s = b
        big = a
    else:
        s = a
        big = b
    gap = big - s
    if gap < RATE_TOL * big:
        return t * exp(-0.5 * (s + big) * t)
    return exp(-s * t) * (-expm1(-gap * t)) / gap


cdef inline double exp_dd3(double a, double b, double c, double t) noexcept nogil:
    cdef double tmp, spread, centre, da, db, dc, h2, h3, t2
    if a > b:
        tmp = a; a = b; b = tmp
    if b > c:
        tmp = b; b = c; c = tmp
    if a > b:
        tmp = a; a = b; b = tmp
    spread = c - a
    if spread < TRIPLE_RATE_TOL * c:
        centre = (a + b + c) / 3.0
        da = a - centre
        db = b - centre
        dc = c - centre
        h2 = da * da + db * db + dc * dc + da * db + da * dc + db * dc
        h3 = (da * da * da + db * db * db + dc * dc * dc + da * da * (db + dc)
              + db * db * (da + dc) + dc * dc * (da + db) + da * db * dc)
        t2 = t * t
        return exp(-centre * t) * (0.5 * t2 + t2 * t2 * h2 / 24.0 - t2 * t2 * t * h3 / 120.0)
    return (exp_diff(a, b, t) - exp_diff(b, c, t)) / spread


cdef inline double effect_unit(double ka, double k, double ke, double v, double t) noexcept nogil:
    return ka * ke / v * exp_dd3(ka, k, ke, t)


def conc_sq_resid(double ka, const double[::1] cl, const double[::1] v,
                  const cnp.int64_t[::1] subj, const double[::1] dose,
                  const double[::1] t, const double[::1] y_log, Py_ssize_t n_subj):
    cdef Py_ssize_t n = subj.shape[0], i, s
    cdef double pred, r, c
    out = np.zeros(n_subj)
    cdef double[::1] acc = out
    with nogil:
        for i in range(n):
            s = subj[i]
            c = dose[i] * ka / v[s] * exp_diff(cl[s] / v[s], ka, t[i])
            if c > 0.0:
                r = y_log[i] - log(c)
                acc[s] += r * r
            else:
                acc[s] = INFINITY
    return out


def inhib_sq_resid(double ka, const double[::1] cl, const double[::1] v,
                   const double[::1] ic50, const double[::1] ke, double i_max,
                   const cnp.int64_t[::1] subj, const double[::1] dose,
                   const double[::1] t, const double[::1] y_logit, Py_ssize_t n_subj):
    cdef Py_ssize_t n = subj.shape[0], i, s
    cdef double ce, r
    out = np.zeros(n_subj)
    cdef double[::1] acc = out
    with nogil:
        for i in range(n):
            s = subj[i]
            ce = dose[i] * effect_unit(ka, cl[s] / v[s], ke[s], v[s], t[i])
            if ce > 0.0:
                r = y_logit[i] - (log(ce * (1.0 - i_max) + ic50[s]) - log(i_max * ce))
                if isfinite(r):
                    acc[s] += r * r
                else:
                    acc[s] = INFINITY
            else:
                acc[s] = INFINITY
    return out


def peak_unit_effect(ka, cl, v, ke, double horizon, int n_scan=32, int iterations=40):
    ka_a, cl_a, v_a, ke_a = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (ka, cl, v, ke)))
    shape = cl_a.shape
    cdef const double[::1] kav = np.ascontiguousarray(ka_a).ravel()
    cdef const double[::1] clv = np.ascontiguousarray(cl_a).ravel()
    cdef const double[::1] vv = np.ascontiguousarray(v_a).ravel()
    cdef const double[::1] kev = np.ascontiguousarray(ke_a).ravel()
    cdef Py_ssize_t n = clv.shape[0], i, j, jbest
    out = np.empty(n)
    cdef double[::1] res = out
    cdef double k, dt, best, val, a, b, c, d, fc, fd, x, fx, tmid
    dt = horizon / n_scan
    with nogil:
        for i in range(n):
            k = clv[i] / vv[i]
            best = -1.0
            jbest = 0
            for j in range(n_scan + 1):
                val = effect_unit(kav[i], k, kev[i], vv[i], j * dt)
                if val > best:
                    best = val
                    jbest = j
            a = (jbest - 1) * dt if jbest > 0 else 0.0
            b = (jbest + 1) * dt if jbest < n_scan else n_scan * dt
            c = b - INV_PHI * (b - a)
            d = a + INV_PHI * (b - a)
            fc = effect_unit(kav[i], k, kev[i], vv[i], c)
            fd = effect_unit(kav[i], k, kev[i], vv[i], d)
            for j in range(iterations):
                if fc > fd:
                    b = d
                    x = b - INV_PHI * (b - a)
                    fx = effect_unit(kav[i], k, kev[i], vv[i], x)
                    d = c
                    fd = fc
                    c = x
                    fc = fx
                else:
                    a = c
                    x = a + INV_PHI * (b - a)
                    fx = effect_unit(kav[i], k, kev[i], vv[i], x)
                    c = d
                    fc = fd
                    d = x
                    fd = fx
            tmid = 0.5 * (a + b)
            val = effect_unit(kav[i], k, kev[i], vv[i], tmid)
            res[i] = val if val > best else best
    return out.reshape(shape)
