# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops; see _fallback.py for the reference semantics."""

import numpy as np

from libc.math cimport exp, log, fabs, INFINITY

cdef double LOG_2PI = 1.8378770664093453


def gmm_accumulate(const double[:, ::1] X, const double[::1] weights,
                   const double[:, ::1] means, const double[:, ::1] variances):
    cdef Py_ssize_t n = X.shape[0], dim = X.shape[1], K = weights.shape[0]
    cdef Py_ssize_t i, k, d
    S0_arr = np.zeros(K)
    S1_arr = np.zeros((K, dim))
    S2_arr = np.zeros((K, dim))
    ivar_arr = np.empty((K, dim))
    lognorm_arr = np.empty(K)
    lj_arr = np.empty(K)
    cdef double[::1] S0 = S0_arr
    cdef double[:, ::1] S1 = S1_arr
    cdef double[:, ::1] S2 = S2_arr
    cdef double[:, ::1] ivar = ivar_arr
    cdef double[::1] lognorm = lognorm_arr
    cdef double[::1] lj = lj_arr
    cdef double acc, diff, mx, s, g, inv, total = 0.0

    for k in range(K):
        acc = dim * LOG_2PI
        for d in range(dim):
            ivar[k, d] = 1.0 / variances[k, d]
            acc += log(variances[k, d])
        lognorm[k] = log(weights[k]) - 0.5 * acc

    with nogil:
        for i in range(n):
            mx = -INFINITY
            for k in range(K):
                acc = 0.0
                for d in range(dim):
                    diff = X[i, d] - means[k, d]
                    acc += diff * diff * ivar[k, d]
                lj[k] = lognorm[k] - 0.5 * acc
                if lj[k] > mx:
                    mx = lj[k]
            s = 0.0
            for k in range(K):
                lj[k] = exp(lj[k] - mx)
                s += lj[k]
            total += mx + log(s)
            inv = 1.0 / s
            for k in range(K):
                g = lj[k] * inv
                if g == 0.0:
                    continue
                S0[k] += g
                for d in range(dim):
                    diff = X[i, d] - means[k, d]
                    S1[k, d] += g * diff
                    S2[k, d] += g * diff * diff
    return total, S0_arr, S1_arr, S2_arr


def dual_cd_epoch(const double[:, ::1] X, const double[::1] y, double[::1] alpha,
                  double[::1] w, const double[::1] qdiag, double C,
                  const long long[::1] order):
    cdef Py_ssize_t n = order.shape[0], dim = X.shape[1]
    cdef Py_ssize_t t, i, j
    cdef double G, PG, a, a_new, delta
    cdef double pg_max = -INFINITY, pg_min = INFINITY
    with nogil:
        for t in range(n):
            i = order[t]
            G = 0.0
            for j in range(dim):
                G += w[j] * X[i, j]
            G = y[i] * G - 1.0
            a = alpha[i]
            if a == 0.0:
                PG = G if G < 0.0 else 0.0
            elif a == C:
                PG = G if G > 0.0 else 0.0
            else:
                PG = G
            if PG > pg_max:
                pg_max = PG
            if PG < pg_min:
                pg_min = PG
            if fabs(PG) > 1e-12:
                a_new = a - G / qdiag[i]
                if a_new < 0.0:
                    a_new = 0.0
                elif a_new > C:
                    a_new = C
                alpha[i] = a_new
                delta = (a_new - a) * y[i]
                for j in range(dim):
                    w[j] += delta * X[i, j]
    return pg_max, pg_min


def dual_cd_epoch_shrink(const double[:, ::1] X, const double[::1] y, double[::1] alpha,
                         double[::1] w, const double[::1] qdiag, double C,
                         const long long[::1] order, unsigned char[::1] active,
                         double pg_max_old, double pg_min_old):
    cdef Py_ssize_t n = order.shape[0], dim = X.shape[1]
    cdef Py_ssize_t t, i, j
    cdef double G, PG, a, a_new, delta
    cdef double pg_max = -INFINITY, pg_min = INFINITY
    with nogil:
        for t in range(n):
            i = order[t]
            G = 0.0
            for j in range(dim):
                G += w[j] * X[i, j]
            G = y[i] * G - 1.0
            a = alpha[i]
            PG = 0.0
            if a == 0.0:
                if G > pg_max_old:
                    active[i] = 0
                    continue
                if G < 0.0:
                    PG = G
            elif a == C:
                if G < pg_min_old:
                    active[i] = 0
                    continue
                if G > 0.0:
                    PG = G
            else:
                PG = G
            if PG > pg_max:
                pg_max = PG
            if PG < pg_min:
                pg_min = PG
            if fabs(PG) > 1e-12:
                a_new = a - G / qdiag[i]
                if a_new < 0.0:
                    a_new = 0.0
                elif a_new > C:
                    a_new = C
                alpha[i] = a_new
                delta = (a_new - a) * y[i]
                for j in range(dim):
                    w[j] += delta * X[i, j]
    return pg_max, pg_min
