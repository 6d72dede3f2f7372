# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled log-domain forward-backward recursion.

Mirrors ``_pure.forward_backward`` exactly (same signature, same padding
conventions, same -inf sentinel handling); the parity test suite drives
both backends on identical inputs.
"""

import numpy as np

from libc.math cimport exp, log, INFINITY


cdef inline double _lse2(const double* v, Py_ssize_t n) nogil:
    cdef double m = -INFINITY
    cdef double s = 0.0
    cdef Py_ssize_t i
    for i in range(n):
        if v[i] > m:
            m = v[i]
    if m == -INFINITY:
        return -INFINITY
    for i in range(n):
        s += exp(v[i] - m)
    return m + log(s)


cdef inline void _norm_exp(const double* v, double* out, Py_ssize_t n) nogil:
    cdef double m = -INFINITY
    cdef double tot = 0.0
    cdef Py_ssize_t i
    for i in range(n):
        if v[i] > m:
            m = v[i]
    if m == -INFINITY:
        for i in range(n):
            out[i] = 0.0
        return
    for i in range(n):
        out[i] = exp(v[i] - m)
        tot += out[i]
    for i in range(n):
        out[i] /= tot


def forward_backward(log_pi, log_A, log_E, lengths):
    """See ``_pure.forward_backward`` for the contract."""
    cdef double[:, ::1] pi = np.ascontiguousarray(log_pi, dtype=np.float64)
    cdef double[:, :, :, ::1] A = np.ascontiguousarray(log_A, dtype=np.float64)
    cdef double[:, :, ::1] E = np.ascontiguousarray(log_E, dtype=np.float64)
    cdef long long[::1] lens = np.ascontiguousarray(lengths, dtype=np.int64)

    cdef Py_ssize_t N = E.shape[0]
    cdef Py_ssize_t Tmax = E.shape[1]
    cdef Py_ssize_t S = E.shape[2]

    log_marginal_arr = np.empty(N, dtype=np.float64)
    filtered_arr = np.zeros((N, Tmax, S), dtype=np.float64)
    smoothed_arr = np.zeros((N, Tmax, S), dtype=np.float64)
    pairwise_arr = np.zeros((N, max(Tmax - 1, 0), S, S), dtype=np.float64)
    dead_arr = np.full(N, -1, dtype=np.int64)
    la_arr = np.empty((Tmax, S), dtype=np.float64)
    lb_arr = np.empty((Tmax, S), dtype=np.float64)
    work_arr = np.empty(S, dtype=np.float64)

    cdef double[::1] log_marginal = log_marginal_arr
    cdef double[:, :, ::1] filtered = filtered_arr
    cdef double[:, :, ::1] smoothed = smoothed_arr
    cdef double[:, :, :, ::1] pairwise = pairwise_arr
    cdef long long[::1] dead = dead_arr
    cdef double[:, ::1] la = la_arr
    cdef double[:, ::1] lb = lb_arr
    cdef double[::1] work = work_arr

    cdef Py_ssize_t n, t, r, s, T
    cdef double lm, tot, v

    with nogil:
        for n in range(N):
            T = <Py_ssize_t> lens[n]
            # forward
            for s in range(S):
                la[0, s] = pi[n, s] + E[n, 0, s]
            if _lse2(&la[0, 0], S) == -INFINITY and dead[n] < 0:
                dead[n] = 0
            for t in range(1, T):
                for s in range(S):
                    for r in range(S):
                        work[r] = la[t - 1, r] + A[n, t - 1, r, s]
                    la[t, s] = _lse2(&work[0], S) + E[n, t, s]
                if dead[n] < 0 and _lse2(&la[t, 0], S) == -INFINITY:
                    dead[n] = t
            lm = _lse2(&la[T - 1, 0], S)
            if dead[n] >= 0:
                lm = -INFINITY
            log_marginal[n] = lm
            for t in range(T):
                _norm_exp(&la[t, 0], &filtered[n, t, 0], S)
            # backward
            for s in range(S):
                lb[T - 1, s] = 0.0
            for t in range(T - 2, -1, -1):
                for r in range(S):
                    for s in range(S):
                        work[s] = A[n, t, r, s] + E[n, t + 1, s] + lb[t + 1, s]
                    lb[t, r] = _lse2(&work[0], S)
            for t in range(T):
                for s in range(S):
                    work[s] = la[t, s] + lb[t, s]
                _norm_exp(&work[0], &smoothed[n, t, 0], S)
            # pairwise posteriors, normalized by the evidence
            if lm != -INFINITY:
                for t in range(1, T):
                    for r in range(S):
                        for s in range(S):
                            v = la[t - 1, r] + A[n, t - 1, r, s] \
                                + E[n, t, s] + lb[t, s]
                            if v == -INFINITY:
                                pairwise[n, t - 1, r, s] = 0.0
                            else:
                                pairwise[n, t - 1, r, s] = exp(v - lm)

    return log_marginal_arr, filtered_arr, smoothed_arr, pairwise_arr, dead_arr
