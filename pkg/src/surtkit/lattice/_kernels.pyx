# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled dynamic-programming kernels for the lattice losses.

Mirrors the interface of ``_py_backend``: transducer_dp and ctc_dp.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, INFINITY


cdef inline double _lse2(double a, double b) nogil:
    if a == -INFINITY:
        return b
    if b == -INFINITY:
        return a
    if a > b:
        return a + log(1.0 + exp(b - a))
    return b + log(1.0 + exp(a - b))


def transducer_dp(double[:, ::1] lp_blank, double[:, ::1] lp_label):
    cdef Py_ssize_t T = lp_blank.shape[0]
    cdef Py_ssize_t U1 = lp_blank.shape[1]
    cdef Py_ssize_t U = U1 - 1
    cdef Py_ssize_t t, u
    cdef double a, b, total, v

    alpha_np = np.full((T, U1), -np.inf)
    beta_np = np.full((T, U1), -np.inf)
    occ_blank_np = np.zeros((T, U1))
    occ_label_np = np.zeros((T, U if U > 0 else 0))
    cdef double[:, ::1] alpha = alpha_np
    cdef double[:, ::1] beta = beta_np
    cdef double[:, ::1] occ_blank = occ_blank_np
    cdef double[:, ::1] occ_label = occ_label_np

    with nogil:
        alpha[0, 0] = 0.0
        for t in range(T):
            for u in range(U1):
                if t == 0 and u == 0:
                    continue
                a = alpha[t - 1, u] + lp_blank[t - 1, u] if t > 0 else -INFINITY
                b = alpha[t, u - 1] + lp_label[t, u - 1] if u > 0 else -INFINITY
                alpha[t, u] = _lse2(a, b)
        total = alpha[T - 1, U] + lp_blank[T - 1, U]

        beta[T - 1, U] = lp_blank[T - 1, U]
        for t in range(T - 1, -1, -1):
            for u in range(U, -1, -1):
                if t == T - 1 and u == U:
                    continue
                a = lp_blank[t, u] + beta[t + 1, u] if t + 1 < T else -INFINITY
                b = lp_label[t, u] + beta[t, u + 1] if u < U else -INFINITY
                beta[t, u] = _lse2(a, b)

        for t in range(T):
            for u in range(U1):
                if alpha[t, u] == -INFINITY:
                    continue
                if t + 1 < T:
                    v = alpha[t, u] + lp_blank[t, u] + beta[t + 1, u] - total
                    if v > -700:
                        occ_blank[t, u] = exp(v)
                elif u == U:
                    v = alpha[t, u] + lp_blank[t, u] - total
                    if v > -700:
                        occ_blank[t, u] = exp(v)
                if u < U:
                    v = alpha[t, u] + lp_label[t, u] + beta[t, u + 1] - total
                    if v > -700:
                        occ_label[t, u] = exp(v)

    return float(total), occ_blank_np, occ_label_np


def ctc_dp(double[:, ::1] lp, long[::1] ext):
    cdef Py_ssize_t T = lp.shape[0]
    cdef Py_ssize_t S = ext.shape[0]
    cdef Py_ssize_t t, s
    cdef double best, total, v

    alpha_np = np.full((T, S), -np.inf)
    beta_np = np.full((T, S), -np.inf)
    post_np = np.zeros((T, S))
    cdef double[:, ::1] alpha = alpha_np
    cdef double[:, ::1] beta = beta_np
    cdef double[:, ::1] post = post_np

    with nogil:
        alpha[0, 0] = lp[0, ext[0]]
        if S > 1:
            alpha[0, 1] = lp[0, ext[1]]
        for t in range(1, T):
            for s in range(S):
                best = alpha[t - 1, s]
                if s >= 1:
                    best = _lse2(best, alpha[t - 1, s - 1])
                if s >= 2 and ext[s] != 0 and ext[s] != ext[s - 2]:
                    best = _lse2(best, alpha[t - 1, s - 2])
                if best != -INFINITY:
                    alpha[t, s] = best + lp[t, ext[s]]

        total = alpha[T - 1, S - 1]
        if S > 1:
            total = _lse2(total, alpha[T - 1, S - 2])

        beta[T - 1, S - 1] = lp[T - 1, ext[S - 1]]
        if S > 1:
            beta[T - 1, S - 2] = lp[T - 1, ext[S - 2]]
        for t in range(T - 2, -1, -1):
            for s in range(S - 1, -1, -1):
                best = beta[t + 1, s]
                if s + 1 < S:
                    best = _lse2(best, beta[t + 1, s + 1])
                if s + 2 < S and ext[s + 2] != 0 and ext[s + 2] != ext[s]:
                    best = _lse2(best, beta[t + 1, s + 2])
                if best != -INFINITY:
                    beta[t, s] = best + lp[t, ext[s]]

        for t in range(T):
            for s in range(S):
                if alpha[t, s] == -INFINITY or beta[t, s] == -INFINITY:
                    continue
                v = alpha[t, s] + beta[t, s] - lp[t, ext[s]] - total
                if v > -700:
                    post[t, s] = exp(v)

    return float(total), post_np
