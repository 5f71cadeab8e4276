# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled interaction-energy kernels (see ``_kernels_py`` for the contract)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, fmax, pow, exp, log

cdef extern from "_energy_row.h":
    double fkspde_energy_row(const double* b, const double* w, long n, double ak, double floor,
                             double e0, double* nclip) noexcept nogil

cnp.import_array()


cdef inline double _factor(const double* a, const double* b, const double* exps, Py_ssize_t d,
                           double floor, cnp.int64_t* clipped) noexcept nogil:
    # prod_m max(|a_m - b_m|, floor)^e_m
    cdef double x, acc = 0.0
    cdef Py_ssize_t m
    cdef int flag = 0
    if d == 1:
        x = fabs(a[0] - b[0])
        if x < floor:
            x = floor
            clipped[0] += 1
        return pow(x, exps[0])
    for m in range(d):
        x = fabs(a[m] - b[m])
        if x < floor:
            x = floor
            flag = 1
        acc += exps[m] * log(x)
    clipped[0] += flag
    return exp(acc)


cdef double _block(const double* A, const double* B, Py_ssize_t na, Py_ssize_t nb, Py_ssize_t d,
                   const double* w, Py_ssize_t ldw, const double* exps, double floor,
                   bint lower, cnp.int64_t* clipped) noexcept nogil:
    # sum_k sum_l w[k, l] f(A_k, B_l); with lower=True only l < k
    cdef double acc = 0.0, row, nclip, e0 = exps[0]
    cdef Py_ssize_t k, l, lend
    for k in range(na):
        row = 0.0
        lend = k if lower else nb
        if d == 1:
            nclip = 0.0
            row = fkspde_energy_row(B, w + k * ldw, lend, A[k], floor, e0, &nclip)
            clipped[0] += <cnp.int64_t>nclip
        else:
            for l in range(lend):
                row += w[k * ldw + l] * _factor(A + k * d, B + l * d, exps, d, floor, clipped)
        acc += row
    return acc


def pair_energy_batch(const double[:, :, ::1] mid_a, const double[:, :, ::1] mid_b,
                      const cnp.int64_t[::1] n_a, const cnp.int64_t[::1] n_b,
                      const double[:, ::1] w, const double[::1] exps, double floor):
    cdef Py_ssize_t P = mid_a.shape[0], d = mid_a.shape[2]
    cdef Py_ssize_t sa = mid_a.shape[1] * d, sb = mid_b.shape[1] * d, ldw = w.shape[1]
    energy = np.zeros(P)
    clipped = np.zeros(P, dtype=np.int64)
    cdef double[::1] e_view = energy
    cdef cnp.int64_t[::1] c_view = clipped
    cdef Py_ssize_t p
    if P == 0 or w.shape[0] == 0:
        return energy, clipped
    cdef const double* pa = &mid_a[0, 0, 0]
    cdef const double* pb = &mid_b[0, 0, 0]
    cdef const double* pw = &w[0, 0]
    cdef const double* pe = &exps[0]
    with nogil:
        for p in range(P):
            e_view[p] = _block(pa + p * sa, pb + p * sb, n_a[p], n_b[p], d, pw, ldw, pe, floor, False,
                               &c_view[p])
    return energy, clipped


def self_energy_batch(const double[:, :, ::1] mid, const cnp.int64_t[::1] n_alive,
                      const double[:, ::1] w, const double[::1] exps, double floor):
    cdef Py_ssize_t P = mid.shape[0], d = mid.shape[2]
    cdef Py_ssize_t s = mid.shape[1] * d, ldw = w.shape[1]
    energy = np.zeros(P)
    clipped = np.zeros(P, dtype=np.int64)
    cdef double[::1] e_view = energy
    cdef cnp.int64_t[::1] c_view = clipped
    cdef Py_ssize_t p, k, n, m
    cdef double diag, trace, esum = 0.0
    cdef cnp.int64_t off
    if P == 0 or w.shape[0] == 0:
        return energy, clipped
    cdef const double* pm = &mid[0, 0, 0]
    cdef const double* pw = &w[0, 0]
    cdef const double* pe = &exps[0]
    for m in range(d):
        esum += exps[m]
    diag = pow(floor, esum)
    with nogil:
        for p in range(P):
            n = n_alive[p]
            trace = 0.0
            for k in range(n):
                trace += pw[k * ldw + k]
            off = 0
            # weights are symmetric, so the strict lower triangle counts twice
            e_view[p] = trace * diag + 2.0 * _block(pm + p * s, pm + p * s, n, n, d, pw, ldw, pe, floor, True, &off)
            c_view[p] = n + 2 * off
    return energy, clipped
