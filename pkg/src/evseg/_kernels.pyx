# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel backend: per-pixel loops over the evidential fold and the
pixel fusion. Math identical to ``_kernels_py``; parameter gradients are
accumulated pixel-by-pixel in a fixed order."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()

cdef double S_CEIL = 1.0 - 1e-12
cdef double SURVIVING_FLOOR = 1e-12
cdef int MAX_CLASSES = 16


def enn_forward(double[:, ::1] feats, double[:, ::1] protos, double[:, ::1] u,
                double[::1] alpha, double[::1] gamma):
    cdef Py_ssize_t n = feats.shape[0], f = feats.shape[1]
    cdef Py_ssize_t icount = protos.shape[0], k = u.shape[1]
    if k > MAX_CLASSES:
        raise ValueError("compiled kernel supports at most 16 classes")

    masses_arr = np.empty((n, k + 1))
    s_arr = np.empty((n, icount))
    cdef double[:, ::1] masses = masses_arr
    cdef double[:, ::1] s = s_arr

    cdef double pk[16]
    cdef Py_ssize_t p, i, j, c
    cdef double d2, diff, si, vprod, total, inv

    for p in range(n):
        vprod = 1.0
        for c in range(k):
            pk[c] = 1.0
        for i in range(icount):
            d2 = 0.0
            for j in range(f):
                diff = feats[p, j] - protos[i, j]
                d2 += diff * diff
            si = alpha[i] * exp(-gamma[i] * d2)
            if si > S_CEIL:
                si = S_CEIL
            s[p, i] = si
            vprod *= 1.0 - si
            for c in range(k):
                pk[c] *= 1.0 - si * (1.0 - u[i, c])
        total = vprod
        for c in range(k):
            masses[p, c] = pk[c] - vprod
            total += masses[p, c]
        masses[p, k] = vprod
        inv = 1.0 / total
        for c in range(k + 1):
            masses[p, c] *= inv
    return masses_arr, s_arr


def enn_backward(double[:, ::1] feats, double[:, ::1] protos, double[:, ::1] u,
                 double[::1] alpha, double[::1] gamma, double[:, ::1] upstream):
    cdef Py_ssize_t n = feats.shape[0], f = feats.shape[1]
    cdef Py_ssize_t icount = protos.shape[0], k = u.shape[1]
    if k > MAX_CLASSES:
        raise ValueError("compiled kernel supports at most 16 classes")

    dfeats_arr = np.zeros((n, f))
    dprotos_arr = np.zeros((icount, f))
    du_arr = np.zeros((icount, k))
    dalpha_arr = np.zeros(icount)
    dgamma_arr = np.zeros(icount)
    d2_arr = np.empty(icount)
    e_arr = np.empty(icount)
    s_arr = np.empty(icount)

    cdef double[:, ::1] dfeats = dfeats_arr
    cdef double[:, ::1] dprotos = dprotos_arr
    cdef double[:, ::1] du = du_arr
    cdef double[::1] dalpha = dalpha_arr
    cdef double[::1] dgamma = dgamma_arr
    cdef double[::1] d2b = d2_arr
    cdef double[::1] eb = e_arr
    cdef double[::1] sb = s_arr

    cdef double pk[16]
    cdef double mu[17]
    cdef double ghat[17]
    cdef Py_ssize_t p, i, j, c
    cdef double d2, diff, si, vprod, total, gdot, dv_sum, ds, dwic, wik, dd2, scale

    for p in range(n):
        vprod = 1.0
        for c in range(k):
            pk[c] = 1.0
        for i in range(icount):
            d2 = 0.0
            for j in range(f):
                diff = feats[p, j] - protos[i, j]
                d2 += diff * diff
            d2b[i] = d2
            eb[i] = exp(-gamma[i] * d2)
            si = alpha[i] * eb[i]
            if si > S_CEIL:
                si = S_CEIL
            sb[i] = si
            vprod *= 1.0 - si
            for c in range(k):
                pk[c] *= 1.0 - si * (1.0 - u[i, c])

        total = vprod
        for c in range(k):
            mu[c] = pk[c] - vprod
            total += mu[c]
        mu[k] = vprod

        gdot = 0.0
        for c in range(k + 1):
            gdot += upstream[p, c] * mu[c] / total
        for c in range(k + 1):
            ghat[c] = (upstream[p, c] - gdot) / total

        # dV collects the direct omega path minus every singleton's -V term
        dv_sum = ghat[k]
        for c in range(k):
            dv_sum -= ghat[c]

        for i in range(icount):
            si = sb[i]
            ds = -dv_sum * (vprod / (1.0 - si))
            for c in range(k):
                wik = 1.0 - si * (1.0 - u[i, c])
                dwic = ghat[c] * (pk[c] / wik)
                ds += dwic * (u[i, c] - 1.0)
                du[i, c] += dwic * si
            dalpha[i] += ds * eb[i]
            dgamma[i] -= ds * d2b[i] * si
            dd2 = -ds * gamma[i] * si
            scale = 2.0 * dd2
            for j in range(f):
                diff = feats[p, j] - protos[i, j]
                dfeats[p, j] += scale * diff
                dprotos[i, j] -= scale * diff
    return dfeats_arr, dprotos_arr, du_arr, dalpha_arr, dgamma_arr


def fuse_forward(double[:, ::1] p, double[:, ::1] m):
    cdef Py_ssize_t n = p.shape[0], k = p.shape[1]
    fused_arr = np.empty((n, k))
    kappa_arr = np.empty(n)
    cdef double[:, ::1] fused = fused_arr
    cdef double[::1] kappa = kappa_arr

    cdef Py_ssize_t row, c
    cdef double surviving, omega, value, inv, single_total
    cdef int n_conflict = 0

    for row in range(n):
        omega = m[row, k]
        single_total = 0.0
        for c in range(k):
            single_total += m[row, c]
        # conflict accumulated directly as mass on disjoint pairs
        value = 0.0
        for c in range(k):
            value += p[row, c] * (single_total - m[row, c])
        kappa[row] = value if value > 0.0 else 0.0

        surviving = 0.0
        for c in range(k):
            fused[row, c] = p[row, c] * (m[row, c] + omega)
            surviving += fused[row, c]
        if surviving <= SURVIVING_FLOOR:
            n_conflict += 1
            for c in range(k):
                fused[row, c] = p[row, c]
            kappa[row] = 1.0 - 1e-12
        else:
            inv = 1.0 / surviving
            for c in range(k):
                fused[row, c] *= inv
    return fused_arr, kappa_arr, n_conflict


def fuse_backward(double[:, ::1] p, double[:, ::1] m, double[:, ::1] upstream):
    cdef Py_ssize_t n = p.shape[0], k = p.shape[1]
    dp_arr = np.empty((n, k))
    dm_arr = np.empty((n, k + 1))
    cdef double[:, ::1] dp = dp_arr
    cdef double[:, ::1] dm = dm_arr

    cdef double unnorm[16]
    cdef Py_ssize_t row, c
    cdef double surviving, omega, gdot, ghat, dm_omega

    if k > MAX_CLASSES:
        raise ValueError("compiled kernel supports at most 16 classes")

    for row in range(n):
        omega = m[row, k]
        surviving = 0.0
        for c in range(k):
            unnorm[c] = p[row, c] * (m[row, c] + omega)
            surviving += unnorm[c]
        if surviving <= SURVIVING_FLOOR:
            for c in range(k):
                dp[row, c] = upstream[row, c]
                dm[row, c] = 0.0
            dm[row, k] = 0.0
            continue
        gdot = 0.0
        for c in range(k):
            gdot += upstream[row, c] * unnorm[c] / surviving
        dm_omega = 0.0
        for c in range(k):
            ghat = (upstream[row, c] - gdot) / surviving
            dp[row, c] = ghat * (m[row, c] + omega)
            dm[row, c] = ghat * p[row, c]
            dm_omega += ghat * p[row, c]
        dm[row, k] = dm_omega
    return dp_arr, dm_arr
