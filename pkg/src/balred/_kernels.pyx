# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled solver hot loops; same contracts as the numpy reference."""
import numpy as np
from libc.math cimport sqrt, fmax


def rusanov_divergence(double[:, :, ::1] uL, double[:, :, ::1] uR,
                       double[:, :, ::1] fL, double[:, :, ::1] fR,
                       double[:, ::1] sL, double[:, ::1] sR, double inv_h):
    cdef Py_ssize_t nr = uL.shape[0], M = uL.shape[1], nf = uL.shape[2]
    cdef Py_ssize_t r, i, j
    cdef double s, F0, F1
    out = np.empty((nr, M, nf - 1))
    cdef double[:, :, ::1] o = out
    for r in range(nr):
        for i in range(M):
            s = fmax(sL[i, 0], sR[i, 0])
            F0 = 0.5 * (fL[r, i, 0] + fR[r, i, 0]) - 0.5 * s * (uR[r, i, 0] - uL[r, i, 0])
            for j in range(1, nf):
                s = fmax(sL[i, j], sR[i, j])
                F1 = 0.5 * (fL[r, i, j] + fR[r, i, j]) - 0.5 * s * (uR[r, i, j] - uL[r, i, j])
                o[r, i, j - 1] = (F1 - F0) * inv_h
                F0 = F1
    return out


def spectral_radius(double[:, :, ::1] J, int iters=20):
    cdef Py_ssize_t n = J.shape[0], k, i, j, l, it
    cdef double M2[5][5]
    cdef double v[5]
    cdef double w[5]
    cdef double lam, acc
    cdef double start[5]
    start[0] = 1.0; start[1] = 0.75; start[2] = 0.5; start[3] = 0.3; start[4] = 0.2
    out = np.empty(n)
    cdef double[::1] o = out
    for k in range(n):
        for i in range(5):
            for j in range(5):
                acc = 0.0
                for l in range(5):
                    acc = acc + J[k, i, l] * J[k, l, j]
                M2[i][j] = acc
            v[i] = start[i]
        lam = 0.0
        for it in range(iters):
            lam = 0.0
            for i in range(5):
                acc = 0.0
                for j in range(5):
                    acc = acc + M2[i][j] * v[j]
                w[i] = acc
                lam = lam + acc * acc
            lam = sqrt(lam)
            if lam > 0:
                for i in range(5):
                    v[i] = w[i] / lam
        o[k] = sqrt(lam)
    return out
