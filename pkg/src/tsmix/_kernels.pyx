# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled row kernels; same contracts as ``_kernels_py``."""

import numpy as np
from libc.math cimport exp, log, sqrt


def softmax_rows(const double[:, ::1] x):
    cdef Py_ssize_t rows = x.shape[0], n = x.shape[1], i, j
    out = np.empty((rows, n), dtype=np.float64)
    cdef double[:, ::1] y = out
    cdef double m, s, inv
    with nogil:
        for i in range(rows):
            m = x[i, 0]
            for j in range(1, n):
                if x[i, j] > m:
                    m = x[i, j]
            s = 0.0
            for j in range(n):
                y[i, j] = exp(x[i, j] - m)
                s += y[i, j]
            inv = 1.0 / s
            for j in range(n):
                y[i, j] *= inv
    return out


def softmax_rows_backward(const double[:, ::1] y, const double[:, ::1] gy):
    cdef Py_ssize_t rows = y.shape[0], n = y.shape[1], i, j
    out = np.empty((rows, n), dtype=np.float64)
    cdef double[:, ::1] gx = out
    cdef double dot
    with nogil:
        for i in range(rows):
            dot = 0.0
            for j in range(n):
                dot += y[i, j] * gy[i, j]
            for j in range(n):
                gx[i, j] = y[i, j] * (gy[i, j] - dot)
    return out


def log_softmax_rows(const double[:, ::1] x):
    cdef Py_ssize_t rows = x.shape[0], n = x.shape[1], i, j
    out = np.empty((rows, n), dtype=np.float64)
    cdef double[:, ::1] y = out
    cdef double m, s, lse
    with nogil:
        for i in range(rows):
            m = x[i, 0]
            for j in range(1, n):
                if x[i, j] > m:
                    m = x[i, j]
            s = 0.0
            for j in range(n):
                s += exp(x[i, j] - m)
            lse = log(s)
            for j in range(n):
                y[i, j] = x[i, j] - m - lse
    return out


def layer_norm_rows(const double[:, ::1] x, const double[::1] gain,
                    const double[::1] bias, double eps):
    cdef Py_ssize_t rows = x.shape[0], n = x.shape[1], i, j
    out_a = np.empty((rows, n), dtype=np.float64)
    xhat_a = np.empty((rows, n), dtype=np.float64)
    rstd_a = np.empty(rows, dtype=np.float64)
    cdef double[:, ::1] out = out_a
    cdef double[:, ::1] xhat = xhat_a
    cdef double[::1] rstd = rstd_a
    cdef double mu, var, d, r
    with nogil:
        for i in range(rows):
            mu = 0.0
            for j in range(n):
                mu += x[i, j]
            mu /= n
            var = 0.0
            for j in range(n):
                d = x[i, j] - mu
                xhat[i, j] = d
                var += d * d
            r = 1.0 / sqrt(var / n + eps)
            rstd[i] = r
            for j in range(n):
                xhat[i, j] *= r
                out[i, j] = xhat[i, j] * gain[j] + bias[j]
    return out_a, xhat_a, rstd_a


def layer_norm_rows_backward(const double[:, ::1] gout, const double[:, ::1] xhat,
                             const double[::1] rstd, const double[::1] gain):
    cdef Py_ssize_t rows = gout.shape[0], n = gout.shape[1], i, j
    gx_a = np.empty((rows, n), dtype=np.float64)
    ggain_a = np.zeros(n, dtype=np.float64)
    gbias_a = np.zeros(n, dtype=np.float64)
    cdef double[:, ::1] gx = gx_a
    cdef double[::1] ggain = ggain_a
    cdef double[::1] gbias = gbias_a
    cdef double a, b, g
    with nogil:
        for i in range(rows):
            a = 0.0
            b = 0.0
            for j in range(n):
                g = gout[i, j]
                gbias[j] += g
                ggain[j] += g * xhat[i, j]
                g = g * gain[j]
                a += g
                b += g * xhat[i, j]
            a /= n
            b /= n
            for j in range(n):
                gx[i, j] = (gout[i, j] * gain[j] - a - xhat[i, j] * b) * rstd[i]
    return gx_a, ggain_a, gbias_a
