# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled row kernels; same contracts as ``_reference``."""
import numpy as np

from libc.math cimport exp, log, sqrt, erf, fabs


cdef double INV_SQRT2 = 0.7071067811865476
cdef double INV_SQRT2PI = 0.3989422804014327


def softmax_forward(const double[:, ::1] x):
    cdef Py_ssize_t rows = x.shape[0], n = x.shape[1], i, j
    cdef double mx, s
    out_arr = np.empty((rows, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in range(rows):
        mx = x[i, 0]
        for j in range(1, n):
            if x[i, j] > mx:
                mx = x[i, j]
        s = 0.0
        for j in range(n):
            out[i, j] = exp(x[i, j] - mx)
            s += out[i, j]
        for j in range(n):
            out[i, j] = out[i, j] / s
    return out_arr


def softmax_backward(const double[:, ::1] y, const double[:, ::1] g):
    cdef Py_ssize_t rows = y.shape[0], n = y.shape[1], i, j
    cdef double dot
    out_arr = np.empty((rows, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in range(rows):
        dot = 0.0
        for j in range(n):
            dot += g[i, j] * y[i, j]
        for j in range(n):
            out[i, j] = y[i, j] * (g[i, j] - dot)
    return out_arr


def log_softmax_forward(const double[:, ::1] x):
    cdef Py_ssize_t rows = x.shape[0], n = x.shape[1], i, j
    cdef double mx, s, lse
    out_arr = np.empty((rows, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in range(rows):
        mx = x[i, 0]
        for j in range(1, n):
            if x[i, j] > mx:
                mx = x[i, j]
        s = 0.0
        for j in range(n):
            s += exp(x[i, j] - mx)
        lse = log(s)
        for j in range(n):
            out[i, j] = (x[i, j] - mx) - lse
    return out_arr


def log_softmax_backward(const double[:, ::1] y, const double[:, ::1] g):
    cdef Py_ssize_t rows = y.shape[0], n = y.shape[1], i, j
    cdef double s
    out_arr = np.empty((rows, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in range(rows):
        s = 0.0
        for j in range(n):
            s += g[i, j]
        for j in range(n):
            out[i, j] = g[i, j] - exp(y[i, j]) * s
    return out_arr


def layer_norm_forward(const double[:, ::1] x, const double[::1] gain,
                       const double[::1] bias, double eps):
    cdef Py_ssize_t rows = x.shape[0], n = x.shape[1], i, j
    cdef double mu, var, r, c
    out_arr = np.empty((rows, n), dtype=np.float64)
    xhat_arr = np.empty((rows, n), dtype=np.float64)
    rstd_arr = np.empty(rows, dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] xhat = xhat_arr
    cdef double[::1] rstd = rstd_arr
    for i in range(rows):
        mu = 0.0
        for j in range(n):
            mu += x[i, j]
        mu /= n
        var = 0.0
        for j in range(n):
            c = x[i, j] - mu
            var += c * c
        var /= n
        r = 1.0 / sqrt(var + eps)
        rstd[i] = r
        for j in range(n):
            c = (x[i, j] - mu) * r
            xhat[i, j] = c
            out[i, j] = c * gain[j] + bias[j]
    return out_arr, xhat_arr, rstd_arr


def layer_norm_backward(const double[:, ::1] g, const double[:, ::1] xhat,
                        const double[::1] rstd, const double[::1] gain):
    cdef Py_ssize_t rows = g.shape[0], n = g.shape[1], i, j
    cdef double mean_gx, mean_gxx, gx
    dx_arr = np.empty((rows, n), dtype=np.float64)
    dgain_arr = np.zeros(n, dtype=np.float64)
    dbias_arr = np.zeros(n, dtype=np.float64)
    cdef double[:, ::1] dx = dx_arr
    cdef double[::1] dgain = dgain_arr
    cdef double[::1] dbias = dbias_arr
    for i in range(rows):
        mean_gx = 0.0
        mean_gxx = 0.0
        for j in range(n):
            gx = g[i, j] * gain[j]
            mean_gx += gx
            mean_gxx += gx * xhat[i, j]
            dgain[j] += g[i, j] * xhat[i, j]
            dbias[j] += g[i, j]
        mean_gx /= n
        mean_gxx /= n
        for j in range(n):
            dx[i, j] = rstd[i] * (g[i, j] * gain[j] - mean_gx - xhat[i, j] * mean_gxx)
    return dx_arr, dgain_arr, dbias_arr


def gelu_forward(const double[::1] x):
    cdef Py_ssize_t n = x.shape[0], i
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(n):
        out[i] = 0.5 * x[i] * (1.0 + erf(x[i] * INV_SQRT2))
    return out_arr


def gelu_backward(const double[::1] x, const double[::1] g):
    cdef Py_ssize_t n = x.shape[0], i
    cdef double cdf, pdf
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(n):
        cdf = 0.5 * (1.0 + erf(x[i] * INV_SQRT2))
        pdf = INV_SQRT2PI * exp(-0.5 * x[i] * x[i])
        out[i] = g[i] * (cdf + x[i] * pdf)
    return out_arr


def adamax_update(double[::1] param, const double[::1] grad, double[::1] m,
                  double[::1] u, double lr, double beta1, double beta2,
                  double eps, long step):
    cdef Py_ssize_t n = param.shape[0], i
    cdef double lr_t = lr / (1.0 - beta1 ** step)
    cdef double a, denom
    for i in range(n):
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i]
        a = fabs(grad[i])
        u[i] = beta2 * u[i] if beta2 * u[i] > a else a
        denom = u[i] if u[i] > eps else eps
        param[i] -= lr_t * m[i] / denom
