# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: Cholesky, triangular solves, distances, fused Adam."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

from .errors import NotPositiveDefinite

cnp.import_array()


def cholesky_lower(a, double jitter):
    cdef double[:, ::1] A = np.ascontiguousarray(a, dtype=np.float64)
    cdef Py_ssize_t n = A.shape[0]
    L_arr = np.zeros((n, n))
    cdef double[:, ::1] L = L_arr
    cdef Py_ssize_t i, j, k
    cdef double s, d
    for j in range(n):
        s = A[j, j] + jitter
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not s > 0.0:
            raise NotPositiveDefinite(
                f"non-positive pivot {s:.3e} at column {j}")
        d = sqrt(s)
        L[j, j] = d
        for i in range(j + 1, n):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / d
    return L_arr


def solve_lower(L_in, b):
    cdef double[:, ::1] L = np.ascontiguousarray(L_in, dtype=np.float64)
    x_arr = np.array(b, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] x = x_arr
    cdef Py_ssize_t n = L.shape[0], p = x.shape[1]
    cdef Py_ssize_t i, k, c
    cdef double s
    for c in range(p):
        for i in range(n):
            s = x[i, c]
            for k in range(i):
                s -= L[i, k] * x[k, c]
            x[i, c] = s / L[i, i]
    return x_arr


def solve_lower_t(L_in, b):
    cdef double[:, ::1] L = np.ascontiguousarray(L_in, dtype=np.float64)
    x_arr = np.array(b, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] x = x_arr
    cdef Py_ssize_t n = L.shape[0], p = x.shape[1]
    cdef Py_ssize_t i, k, c
    cdef double s
    for c in range(p):
        for i in range(n - 1, -1, -1):
            s = x[i, c]
            for k in range(i + 1, n):
                s -= L[k, i] * x[k, c]
            x[i, c] = s / L[i, i]
    return x_arr


def pairwise_sqdist(x_in, y_in):
    cdef double[:, ::1] x = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef double[:, ::1] y = np.ascontiguousarray(y_in, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], m = y.shape[0], d = x.shape[1]
    out_arr = np.empty((n, m))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, k
    cdef double s, t
    for i in range(n):
        for j in range(m):
            s = 0.0
            for k in range(d):
                t = x[i, k] - y[j, k]
                s += t * t
            out[i, j] = s
    return out_arr


def nearest_centroid(points_in, centroids_in):
    cdef double[:, ::1] x = np.ascontiguousarray(points_in, dtype=np.float64)
    cdef double[:, ::1] c = np.ascontiguousarray(centroids_in, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], kc = c.shape[0], d = x.shape[1]
    idx_arr = np.empty(n, dtype=np.intp)
    best_arr = np.empty(n)
    cdef Py_ssize_t[::1] idx = idx_arr
    cdef double[::1] best = best_arr
    cdef Py_ssize_t i, j, k
    cdef double s, t
    for i in range(n):
        best[i] = 0.0
        idx[i] = -1
        for j in range(kc):
            s = 0.0
            for k in range(d):
                t = x[i, k] - c[j, k]
                s += t * t
            if idx[i] < 0 or s < best[i]:
                best[i] = s
                idx[i] = j
    return idx_arr, best_arr


def adam_update(double[::1] param, const double[::1] grad, double[::1] m,
                double[::1] v, double lr, double beta1, double beta2,
                double eps, double bc1, double bc2, double scale):
    cdef Py_ssize_t i, n = param.shape[0]
    cdef double g, step
    cdef double a1 = 1.0 - beta1
    cdef double a2 = 1.0 - beta2
    for i in range(n):
        g = grad[i]
        m[i] = m[i] * beta1 + a1 * g
        v[i] = v[i] * beta2 + a2 * (g * g)
        step = lr * (m[i] / bc1) / (sqrt(v[i] / bc2) + eps)
        param[i] -= scale * step
