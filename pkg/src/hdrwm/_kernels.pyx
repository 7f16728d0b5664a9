# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Must stay numerically identical to ``_fallback``."""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, fmin

cnp.import_array()


def bilateral_filter(const double[:, ::1] padded, const double[:, ::1] spatial,
                     const cnp.int64_t[::1] offsets, const double[::1] lut,
                     double step, Py_ssize_t radius):
    """Brute-force bilateral filter over a symmetric-padded plane.

    Taps sit at ``offsets`` (both axes) around each pixel, ``spatial`` holds
    their Gaussian weights and ``lut`` the range kernel sampled every
    ``step`` units, zero past the end of the table. Accumulation order per
    pixel is (row offset, column offset), identical to the NumPy fallback.
    """
    cdef Py_ssize_t h = padded.shape[0] - 2 * radius
    cdef Py_ssize_t w = padded.shape[1] - 2 * radius
    cdef Py_ssize_t m = offsets.shape[0]
    cdef double tmax = lut.shape[0] - 2.0
    cdef double inv_step = 1.0 / step
    cdef double[:, ::1] out = np.empty((h, w), dtype=np.float64)
    cdef double[::1] num = np.empty(w, dtype=np.float64)
    cdef double[::1] den = np.empty(w, dtype=np.float64)
    cdef const double* L = &lut[0]
    cdef double* N = &num[0]
    cdef double* D = &den[0]
    cdef const double* crow
    cdef const double* prow
    cdef Py_ssize_t i, j, a, b, k
    cdef double v, t, wr, wt, ws

    with nogil:
        for i in range(h):
            for j in range(w):
                N[j] = 0.0
                D[j] = 0.0
            crow = &padded[i + radius, radius]
            for a in range(m):
                for b in range(m):
                    ws = spatial[a, b]
                    prow = &padded[i + radius + offsets[a], radius + offsets[b]]
                    for j in range(w):
                        v = prow[j]
                        t = fmin(fabs(v - crow[j]) * inv_step, tmax)
                        k = <Py_ssize_t>t
                        wr = L[k] + (t - k) * (L[k + 1] - L[k])
                        wt = ws * wr
                        N[j] = N[j] + wt * v
                        D[j] = D[j] + wt
            for j in range(w):
                out[i, j] = N[j] / D[j]
    return np.asarray(out)


def apply_swaps(cnp.int64_t[::1] perm, const cnp.int64_t[::1] targets):
    """In-place Fisher-Yates: for i = n-1 .. 1 swap perm[i] with perm[targets[i]]."""
    cdef Py_ssize_t n = perm.shape[0]
    cdef Py_ssize_t i, j
    cdef cnp.int64_t tmp
    with nogil:
        i = n - 1
        while i >= 1:
            j = targets[i]
            tmp = perm[i]
            perm[i] = perm[j]
            perm[j] = tmp
            i -= 1
