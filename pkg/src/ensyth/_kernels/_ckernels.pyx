# cython: language_level=3
# cython: boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled matmul/relu kernels.

Arithmetic order is pinned: each output cell of ``matmul`` accumulates
products left to right over the inner dimension with one rounding per
multiply and one per add.  Together with -ffp-contract=off this makes the
results bit-identical to ``_pykernels``.
"""

import numpy as np


def matmul(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t m = a.shape[0]
    cdef Py_ssize_t kdim = a.shape[1]
    cdef Py_ssize_t n = b.shape[1]
    out_arr = np.zeros((m, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, k, j
    cdef double aik
    with nogil:
        for i in range(m):
            for k in range(kdim):
                aik = a[i, k]
                for j in range(n):
                    out[i, j] = out[i, j] + aik * b[k, j]
    return out_arr


def relu(const double[:, ::1] a):
    cdef Py_ssize_t m = a.shape[0]
    cdef Py_ssize_t n = a.shape[1]
    out_arr = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double v
    with nogil:
        for i in range(m):
            for j in range(n):
                v = a[i, j]
                out[i, j] = v if v > 0.0 else 0.0
    return out_arr
