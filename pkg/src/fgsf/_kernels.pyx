# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled kernels.

Every routine must stay bitwise-identical to its counterpart in
``_kernels_py``; the accumulation contract is documented in ``_gemm.h``.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef extern from "_gemm.h" nogil:
    int fgsf_gemm(const double *a, Py_ssize_t a_rs, Py_ssize_t a_ks, const double *b, Py_ssize_t b_ks,
                   double *out, Py_ssize_t n, Py_ssize_t m, Py_ssize_t kdim)


def matmul(const double[:, ::1] a, const double[:, ::1] b):
    """``a @ b``."""
    cdef Py_ssize_t n = a.shape[0], kdim = a.shape[1], m = b.shape[1]
    if b.shape[0] != kdim:
        raise ValueError(f"matmul shape mismatch: ({n}, {kdim}) x ({b.shape[0]}, {m})")
    out_arr = np.empty((n, m), dtype=np.float64)
    if kdim == 0:
        out_arr.fill(0.0)
    if kdim == 0 or n == 0 or m == 0:
        return out_arr
    cdef double[:, ::1] out = out_arr
    cdef int rc
    with nogil:
        rc = fgsf_gemm(&a[0, 0], kdim, 1, &b[0, 0], m, &out[0, 0], n, m, kdim)
    if rc:
        raise MemoryError("matmul scratch allocation failed")
    return out_arr


def matmul_tn(const double[:, ::1] a, const double[:, ::1] b):
    """``a.T @ b``, contracting over rows (samples) in order."""
    cdef Py_ssize_t kdim = a.shape[0], n = a.shape[1], m = b.shape[1]
    if b.shape[0] != kdim:
        raise ValueError(f"matmul_tn shape mismatch: ({kdim}, {n}).T x ({b.shape[0]}, {m})")
    out_arr = np.empty((n, m), dtype=np.float64)
    if kdim == 0:
        out_arr.fill(0.0)
    if kdim == 0 or n == 0 or m == 0:
        return out_arr
    cdef double[:, ::1] out = out_arr
    cdef int rc
    with nogil:
        rc = fgsf_gemm(&a[0, 0], 1, n, &b[0, 0], m, &out[0, 0], n, m, kdim)
    if rc:
        raise MemoryError("matmul_tn scratch allocation failed")
    return out_arr
