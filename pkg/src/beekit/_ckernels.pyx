# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled CSR product kernels (see beekit.kernels for the contract)."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def csr_dense(cnp.int64_t[::1] indptr, cnp.int64_t[::1] indices,
              double[::1] data, double[:, ::1] dense, double[:, ::1] out):
    cdef Py_ssize_t n_rows = indptr.shape[0] - 1
    cdef Py_ssize_t d = dense.shape[1]
    cdef Py_ssize_t i, k, j, col
    cdef double v
    with nogil:
        for i in range(n_rows):
            for k in range(indptr[i], indptr[i + 1]):
                col = indices[k]
                v = data[k]
                for j in range(d):
                    out[i, j] += v * dense[col, j]
    return np.asarray(out)


def csr_t_dense(cnp.int64_t[::1] indptr, cnp.int64_t[::1] indices,
                double[::1] data, double[:, ::1] dense, double[:, ::1] out):
    cdef Py_ssize_t n_rows = indptr.shape[0] - 1
    cdef Py_ssize_t d = dense.shape[1]
    cdef Py_ssize_t i, k, j, col
    cdef double v
    with nogil:
        for i in range(n_rows):
            for k in range(indptr[i], indptr[i + 1]):
                col = indices[k]
                v = data[k]
                for j in range(d):
                    out[col, j] += v * dense[i, j]
    return np.asarray(out)
