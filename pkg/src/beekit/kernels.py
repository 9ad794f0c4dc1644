"""CSR product kernels with backend selection at import time.

Two products sit on the hot path of every training step:

* ``csr_dense``:   (n x m CSR) @ (m x d dense)  -> (n x d)
* ``csr_t_dense``: (n x m CSR)^T @ (n x d dense) -> (m x d)

The compiled extension (``beekit._ckernels``, Cython) is preferred; a
vectorized numpy fallback is used when it is missing or when the
``BEEKIT_PURE_PYTHON`` environment variable is set to a non-empty value.
``benchmarks/bench_kernels.py`` compares the two implementations.

All kernels expect ``int64`` index arrays, ``float64`` data and C-contiguous
dense operands; :mod:`beekit.sparse` guarantees this.
"""

import os

import numpy as np


def _csr_dense_numpy(indptr, indices, data, dense, out):
    # Row-wise dot keeps each row's accumulation in one BLAS call.
    for i in range(len(indptr) - 1):
        lo, hi = indptr[i], indptr[i + 1]
        if lo == hi:
            continue
        out[i] += data[lo:hi] @ dense[indices[lo:hi]]
    return out


def _csr_t_dense_numpy(indptr, indices, data, dense, out):
    # Column indices are unique within a row, so fancy-index += is safe per row.
    for i in range(len(indptr) - 1):
        lo, hi = indptr[i], indptr[i + 1]
        if lo == hi:
            continue
        out[indices[lo:hi]] += data[lo:hi, None] * dense[i]
    return out


BACKEND = "numpy"
csr_dense = _csr_dense_numpy
csr_t_dense = _csr_t_dense_numpy

if not os.environ.get("BEEKIT_PURE_PYTHON"):
    try:
        from beekit import _ckernels

        csr_dense = _ckernels.csr_dense
        csr_t_dense = _ckernels.csr_t_dense
        BACKEND = "compiled"
    except ImportError:
        pass


def backend_name() -> str:
    return BACKEND
