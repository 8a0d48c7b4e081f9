# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel for the truncated Cauchy product of dense jets.

The (i, j) -> k index table with Leibniz binomial weights is precomputed in
Python (psiwork.jet); this loop is the hot path of the division and
factorization sweeps.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def cauchy_product(cnp.complex128_t[::1] a,
                   cnp.complex128_t[::1] b,
                   cnp.int32_t[::1] ti,
                   cnp.int32_t[::1] tj,
                   cnp.int32_t[::1] tk,
                   cnp.float64_t[::1] tc,
                   Py_ssize_t out_len):
    out_arr = np.zeros(out_len, dtype=np.complex128)
    cdef cnp.complex128_t[::1] out = out_arr
    cdef Py_ssize_t m, n = ti.shape[0]
    for m in range(n):
        out[tk[m]] = out[tk[m]] + a[ti[m]] * b[tj[m]] * tc[m]
    return out_arr


IMPLEMENTATION = "cython"
