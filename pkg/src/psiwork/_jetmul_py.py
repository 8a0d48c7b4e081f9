"""Pure-python fallback for the truncated Cauchy product kernel.

Same contract as the compiled version in _jetmul.pyx; uses bincount over the
precomputed Leibniz table.
"""

import numpy as np


def cauchy_product(a, b, ti, tj, tk, tc, out_len):
    prod = a[ti] * b[tj] * tc
    out = np.bincount(tk, weights=prod.real, minlength=out_len).astype(np.complex128)
    out += 1j * np.bincount(tk, weights=prod.imag, minlength=out_len)
    return out


IMPLEMENTATION = "python"
