"""Benchmark: compiled vs pure-Python truncated Cauchy-product kernel.

The jet multiply is the hot kernel of the factorization pipeline: every
Malgrange division stage performs O(order) jet products over 2n variables.
This script times both implementations on identical random inputs and
reports the speedup, plus a correctness cross-check.

Usage:  python benchmarks/bench_jetmul.py [--order N] [--nvars 2n] [--reps R]
"""

import argparse
import time

import numpy as np

from psiwork import _jetmul, _jetmul_py
from psiwork import jet as jt


def bench(kernel, a, b, table, out_len, reps):
    ti, tj, tk, tc = table
    # warm up
    kernel.cauchy_product(a, b, ti, tj, tk, tc, out_len)
    t0 = time.perf_counter()
    for _ in range(reps):
        out = kernel.cauchy_product(a, b, ti, tj, tk, tc, out_len)
    dt = (time.perf_counter() - t0) / reps
    return dt, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--order", type=int, default=6)
    ap.add_argument("--nvars", type=int, default=4,
                    help="combined base+fiber variable count (2n)")
    ap.add_argument("--reps", type=int, default=200)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    table = jt.leibniz_table(args.nvars, args.order)
    out_len = len(jt.index_list(args.nvars, args.order))
    a = rng.normal(size=out_len) + 1j * rng.normal(size=out_len)
    b = rng.normal(size=out_len) + 1j * rng.normal(size=out_len)
    a = np.ascontiguousarray(a)
    b = np.ascontiguousarray(b)

    print(f"nvars={args.nvars} order={args.order} "
          f"coefficients={out_len} table={len(table[0])} entries")
    t_c, out_c = bench(_jetmul, a, b, table, out_len, args.reps)
    t_py, out_py = bench(_jetmul_py, a, b, table, out_len, args.reps)
    err = np.max(np.abs(out_c - out_py))
    print(f"compiled ({_jetmul.IMPLEMENTATION}):   {t_c * 1e6:9.1f} us/call")
    print(f"fallback ({_jetmul_py.IMPLEMENTATION}): {t_py * 1e6:9.1f} us/call")
    print(f"speedup: {t_py / t_c:.2f}x   max |difference| = {err:.2e}")
    if err > 1e-12 * max(1.0, np.max(np.abs(out_py))):
        raise SystemExit("kernel outputs disagree")


if __name__ == "__main__":
    main()
