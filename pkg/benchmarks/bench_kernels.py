"""Time the compiled kernels against their numpy counterparts.

    python3 benchmarks/bench_kernels.py [--repeat 5]

The compiled column is only meaningful with FEEDBACK_DMC_NUMBA unset (or 1).
"""
import argparse
import timeit

import numpy as np

from feedback_dmc import kernels
from feedback_dmc.channel import bsc, w_partition


def cases():
    rng = np.random.default_rng(0)
    log_base = rng.normal(size=96)
    weight = rng.random(96)
    rhos = np.geomspace(1e-3, 1e7, 1000)
    yield "mgf_sum (96 nodes x 1000 rho)", kernels.mgf_sum_loops, kernels.mgf_sum_numpy, \
        (log_base, weight, rhos)

    M = 1 << 16
    s = rng.dirichlet(np.ones(M))
    t = np.concatenate([[0.0], np.cumsum(s[:-1])])
    q = np.array([0.27, 0.77])
    f = np.array([1.8, 0.2, 1.8])
    yield "naive_rescale (M=65536)", kernels.naive_rescale_loops, kernels.naive_rescale_numpy, \
        (s, t, q, f)

    dmc = bsc(0.1)
    args = (0.25, rng.random(10**6), rng.random(10**6),
            np.ascontiguousarray(w_partition(dmc).boundaries),
            np.ascontiguousarray(dmc.transition), np.ascontiguousarray(dmc.output_pmf))
    yield "step_ratios (1e6 draws)", kernels.step_ratios_loops, kernels.step_ratios_numpy, args


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"numba enabled: {kernels.USE_NUMBA}")
    print(f"{'kernel':32s} {'compiled ms':>12s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, fast, slow, a in cases():
        np.testing.assert_allclose(fast(*a), slow(*a), rtol=1e-9)  # also warms the JIT
        tf = min(timeit.repeat(lambda: fast(*a), number=1, repeat=args.repeat)) * 1e3
        ts = min(timeit.repeat(lambda: slow(*a), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:32s} {tf:12.2f} {ts:10.2f} {ts / tf:8.1f}")


if __name__ == "__main__":
    main()
