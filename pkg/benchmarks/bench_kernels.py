"""Benchmark the BKT grid-likelihood kernel: numba JIT vs numpy fallback.

Run:  python3 benchmarks/bench_kernels.py
The numpy path is always available; the numba path is skipped when the
SKILLTRACE_DISABLE_NUMBA=1 environment flag is set or numba is missing.
"""

import argparse
import time

import numpy as np

from skilltrace import _bkt_kernels as kern


def make_workload(num_students, seq_len, num_candidates, seed):
    rng = np.random.default_rng(seed)
    seqs = [
        [bool(b) for b in rng.integers(0, 2, rng.integers(1, seq_len + 1))]
        for _ in range(num_students)
    ]
    patterns, lengths, counts = kern.group_patterns(seqs)
    p0 = rng.uniform(0.01, 0.99, num_candidates)
    pt = rng.uniform(0.01, 0.99, num_candidates)
    pg = rng.uniform(0.01, 0.3, num_candidates)
    ps = rng.uniform(0.01, 0.3, num_candidates)
    return patterns, lengths, counts, p0, pt, pg, ps


def bench(fn, args, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        result = fn(*args)
        best = min(best, time.perf_counter() - start)
    return best, result


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--students", type=int, default=1000)
    parser.add_argument("--seq-len", type=int, default=12)
    parser.add_argument("--candidates", type=int, default=50000)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    workload = make_workload(args.students, args.seq_len, args.candidates, args.seed)
    print(
        f"workload: {args.students} students, seq len <= {args.seq_len} "
        f"({workload[0].shape[0]} unique patterns), {args.candidates} parameter "
        f"candidates, best of {args.repeats}"
    )

    t_numpy, ll_numpy = bench(kern.grid_loglik_numpy, workload, args.repeats)
    print(f"numpy fallback : {t_numpy:.3f} s")

    if kern.grid_loglik_numba is None:
        print("numba kernel   : unavailable (disabled or not installed)")
        return

    kern.grid_loglik_numba(*make_workload(8, 4, 10, 1))  # JIT warm-up
    t_numba, ll_numba = bench(kern.grid_loglik_numba, workload, args.repeats)
    print(f"numba kernel   : {t_numba:.3f} s  (speedup {t_numpy / t_numba:.1f}x)")
    max_diff = float(np.max(np.abs(ll_numpy - ll_numba)))
    print(f"max |diff|     : {max_diff:.2e}")


if __name__ == "__main__":
    main()
