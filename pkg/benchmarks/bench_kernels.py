"""
Compare the numba and pure-numpy hot kernels on ensemble-sized inputs.

    python3 benchmarks/bench_kernels.py [--samples N] [--repeat R]

Both variants are called directly, so the result does not depend on
EKFBOUND_BACKEND. The first numba call (compilation) is excluded.
"""
import argparse
import time

import numpy as np

from ekfbound import kernels
from ekfbound._accel import HAVE_NUMBA


def best_of(fn, args, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def cases(N, n, B, seed=0):
    rng = np.random.default_rng(seed)
    E = rng.standard_normal((N, n))
    idx = rng.integers(0, N, size=(B, N))
    C = rng.standard_normal((n, n))
    L = -np.abs(rng.standard_normal((n, n)))
    U = np.abs(rng.standard_normal((n, n)))
    P = np.tile(np.eye(n), (N, 1, 1))
    A = rng.standard_normal((N, n, n)) * 0.3
    W = 0.01 * np.eye(n)
    H = rng.standard_normal((N, 1, n))
    V = np.array([[0.1]])
    return {
        "box_worst_case": (C, L, U),
        "sample_covariance": (E,),
        "bootstrap_covariances": (E, idx),
        "batch_time_update": (P, A, W),
        "batch_measurement_update": (P, H, V),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    ap.add_argument("--samples", type=int, default=100_000)
    ap.add_argument("--dim", type=int, default=2)
    ap.add_argument("--bootstrap", type=int, default=20)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not HAVE_NUMBA:
        print("numba not importable; only the numpy column is meaningful")

    print(f"N={args.samples} n={args.dim} B={args.bootstrap}")
    print(f"{'kernel':28s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}  max|diff|")
    for name, a in cases(args.samples, args.dim, args.bootstrap).items():
        f_np = getattr(kernels, name + "_np")
        f_nb = getattr(kernels, name + "_nb")
        r_np, r_nb = f_np(*a), f_nb(*a)  # warm-up / compile
        if isinstance(r_np, tuple):
            diff = max(float(np.max(np.abs(x - y))) for x, y in zip(r_np, r_nb))
        else:
            diff = float(np.max(np.abs(np.asarray(r_np) - np.asarray(r_nb))))
        t_np = best_of(f_np, a, args.repeat)
        t_nb = best_of(f_nb, a, args.repeat)
        print(f"{name:28s} {1e3 * t_np:10.3f} {1e3 * t_nb:10.3f} {t_np / t_nb:8.2f}  {diff:.2e}")


if __name__ == "__main__":
    main()
