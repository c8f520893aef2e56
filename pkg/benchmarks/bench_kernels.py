"""Compare the compiled recurrence kernels with the pure-Python fallback.

Usage: python3 benchmarks/bench_kernels.py [--n 32] [--length 3072] [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from ssmmem import _kernels_py

try:
    from ssmmem import _kernels
except ImportError:  # extension not built
    _kernels = None


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=32)
    parser.add_argument("--length", type=int, default=3072)
    parser.add_argument("--draws", type=int, default=20)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    lam = 0.99 * np.exp(1j * rng.uniform(0, np.pi, args.n))
    b = np.ones(args.n, dtype=np.complex128)
    u = rng.uniform(-1, 1, args.length)
    ub = rng.uniform(-1, 1, (args.draws, args.length))
    a = np.diag(rng.uniform(-0.9, 0.9, args.n))
    bd = np.ones(args.n)
    washout = args.length // 3

    cases = {
        "diag_recurrence": lambda m: m.diag_recurrence(lam, b, u, washout),
        "diag_recurrence_batch": lambda m: m.diag_recurrence_batch(lam, b, ub, washout),
        "dense_recurrence": lambda m: m.dense_recurrence(a, bd, u, washout),
    }
    print(f"n={args.n} length={args.length} draws={args.draws} (best of {args.repeat})")
    print(f"{'kernel':<24}{'python [ms]':>14}{'cython [ms]':>14}{'speedup':>10}{'max |diff|':>14}")
    for name, fn in cases.items():
        t_py = min(timeit.repeat(lambda: fn(_kernels_py), number=1, repeat=args.repeat))
        if _kernels is None:
            print(f"{name:<24}{1e3 * t_py:>14.3f}{'n/a':>14}")
            continue
        t_cy = min(timeit.repeat(lambda: fn(_kernels), number=1, repeat=args.repeat))
        diff = np.max(np.abs(fn(_kernels_py) - fn(_kernels)))
        print(f"{name:<24}{1e3 * t_py:>14.3f}{1e3 * t_cy:>14.3f}{t_py / t_cy:>10.1f}{diff:>14.3g}")


if __name__ == "__main__":
    main()
