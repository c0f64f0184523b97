"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 20]

Each case is timed for both backends (best of ``--repeat`` runs) and checked
for bitwise agreement. A third column shows numpy's BLAS product for scale;
it uses a different summation order, so it is not a drop-in replacement.
"""

import argparse
import sys
import timeit

import numpy as np

from fgsf import _kernels_py

try:
    from fgsf import _kernels
except ImportError:
    _kernels = None

# (name, kernel, shape of a, shape of b) at the sizes a training step uses
CASES = [
    ("matmul 256x65 @ 65x64", "matmul", (256, 65), (65, 64)),
    ("matmul 256x64 @ 64x2", "matmul", (256, 64), (64, 2)),
    ("matmul_tn 256x65 . 256x64", "matmul_tn", (256, 65), (256, 64)),
    ("matmul_tn 256x4 . 256x64", "matmul_tn", (256, 4), (256, 64)),
    ("matmul 64x65 @ 65x65", "matmul", (64, 65), (65, 65)),
]


def best_us(fn, repeat: int) -> float:
    number = max(1, int(0.02 / max(timeit.timeit(fn, number=1), 1e-7)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number * 1e6


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; nothing to compare", file=sys.stderr)
        return 1
    rng = np.random.default_rng(args.seed)
    print(f"{'case':<28}{'compiled us':>13}{'python us':>12}{'speedup':>9}{'blas us':>10}  bitwise")
    for name, kernel, sa, sb in CASES:
        a, b = rng.normal(size=sa), rng.normal(size=sb)
        fast, slow = getattr(_kernels, kernel), getattr(_kernels_py, kernel)
        same = np.array_equal(fast(a, b), slow(a, b))
        t_fast = best_us(lambda: fast(a, b), args.repeat)
        t_slow = best_us(lambda: slow(a, b), args.repeat)
        at = a.T.copy() if kernel == "matmul_tn" else a
        t_blas = best_us(lambda: at @ b, args.repeat)
        print(f"{name:<28}{t_fast:>13.1f}{t_slow:>12.1f}{t_slow / t_fast:>8.1f}x{t_blas:>10.1f}  {'yes' if same else 'NO'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
