"""Time the compiled kernels against the NumPy fallback.

    python benchmarks/bench_kernels.py [--repeat N] [--size PX]

Prints one row per kernel with the best-of-N wall time of each backend and
the speed-up, and checks that both backends return identical results.
"""
import argparse
import math
import timeit

import numpy as np

from hdrwm import kernels


def _best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--size", type=int, default=512)
    args = ap.parse_args(argv)
    if kernels._compiled is None:
        raise SystemExit("compiled extension not built; run `pip install -e .` first")

    rng = np.random.default_rng(0)
    n = args.size
    plane = np.log10(rng.lognormal(0, 2, (n, n)))
    sigma_s = 0.02 * math.hypot(n, n)
    targets = rng.integers(0, np.arange(1, n * n + 1), dtype=np.int64)

    cases = {
        f"bilateral {n}x{n}": lambda b: kernels.bilateral_filter(plane, sigma_s, 0.4, backend=b),
        f"fisher-yates n={n * n}": lambda b: kernels.fisher_yates(targets, backend=b),
    }
    print(f"{'kernel':<26}{'numpy s':>10}{'cython s':>10}{'speed-up':>10}  identical")
    for name, fn in cases.items():
        same = np.array_equal(fn("numpy"), fn("cython"))
        t_np = _best(lambda f=fn: f("numpy"), args.repeat)
        t_cy = _best(lambda f=fn: f("cython"), args.repeat)
        print(f"{name:<26}{t_np:>10.3f}{t_cy:>10.3f}{t_np / t_cy:>9.1f}x  {same}")


if __name__ == "__main__":
    main()
