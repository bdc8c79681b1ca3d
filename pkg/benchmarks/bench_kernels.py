"""Time the compiled rejection search against the numpy fallback.

    python benchmarks/bench_kernels.py [--n 1000] [--k 10] [--rows 2000] [--repeat 5]

Both kernels see the same whitened covariates and random words with a
negative threshold that never accepts, so every row is a full proposal.
"""
import argparse
import time

import numpy as np

from remqte import _fallback
from remqte.design import BalanceState

try:
    from remqte import _kernels
except ImportError:
    _kernels = None


def bits_for(rng, rows, subset):
    words = (subset + 1) // 2
    return rng.bit_generator.random_raw(rows * words).view(np.uint32).reshape(rows, 2 * words)


def best_time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--k", type=int, default=10)
    ap.add_argument("--rows", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    state = BalanceState.from_covariates(rng.standard_normal((args.n, args.k)))
    subset = args.n // 2
    scale = args.n / (subset * (args.n - subset))
    bits = bits_for(rng, args.rows, subset)
    w = np.ascontiguousarray(state.whitened)

    kernels = {"python": _fallback.rem_search}
    if _kernels is not None:
        kernels["cython"] = _kernels.rem_search
    results = {name: fn(w, subset, scale, -1.0, bits) for name, fn in kernels.items()}
    if len(results) == 2:
        assert results["python"][0] == results["cython"][0] == -1

    print(f"n={args.n} K={args.k} proposals={args.rows}")
    timings = {}
    for name, fn in kernels.items():
        t = best_time(lambda: fn(w, subset, scale, -1.0, bits), args.repeat)
        timings[name] = t
        print(f"{name:<7} {1e6 * t / args.rows:9.2f} us/proposal")
    if len(timings) == 2:
        print(f"speedup {timings['python'] / timings['cython']:.1f}x")
    else:
        print("compiled kernels not built; only the fallback was timed")


if __name__ == "__main__":
    main()
