"""Compare the compiled tile walk with the pure-Python fallback.

Usage: python benchmarks/bench_tilewalk.py [--tmax 10] [--repeat 3]
"""

import argparse
import math
import time

import numpy as np

from cuspscatter import tilewalk
from cuspscatter.geodesics import horoball_candidates
from cuspscatter.surfaces import builtin_surface


def best_time(fn, repeat):
    best = math.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--tmax", type=float, default=10.0)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    spec = builtin_surface("pentagon2", ell=0.5)
    backends = ["python"] + (["compiled"] if tilewalk.BACKEND == "compiled" else [])
    results = {}
    for backend in backends:
        t, (mats, sel, res) = best_time(
            lambda: horoball_candidates(spec, 1, 2, args.tmax, backend=backend), args.repeat)
        results[backend] = (t, res)
        print(f"{backend:>9}: {len(res):8d} tiles  {t * 1e3:10.2f} ms")
    if len(results) == 2:
        (tp, rp), (tc, rc) = results["python"], results["compiled"]
        same = np.array_equal(rp.tiles, rc.tiles) and np.allclose(rp.mats, rc.mats, atol=1e-12)
        print(f"speed-up: {tp / tc:.1f}x  identical output: {same}")
    else:
        print("compiled kernel not built; only the fallback was timed")


if __name__ == "__main__":
    main()
