"""Compare the compiled and numpy kernel backends on batched path energies.

Usage: python benchmarks/bench_kernels.py [--paths N] [--steps N] [--repeat R]
"""

import argparse
import time

import numpy as np

from fkspde import kernels
from fkspde.model import HurstParams


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=2000)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    hurst = HurstParams(0.8, (0.8,))
    grid = np.linspace(0.0, 1.0, args.steps + 1)
    w = kernels.temporal_weights(grid, hurst.h0)
    paths = np.cumsum(rng.normal(scale=np.sqrt(1.0 / args.steps), size=(2, args.paths, args.steps + 1, 1)), axis=2)
    mid_a, mid_b = kernels.midpoints(paths[0]), kernels.midpoints(paths[1])
    n = np.full(args.paths, args.steps, dtype=np.int64)

    print(f"paths={args.paths} steps={args.steps} backends={sorted(kernels.BACKENDS)} default={kernels.BACKEND}")
    results = {}
    for name in sorted(kernels.BACKENDS):
        t_self, e_self = best_of(lambda: kernels.self_energies(mid_a, n, hurst, w, backend=name), args.repeat)
        t_pair, e_pair = best_of(lambda: kernels.cross_energies(mid_a, mid_b, n, n, hurst, w, backend=name),
                                 args.repeat)
        results[name] = (e_self[0], e_pair[0])
        print(f"{name:8s} self {t_self * 1e3:9.1f} ms   pair {t_pair * 1e3:9.1f} ms")
    if len(results) == 2:
        (sa, pa), (sb, pb) = results.values()
        diff = max(np.max(np.abs(sa - sb) / np.abs(sb)), np.max(np.abs(pa - pb) / (np.abs(pb) + 1e-300)))
        print(f"max relative difference between backends: {diff:.2e}")


if __name__ == "__main__":
    main()
