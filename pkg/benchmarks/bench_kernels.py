"""Benchmark the numba kernels against the pure-numpy fallback.

Usage:  python3 benchmarks/bench_kernels.py [--repeat 200]

Times row_risks and row_gains over table sizes spanning the bundled scenarios
(9 rows) up to far larger models, for both backends. The first numba call per
kernel is excluded (JIT warmup).
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from capex import kernels

SIZES = [(9, 4), (54, 4), (500, 4), (5000, 8)]


def time_call(fn, arg, repeat: int) -> float:
    fn(arg)   # warmup / JIT
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(arg)
    return (time.perf_counter() - t0) / repeat


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=200)
    args = parser.parse_args()

    backends = list(kernels.IMPLEMENTATIONS)
    print(f"available backends: {', '.join(backends)} (active: {kernels.BACKEND})")
    rng = np.random.default_rng(0)
    header = f"{'kernel':<10} {'rows x k':<10}" + "".join(f"{b:>14}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for name in ("row_risks", "row_gains"):
        for rows, k in SIZES:
            alpha = rng.uniform(0.3, 30.0, size=(rows, k))
            times = {}
            for backend in backends:
                times[backend] = time_call(kernels.IMPLEMENTATIONS[backend][name], alpha, args.repeat)
            line = f"{name:<10} {f'{rows}x{k}':<10}"
            for backend in backends:
                line += f"{times[backend]*1e6:>12.1f}us"
            if "numba" in times and "numpy" in times:
                line += f"{times['numpy']/times['numba']:>9.1f}x"
            print(line)
    # cross-check: both backends agree to numerical noise
    if len(backends) == 2:
        alpha = rng.uniform(0.3, 30.0, size=(64, 5))
        for name in ("row_risks", "row_gains"):
            a = kernels.IMPLEMENTATIONS["numba"][name](alpha)
            b = kernels.IMPLEMENTATIONS["numpy"][name](alpha)
            worst = float(np.max(np.abs(a - b)))
            print(f"max |numba - numpy| for {name}: {worst:.2e}")


if __name__ == "__main__":
    main()
