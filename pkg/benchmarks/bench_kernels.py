"""Benchmark the numba kernels against their pure-numpy fallbacks.

Run: python benchmarks/bench_kernels.py
The numba path is toggled per-call here (both variants are imported), so the
TUNESCOUT_NUMBA environment variable does not need to change between runs.
"""

import time

import numpy as np

from tunescout import kernels


def timeit(fn, *args, repeats=5):
    fn(*args)  # warm-up (includes JIT compile for the numba path)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_pq_scan(rng):
    m, sub = 12, 8
    lut = rng.standard_normal((m, 256)).astype(np.float32)
    codes = rng.integers(0, 256, size=(200_000, m), dtype=np.uint8)
    return (timeit(kernels._pq_scan_np, lut, codes),
            timeit(kernels._pq_scan_nb, lut, codes) if kernels.NUMBA_ENABLED else None,
            "pq_scan 200k x 12")


def bench_assign(rng):
    data = rng.standard_normal((50_000, 96)).astype(np.float64)
    cents = rng.standard_normal((256, 96)).astype(np.float64)
    return (timeit(kernels._assign_np, data, cents),
            timeit(kernels._assign_nb, data, cents) if kernels.NUMBA_ENABLED else None,
            "assign_nearest 50k x 256 @ d=96")


def bench_knn(rng):
    pts = rng.standard_normal((4_000, 96)).astype(np.float64)
    songs = rng.integers(0, 40, size=4_000).astype(np.int32)
    offs = rng.integers(0, 100, size=4_000).astype(np.int32)
    return (timeit(kernels._knn_radius_np, pts, songs, offs, 16, 2),
            timeit(kernels._knn_radius_nb, pts, songs, offs, 16, 2) if kernels.NUMBA_ENABLED else None,
            "knn_radius 4k x 4k @ k=16")


def main():
    rng = np.random.default_rng(0)
    print(f"numba available/enabled: {kernels.NUMBA_ENABLED}")
    print(f"{'kernel':<32}{'numpy (s)':>12}{'numba (s)':>12}{'speedup':>10}")
    for bench in (bench_pq_scan, bench_assign, bench_knn):
        t_np, t_nb, name = bench(rng)
        if t_nb is None:
            print(f"{name:<32}{t_np:>12.4f}{'n/a':>12}{'n/a':>10}")
        else:
            print(f"{name:<32}{t_np:>12.4f}{t_nb:>12.4f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
