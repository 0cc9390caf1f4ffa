"""Benchmark the compiled gridding backend against the pure-Python fallback.

Run as ``python -m fnp.kernels.bench``.  Prints per-case timings and the
speedup, and verifies the two backends agree.
"""
from __future__ import annotations

import time

import numpy as np

from . import BACKEND, gridding_numpy

try:
    from . import _gridding
except ImportError:
    _gridding = None


def _make_case(n_points, H, W, C, seed=0):
    rng = np.random.default_rng(seed)
    rows = rng.uniform(0, H - 1, n_points)
    cols = rng.uniform(0, W, n_points)
    values = rng.standard_normal((n_points, C))
    mask = np.ones((n_points, C), dtype=np.uint8)
    ell = np.full(C + 1, 2.0)
    return rows, cols, values, mask, H, W, ell, True


def _time(fn, args, repeats=3):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    print(f"active backend: {BACKEND}")
    if _gridding is None:
        print("compiled backend not built; benchmarking fallback only")
    cases = [
        (512, 16, 32, 4),
        (3276, 32, 64, 4),
        (8192, 64, 128, 4),
    ]
    for n, H, W, C in cases:
        args = _make_case(n, H, W, C)
        t_np = _time(gridding_numpy.gridding_forward, args)
        line = f"n={n:6d} grid={H}x{W} C={C}: numpy {t_np * 1e3:8.2f} ms"
        if _gridding is not None:
            t_cy = _time(_gridding.gridding_forward, args)
            ref = gridding_numpy.gridding_forward(*args)
            out = _gridding.gridding_forward(*args)
            err = max(
                float(np.abs(a - b).max()) for a, b in zip(ref, out)
            )
            line += f"  cython {t_cy * 1e3:8.2f} ms  speedup {t_np / t_cy:6.1f}x  max|diff|={err:.2e}"
        print(line)


if __name__ == "__main__":
    main()
