"""Timing comparison of the compiled and pure-numpy stencil backends.

Runs the raw one-axis stencil, a full covariant derivative, and a
second-order iterated derivative on a magnetic-potential bundle, once per
backend, and prints best-of-N wall times with the speedup factor.

Usage: python benchmarks/bench_backends.py [--points 257] [--repeats 5]
"""

import argparse
import os
import time

import numpy as np

from nabla_calc import ChartGrid, MetricField, magnetic_example_bundle
from nabla_calc._kernels import active_backend, diff_axis
from nabla_calc.calculus import covariant_derivative, iterated_derivative
from nabla_calc.sections import random_bump_section, seeded_rng


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def build_cases(points):
    grid = ChartGrid([(-1.0, 1.0), (-1.0, 1.0)], (points, points))
    bundle = magnetic_example_bundle(grid)
    metric = MetricField.flat(grid)
    rng = seeded_rng(7, "bench")
    u = random_bump_section(grid, 0, bundle.fiber_dim, rng).section(grid)
    raw = u.values
    h = grid.h[0]
    return {
        "diff_axis": lambda: diff_axis(raw, 0, h, 4),
        "covariant_derivative": lambda: covariant_derivative(u, bundle, metric),
        "iterated_derivative(2)": lambda: iterated_derivative(u, 2, bundle, metric),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--points", type=int, default=257,
                        help="grid points per axis")
    parser.add_argument("--repeats", type=int, default=5,
                        help="repetitions per measurement, best is kept")
    args = parser.parse_args()

    results = {}
    for backend in ("numba", "numpy"):
        os.environ["NABLA_CALC_BACKEND"] = backend
        try:
            name = active_backend()
        except RuntimeError as exc:
            print(f"skipping {backend}: {exc}")
            continue
        cases = build_cases(args.points)
        for fn in cases.values():
            fn()
        for label, fn in cases.items():
            results.setdefault(label, {})[name] = best_of(fn, args.repeats)

    width = max(len(label) for label in results)
    print(f"grid {args.points}x{args.points}, best of {args.repeats}")
    header = f"{'case':<{width}}  {'numba':>10}  {'numpy':>10}  {'speedup':>8}"
    print(header)
    for label, timed in results.items():
        numba_t = timed.get("numba", float("nan"))
        numpy_t = timed.get("numpy", float("nan"))
        speedup = numpy_t / numba_t if numba_t and numba_t == numba_t else float("nan")
        print(
            f"{label:<{width}}  {numba_t * 1e3:>8.2f}ms  {numpy_t * 1e3:>8.2f}ms"
            f"  {speedup:>7.1f}x"
        )


if __name__ == "__main__":
    main()
