#!/usr/bin/env python3
"""Throughput comparison of the numba and numpy kernel variants.

Times the two hot kernels (splat compositing and heightfield ray casting)
under both backends and prints per-kernel speedups.  The numba path includes
a warm-up call so JIT compilation is not billed to the measurement.

    python3 benchmarks/bench_kernels.py [--repeats 5]
"""

import argparse
import time

import numpy as np

from skysplat import geo
from skysplat import synthetic as sy
from skysplat._accel import numba_enabled
from skysplat.kernels import composite, raycast


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_composite(repeats):
    rng = np.random.default_rng(0)
    n, h, w = 20_000, 512, 512
    means = np.column_stack([rng.uniform(0, w, n), rng.uniform(0, h, n)])
    var = rng.uniform(1.0, 9.0, n)
    conics = np.column_stack([1 / var, np.zeros(n), 1 / var])
    colors = rng.uniform(size=(n, 3))
    alphas = rng.uniform(0.1, 0.9, n)
    radii = np.ceil(3 * np.sqrt(var))
    bg = np.zeros(3)

    args = (means, conics, colors, alphas, radii, h, w, bg)
    results = {}
    for backend in ("numpy", "numba"):
        if backend == "numba" and not numba_enabled():
            continue
        composite(*args, force=backend)  # warm-up / JIT
        results[backend] = _time(lambda: composite(*args, force=backend), repeats)
    return f"composite ({n} splats, {h}x{w})", results


def bench_raycast(repeats):
    origin = (sy.SCENE_LAT0, sy.SCENE_LON0, 0.0)
    cam = sy.make_view_camera(12.0, 60.0, 76.8, 0.3, 10.0, origin)
    res = 0.15
    ncells = 768
    coords = -57.6 + res * np.arange(ncells)
    gx, gy = np.meshgrid(coords, coords)
    terr = 10.0 + 5.0 * np.sin(gx / 5.0) * np.cos(gy / 7.0)
    side = 256
    vv, uu = np.meshgrid(np.arange(float(side)), np.arange(float(side)), indexing="ij")
    dirs = cam.ray_dirs(uu, vv)
    basis = geo.tangent_basis(origin[0], origin[1])
    e0 = geo._ecef(*origin)
    deg = np.pi / 180.0
    args = (cam.c, dirs, terr, coords[0], coords[0], res, 4.0, 16.0, res,
            e0, basis, origin[0] * deg, origin[1] * deg)

    results = {}
    for backend in ("numpy", "numba"):
        if backend == "numba" and not numba_enabled():
            continue
        raycast(*args, force=backend)  # warm-up / JIT
        results[backend] = _time(lambda: raycast(*args, force=backend), repeats)
    return f"raycast ({side}x{side} rays, {ncells}x{ncells} heightfield)", results


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=5,
                    help="timing repeats per backend (best-of)")
    args = ap.parse_args()

    if not numba_enabled():
        print("note: numba unavailable or disabled; timing the numpy path only")

    for label, results in (bench_composite(args.repeats), bench_raycast(args.repeats)):
        print(f"\n{label}")
        for backend, t in results.items():
            print(f"  {backend:<6} {t * 1e3:9.2f} ms")
        if "numba" in results and "numpy" in results:
            print(f"  speedup {results['numpy'] / results['numba']:.1f}x")


if __name__ == "__main__":
    main()
