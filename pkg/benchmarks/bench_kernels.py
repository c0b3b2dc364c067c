"""Compare the compiled and numpy kernels on the full KITTI grid.

    python benchmarks/bench_kernels.py [--sizes 75000 150000 300000] [--reps 3]

Prints a CSV of timings per backend plus the speed-up, and checks that the
two backends agree on values and gradients.
"""

import argparse
import sys
import time

import numpy as np

from pseudolidar_cor.harness.bench import bench_cloud, bench_voxelize
from pseudolidar_cor.soft_voxelizer import GridSpec, soft_voxelize, voxelize_backward
from pseudolidar_cor.sparsifier import SphericalBinSpec, angular_sparsify


def agree(n=50_000):
    grid = GridSpec.kitti()
    pts = bench_cloud(n, grid, seed=3)
    out = {}
    for b in ("cython", "python"):
        t, bwd = soft_voxelize(pts, grid, backend=b)
        g = voxelize_backward(bwd, t, pts)
        out[b] = (t.keys, t.values, g)
    (k1, v1, g1), (k2, v2, g2) = out["cython"], out["python"]
    return (np.array_equal(k1, k2), float(np.max(np.abs(v1 - v2))), float(np.max(np.abs(g1 - g2))))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--sizes", type=int, nargs="+", default=[75_000, 150_000, 300_000])
    ap.add_argument("--reps", type=int, default=3)
    args = ap.parse_args(argv)
    try:
        reports = {b: bench_voxelize(args.sizes, repetitions=args.reps, backend=b) for b in ("cython", "python")}
    except RuntimeError as exc:
        print(f"cannot compare: {exc}", file=sys.stderr)
        return 1
    print("n_points,cython_soft_s,python_soft_s,speedup,cython_hard_s")
    for rc, rp in zip(reports["cython"].rows, reports["python"].rows):
        print(f"{rc.n_points},{rc.soft_total_s:.4f},{rp.soft_total_s:.4f},"
              f"{rp.soft_total_s / rc.soft_total_s:.2f},{rc.hard_s:.4f}")
    for b, r in reports.items():
        print(f"# {b} growth per doubling: " + ", ".join(f"{x:.2f}" for x in r.growth()))

    spec = SphericalBinSpec.lidar64()
    pts = bench_cloud(300_000, GridSpec.kitti(), seed=4)
    for b in ("cython", "python"):
        t0 = time.perf_counter()
        angular_sparsify(pts, spec, backend=b)
        print(f"# angular_sparsify 300k {b}: {time.perf_counter() - t0:.4f} s")
    same_keys, dv, dg = agree()
    print(f"# backends agree: keys {same_keys}, max |dT| {dv:.2e}, max |dgrad| {dg:.2e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
