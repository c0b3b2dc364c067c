"""Wall-clock timing of hard and soft voxelization on the full KITTI grid."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..soft_voxelizer import GridSpec, hard_voxelize, soft_voxelize, voxelize_backward


@dataclass
class BenchRow:
    n_points: int
    hard_s: float
    soft_forward_s: float
    soft_total_s: float     # forward + backward


@dataclass
class BenchReport:
    backend: str | None
    rows: list[BenchRow]

    def growth(self) -> list[float]:
        """Soft forward+backward time ratio between consecutive sizes."""
        t = [r.soft_total_s for r in self.rows]
        return [b / a if a > 0 else float("inf") for a, b in zip(t, t[1:])]

    def csv(self) -> str:
        lines = ["backend,n_points,hard_s,soft_forward_s,soft_total_s"]
        for r in self.rows:
            lines.append(f"{self.backend or 'default'},{r.n_points},{r.hard_s:.6f},"
                         f"{r.soft_forward_s:.6f},{r.soft_total_s:.6f}")
        return "\n".join(lines) + "\n"


def bench_cloud(n_points: int, grid: GridSpec, seed=0) -> np.ndarray:
    """Points spread uniformly through the grid volume."""
    rng = np.random.default_rng(seed)
    lo = np.asarray(grid.origin)
    hi = lo + np.asarray(grid.bin_size) * np.asarray(grid.counts)
    return rng.uniform(lo, hi, size=(int(n_points), 3))


def time_voxelize(pts: np.ndarray, grid: GridSpec, repetitions=3, backend=None) -> BenchRow:
    """Best-of-``repetitions`` timings for one cloud."""
    hard, fwd, total = [], [], []
    grad_rng = np.random.default_rng(1)
    for _ in range(max(1, repetitions)):
        t0 = time.perf_counter()
        hard_voxelize(pts, grid)
        t1 = time.perf_counter()
        tensor, bwd = soft_voxelize(pts, grid, backend=backend)
        t2 = time.perf_counter()
        tensor.values = grad_rng.standard_normal(len(tensor))
        t3 = time.perf_counter()
        voxelize_backward(bwd, tensor, pts)
        t4 = time.perf_counter()
        hard.append(t1 - t0)
        fwd.append(t2 - t1)
        total.append((t2 - t1) + (t4 - t3))
    return BenchRow(len(pts), min(hard), min(fwd), min(total))


def bench_voxelize(n_points=(75_000, 150_000, 300_000), grid: GridSpec | None = None, repetitions=3,
                   backend=None, seed=0) -> BenchReport:
    grid = GridSpec.kitti() if grid is None else grid
    sizes = [n_points] if np.isscalar(n_points) else list(n_points)
    rows = [time_voxelize(bench_cloud(n, grid, seed), grid, repetitions, backend) for n in sizes]
    return BenchReport(backend, rows)
