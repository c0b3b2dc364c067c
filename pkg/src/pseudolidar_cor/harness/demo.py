"""Plain gradient descent on depth through the soft-quantized path."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DivergenceError
from ..kitti_io import CameraModel, DepthImage
from ..losses import GradStats, LossWeights, gradient_stats
from ..pipeline import joint_quantized
from ..projection import depth_to_points
from ..soft_voxelizer import GridSpec, OccupancyTensor, assign_bins

MIN_DEPTH = 1e-3


@dataclass
class OptimTrace:
    loss: list[float] = field(default_factory=list)
    det_loss: list[float] = field(default_factory=list)
    depth_loss: list[float] = field(default_factory=list)
    grad_stats: list[GradStats] = field(default_factory=list)
    mean_distance: list[float] = field(default_factory=list)
    Z: DepthImage | None = None

    def __len__(self):
        return len(self.loss)

    def rows(self):
        for it, (L, det, dep, st, dist) in enumerate(zip(self.loss, self.det_loss, self.depth_loss,
                                                         self.grad_stats, self.mean_distance)):
            yield it, L, det, dep, st.ratio, st.mean, st.sum, dist


def target_bin_centers(Zstar: DepthImage, cam: CameraModel, grid: GridSpec, track: np.ndarray):
    """Centre of the bin holding each tracked pixel's ground-truth point.

    Returns ``(H, W, 3)`` centres and the mask of tracked pixels whose
    ground-truth point is inside the grid.
    """
    cloud = depth_to_points(Zstar, cam)
    assign = assign_bins(cloud, grid)
    H, W = Zstar.shape
    centers = np.full((H, W, 3), np.nan)
    u, v = cloud.source.T
    inside = assign.inside
    centers[v[inside], u[inside]] = grid.centers(assign.flat[inside])
    mask = track & ~np.isnan(centers[..., 0])
    return centers, mask


def mean_target_distance(Z: DepthImage, cam: CameraModel, centers: np.ndarray, mask: np.ndarray) -> float:
    if not mask.any():
        return float("nan")
    v, u = np.nonzero(mask)
    z = Z.values[v, u]
    pts = np.column_stack([(u - cam.c_u) * z / cam.f_u, (v - cam.c_v) * z / cam.f_v, z])
    return float(np.linalg.norm(pts - centers[v, u], axis=1).mean())


def optimize_depth(Z0: DepthImage, target: OccupancyTensor, cam: CameraModel, grid: GridSpec,
                   w: LossWeights, Zstar: DepthImage, steps: int, lr: float,
                   track: np.ndarray | None = None) -> OptimTrace:
    """Run ``steps`` descent steps; the trace holds ``steps + 1`` evaluations.

    ``track`` selects the pixels whose distance to their target bin centre is
    recorded (default: every pixel with ground truth).
    """
    if not lr > 0:
        raise ValueError("learning rate must be positive")
    if steps < 0:
        raise ValueError("steps must be non-negative")
    track = Zstar.valid.copy() if track is None else np.asarray(track, dtype=bool)
    centers, dist_mask = target_bin_centers(Zstar, cam, grid, track & Z0.valid)
    trace = OptimTrace()
    Z = Z0.copy()
    for it in range(steps + 1):
        res = joint_quantized(Z, cam, grid, target, Zstar, w)
        if not math.isfinite(res.loss):
            raise DivergenceError(it)
        trace.loss.append(res.loss)
        trace.det_loss.append(res.det)
        trace.depth_loss.append(res.depth)
        trace.grad_stats.append(gradient_stats(res.grad))
        trace.mean_distance.append(mean_target_distance(Z, cam, centers, dist_mask))
        if it == steps:
            break
        values = Z.values - lr * res.grad
        values[Z.valid] = np.maximum(values[Z.valid], MIN_DEPTH)
        Z = Z.with_values(values)
    trace.Z = Z
    return trace
