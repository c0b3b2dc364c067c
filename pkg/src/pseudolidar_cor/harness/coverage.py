"""Which depth pixels each loss actually reaches, on the street scene."""

from __future__ import annotations

import numpy as np

from ..losses import GradStats, gradient_stats, target_occupancy
from ..pipeline import depth_only, quantized_det, sparsified_det
from ..projection import depth_to_points
from ..soft_voxelizer import GridSpec
from ..sparsifier import SphericalBinSpec
from .scenes import StreetScene


def pixel_targets(scene: StreetScene) -> np.ndarray:
    """``(H, W, 3)`` true point per pixel; pixels without geometry target their own estimate."""
    H, W = scene.Z0.shape
    out = np.zeros((H, W, 3))
    est = depth_to_points(scene.Z0, scene.cam)
    u, v = est.source.T
    out[v, u] = est.points
    true = depth_to_points(scene.Ztrue, scene.cam)
    u, v = true.source.T
    out[v, u] = true.points
    return out


def coverage_stats(scene: StreetScene, grid: GridSpec | None = None, spec: SphericalBinSpec | None = None,
                   y_limit: float = 1.0) -> dict[str, GradStats]:
    grid = GridSpec.kitti() if grid is None else grid
    spec = SphericalBinSpec.lidar64() if spec is None else spec
    target = target_occupancy(scene.sweep.xyz.astype(np.float64), grid)
    return {
        "depth": gradient_stats(depth_only(scene.Z0, scene.Zstar).grad),
        "quantized": gradient_stats(quantized_det(scene.Z0, scene.cam, grid, target).grad),
        "sparsified": gradient_stats(sparsified_det(scene.Z0, scene.cam, spec, pixel_targets(scene), y_limit).grad),
    }
