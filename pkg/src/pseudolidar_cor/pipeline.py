"""End-to-end loss evaluations on a depth image with gradients back to depth."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kitti_io import CameraModel, DepthImage
from .losses import LossWeights, depth_loss, point_match_loss, surrogate_det_loss, total_loss
from .projection import backprop_to_depth, depth_to_points
from .soft_voxelizer import GridSpec, OccupancyTensor, soft_voxelize, voxelize_backward
from .sparsifier import SphericalBinSpec, angular_sparsify, filter_height, scatter_grads


@dataclass
class PathResult:
    loss: float
    grad: np.ndarray
    n_points: int


def quantized_det(Z: DepthImage, cam: CameraModel, grid: GridSpec, target: OccupancyTensor) -> PathResult:
    """Occupancy-matching loss through soft voxelization."""
    cloud = depth_to_points(Z, cam)
    tensor, bwd = soft_voxelize(cloud, grid)
    loss, tgrad = surrogate_det_loss(tensor, target)
    # bins no point can reach have zero derivative wrt every point
    tgrad = tgrad.restrict(tensor.keys)
    pgrad = voxelize_backward(bwd, tgrad, cloud)
    return PathResult(loss, backprop_to_depth(cloud, pgrad, cam), len(cloud))


def sparsified_det(Z: DepthImage, cam: CameraModel, spec: SphericalBinSpec, target_points: np.ndarray,
                   y_limit: float = 1.0) -> PathResult:
    """Point-matching loss on the height-filtered, angularly sparsified cloud.

    ``target_points`` is ``(H, W, 3)``: the ground-truth point for each pixel.
    """
    cloud = depth_to_points(Z, cam)
    keep = filter_height(cloud, y_limit)
    keep = keep.then(angular_sparsify(keep.apply(cloud), spec))
    kept = keep.apply(cloud)
    u, v = kept.source.T
    loss, kgrad = point_match_loss(kept.points, target_points[v, u])
    pgrad = scatter_grads(keep, kgrad, len(cloud))
    return PathResult(loss, backprop_to_depth(cloud, pgrad, cam), len(kept))


def depth_only(Z: DepthImage, Zstar: DepthImage) -> PathResult:
    loss, grad = depth_loss(Z, Zstar)
    return PathResult(loss, grad, int((Z.valid & Zstar.valid).sum()))


@dataclass
class JointResult:
    loss: float
    det: float
    depth: float
    grad: np.ndarray
    det_grad: np.ndarray
    depth_grad: np.ndarray


def joint_quantized(Z, cam, grid, target, Zstar, w: LossWeights) -> JointResult:
    """``lambda_det * L_det + lambda_depth * L_depth`` through the quantized path."""
    det = quantized_det(Z, cam, grid, target)
    if w.lambda_depth > 0:
        dep_loss, dep_grad = depth_loss(Z, Zstar)
    else:
        dep_loss, dep_grad = 0.0, np.zeros(Z.shape)
    grad = w.lambda_det * det.grad + w.lambda_depth * dep_grad
    return JointResult(total_loss(det.loss, dep_loss, w), det.loss, dep_loss,
                       grad, det.grad, dep_grad)
