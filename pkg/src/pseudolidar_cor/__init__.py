"""Differentiable change of representation for pseudo-LiDAR pipelines.

Depth image -> point cloud -> occupancy tensor / sparsified points, with
gradients routed back to per-pixel depth.
"""

from ._backend import BACKEND
from .kitti_io import (
    CameraModel,
    DepthImage,
    LidarSweep,
    lidar_to_depth,
    parse_calibration,
    parse_extrinsic,
    read_depth_png,
    read_velodyne,
    write_depth_png,
    write_velodyne,
)
from .projection import (
    ProvenancedCloud,
    backprop_to_depth,
    depth_to_points,
    points_to_spherical,
    spherical_to_points,
)
from .soft_voxelizer import (
    GridSpec,
    OccupancyTensor,
    VoxelBackwardMap,
    assign_bins,
    hard_voxelize,
    soft_voxelize,
    voxelize_backward,
)
from .sparsifier import KeepMap, SphericalBinSpec, angular_sparsify, filter_height, scatter_grads
from .losses import GradStats, LossWeights, depth_loss, gradient_stats, surrogate_det_loss, target_occupancy

__version__ = "0.1.0"
