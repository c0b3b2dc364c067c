"""Depth loss, occupancy-matching stand-in for the detector loss, and the
gradient statistics used to balance them."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .kitti_io import DepthImage
from .soft_voxelizer import OccupancyTensor, hard_voxelize


@dataclass(frozen=True)
class LossWeights:
    lambda_depth: float = 1.0
    lambda_det: float = 0.1

    def __post_init__(self):
        if self.lambda_depth < 0 or self.lambda_det < 0:
            raise ValueError("loss weights must be non-negative")

    # weights used with the point-based and the voxel-based detector
    @classmethod
    def point_detector(cls):
        return cls(lambda_depth=1.0, lambda_det=0.01)

    @classmethod
    def voxel_detector(cls):
        return cls(lambda_depth=1.0, lambda_det=0.1)


@dataclass(frozen=True)
class GradStats:
    ratio: float
    mean: float
    sum: float

    def as_row(self, name):
        return [name, repr(self.ratio), repr(self.mean), repr(self.sum)]


def smooth_l1(x):
    """Value and derivative; works on scalars and arrays."""
    x = np.asarray(x, dtype=np.float64)
    small = np.abs(x) < 1
    value = np.where(small, 0.5 * x * x, np.abs(x) - 0.5)
    deriv = np.where(small, x, np.sign(x))
    if value.ndim == 0:
        return float(value), float(deriv)
    return value, deriv


def depth_loss(Z: DepthImage, Zstar: DepthImage) -> tuple[float, np.ndarray]:
    """Mean smooth-L1 over pixels valid in both images, and its ``(H, W)`` gradient."""
    if Z.shape != Zstar.shape:
        raise ValueError(f"shape mismatch {Z.shape} vs {Zstar.shape}")
    both = Z.valid & Zstar.valid
    n = int(both.sum())
    if n == 0:
        raise ValueError("no pixel has both a prediction and ground truth")
    value, deriv = smooth_l1(Z.values[both] - Zstar.values[both])
    grad = np.zeros(Z.shape)
    grad[both] = deriv / n
    return float(value.sum() / n), grad


def target_occupancy(cloud, grid) -> OccupancyTensor:
    """Occupancy target from ground-truth points (hard voxelization)."""
    return hard_voxelize(cloud, grid)


def surrogate_det_loss(pred: OccupancyTensor, target: OccupancyTensor) -> tuple[float, OccupancyTensor]:
    """``0.5 * sum (T - T*)^2`` over bins in either tensor, and the per-bin gradient.

    Stand-in for a tensor-input detector's loss. A positive gradient on a
    bin asks for less occupancy there, a negative one for more.
    """
    if pred.grid != target.grid:
        raise ValueError("prediction and target live on different grids")
    keys = np.union1d(pred.keys, target.keys)
    diff = np.zeros(keys.size)
    diff[np.searchsorted(keys, pred.keys)] += pred.values
    diff[np.searchsorted(keys, target.keys)] -= target.values
    nz = diff != 0
    return float(0.5 * np.dot(diff, diff)), OccupancyTensor(pred.grid, keys[nz], diff[nz])


def point_match_loss(points: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """``0.5 * sum |p - p*|^2`` and its gradient: stand-in for a point-input detector."""
    diff = np.asarray(points, dtype=np.float64) - np.asarray(targets, dtype=np.float64)
    return float(0.5 * np.sum(diff * diff)), diff


def total_loss(det: float, depth: float, w: LossWeights) -> float:
    return w.lambda_det * det + w.lambda_depth * depth


def gradient_stats(g: np.ndarray) -> GradStats:
    g = np.abs(np.asarray(g, dtype=np.float64))
    nonzero = int(np.count_nonzero(g))
    total = float(g.sum())
    return GradStats(nonzero / g.size if g.size else 0.0, total / nonzero if nonzero else 0.0, total)


def stats_csv(rows: dict[str, GradStats]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["loss_name", "ratio", "mean", "sum"])
    for name, st in rows.items():
        writer.writerow(st.as_row(name))
    return buf.getvalue()
