"""Depth image <-> pseudo-LiDAR point cloud, with the backward map to depth.

Camera frame: x right, y down, z forward. Pixel ``(u, v)`` is column ``u``,
row ``v``, addressed at its integer centre.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kitti_io import CameraModel, DepthImage


@dataclass
class ProvenancedCloud:
    """Points plus the ``(u, v)`` pixel each one came from.

    Attributes:
        points: ``(N, 3)`` float64 coordinates in metres.
        source: ``(N, 2)`` int64 ``(u, v)`` pixel indices.
        image_shape: ``(H, W)`` of the originating depth image.
    """

    points: np.ndarray
    source: np.ndarray
    image_shape: tuple[int, int]

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.source = np.asarray(self.source, dtype=np.int64).reshape(-1, 2)
        if len(self.points) != len(self.source):
            raise ValueError("points and source differ in length")

    def __len__(self):
        return len(self.points)

    def subset(self, index) -> ProvenancedCloud:
        return ProvenancedCloud(self.points[index], self.source[index], self.image_shape)

    @property
    def flat_source(self) -> np.ndarray:
        """Row-major pixel index ``v * W + u`` of every point."""
        return self.source[:, 1] * self.image_shape[1] + self.source[:, 0]


def depth_to_points(depth: DepthImage, cam: CameraModel) -> ProvenancedCloud:
    """Back-project every valid pixel; points are emitted in row-major pixel order."""
    if not depth.valid.any():
        raise ValueError("depth image has no valid pixels")
    v, u = np.nonzero(depth.valid)
    z = depth.values[v, u]
    x = (u - cam.c_u) * z / cam.f_u
    y = (v - cam.c_v) * z / cam.f_v
    return ProvenancedCloud(np.column_stack([x, y, z]), np.column_stack([u, v]), depth.shape)


def depth_jacobian(cloud: ProvenancedCloud, cam: CameraModel) -> np.ndarray:
    """``(N, 3)`` columns ``(dx/dz, dy/dz, dz/dz)`` for each point."""
    u = cloud.source[:, 0].astype(np.float64)
    v = cloud.source[:, 1].astype(np.float64)
    return np.column_stack([(u - cam.c_u) / cam.f_u, (v - cam.c_v) / cam.f_v, np.ones(len(u))])


def backprop_to_depth(cloud: ProvenancedCloud, grads: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Route per-point coordinate gradients to an ``(H, W)`` depth gradient.

    Several points sharing a pixel accumulate in ascending point order.
    """
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != (len(cloud), 3):
        raise ValueError(f"gradient shape {grads.shape} does not match cloud of {len(cloud)} points")
    H, W = cloud.image_shape
    if len(cloud) == 0:
        return np.zeros((H, W))
    J = depth_jacobian(cloud, cam)
    per_point = grads[:, 0] * J[:, 0] + grads[:, 1] * J[:, 1] + grads[:, 2]
    # bincount accumulates sequentially in input order
    out = np.bincount(cloud.flat_source, weights=per_point, minlength=H * W)
    return out.reshape(H, W)


def points_to_spherical(points: np.ndarray) -> np.ndarray:
    """``(N, 3)`` camera-frame points to ``(N, 3)`` columns ``r, theta, phi``.

    ``theta`` is the elevation out of the horizontal x-z plane, positive
    upward (toward -y), so the optical axis has ``theta = 0``. ``phi`` is the
    azimuth in the horizontal plane, ``atan2(x, z)``.
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    x, y, z = p.T
    horiz = np.hypot(x, z)
    r = np.sqrt(x * x + y * y + z * z)
    if np.any(r == 0):
        raise ValueError(f"zero-norm point at index {int(np.flatnonzero(r == 0)[0])}")
    return np.column_stack([r, np.arctan2(-y, horiz), np.arctan2(x, z)])


def spherical_to_points(sph: np.ndarray) -> np.ndarray:
    r, theta, phi = np.asarray(sph, dtype=np.float64).reshape(-1, 3).T
    horiz = r * np.cos(theta)
    return np.column_stack([horiz * np.sin(phi), -r * np.sin(theta), horiz * np.cos(phi)])
