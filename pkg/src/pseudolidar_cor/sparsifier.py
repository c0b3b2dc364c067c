"""Height filtering and LiDAR-beam-like angular sparsification.

Both steps only select points, so the backward pass is a scatter: kept
points receive their gradient unchanged, dropped points receive zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._backend import select as _select_kernels
from .projection import ProvenancedCloud, points_to_spherical


@dataclass(frozen=True)
class SphericalBinSpec:
    """Angular bins; ``theta`` is elevation (positive up), ``phi`` azimuth, radians.

    Bins are half-open ``[min, max)`` on both axes.
    """

    theta_min: float
    theta_max: float
    n_theta: int
    phi_min: float
    phi_max: float
    n_phi: int

    def __post_init__(self):
        if self.n_theta < 1 or self.n_phi < 1:
            raise ValueError("bin counts must be >= 1")
        if not (self.theta_max > self.theta_min and self.phi_max > self.phi_min):
            raise ValueError("max must exceed min on both axes")

    @classmethod
    def lidar64(cls, phi_res_deg=0.18, phi_extent_deg=(-45.0, 45.0), beams=64,
                theta_deg=(-24.9, 2.0)) -> SphericalBinSpec:
        """64-beam sensor: elevation -24.9 to +2.0 degrees, ``phi_res_deg`` azimuth steps."""
        lo, hi = phi_extent_deg
        n_phi = int(round((hi - lo) / phi_res_deg))
        return cls(math.radians(theta_deg[0]), math.radians(theta_deg[1]), int(beams),
                   math.radians(lo), math.radians(lo + n_phi * phi_res_deg), n_phi)

    @property
    def n_bins(self) -> int:
        return self.n_theta * self.n_phi

    @property
    def theta_step(self) -> float:
        return (self.theta_max - self.theta_min) / self.n_theta

    @property
    def phi_step(self) -> float:
        return (self.phi_max - self.phi_min) / self.n_phi


@dataclass
class KeepMap:
    """Indices of the kept input points, ascending, with the bin each occupies.

    ``bin_of_kept`` is ``-1`` for maps that carry no angular bins (height filter).
    """

    kept: np.ndarray
    bin_of_kept: np.ndarray
    n_input: int

    def __len__(self):
        return len(self.kept)

    def apply(self, cloud: ProvenancedCloud) -> ProvenancedCloud:
        return cloud.subset(self.kept)

    def then(self, inner: KeepMap) -> KeepMap:
        """Compose: ``inner`` was computed on the points this map kept."""
        return KeepMap(self.kept[inner.kept], inner.bin_of_kept, self.n_input)


def _points(cloud):
    return cloud.points if isinstance(cloud, ProvenancedCloud) else np.asarray(cloud, dtype=np.float64).reshape(-1, 3)


def filter_height(cloud, y_limit: float = 1.0) -> KeepMap:
    """Keep points at most ``y_limit`` metres above the camera (y points down)."""
    pts = _points(cloud)
    kept = np.flatnonzero(pts[:, 1] >= -y_limit).astype(np.int64)
    return KeepMap(kept, np.full(kept.size, -1, dtype=np.int64), len(pts))


def angular_bins(cloud, spec: SphericalBinSpec):
    """Flat angular bin per point (``-1`` outside the extents) and squared
    angular distance to that bin's centre. Also returns the ranges."""
    pts = _points(cloud)
    if len(pts) == 0:
        empty = np.zeros(0)
        return np.zeros(0, dtype=np.int64), empty, empty
    r, theta, phi = points_to_spherical(pts).T
    ti = np.floor((theta - spec.theta_min) / spec.theta_step)
    pi = np.floor((phi - spec.phi_min) / spec.phi_step)
    inside = (ti >= 0) & (ti < spec.n_theta) & (pi >= 0) & (pi < spec.n_phi)
    ti = np.where(inside, ti, 0).astype(np.int64)
    pi = np.where(inside, pi, 0).astype(np.int64)
    bin_id = np.where(inside, ti * spec.n_phi + pi, -1)
    dt = theta - (spec.theta_min + (ti + 0.5) * spec.theta_step)
    dp = phi - (spec.phi_min + (pi + 0.5) * spec.phi_step)
    return bin_id, dt * dt + dp * dp, r


def angular_sparsify(cloud, spec: SphericalBinSpec, backend: str | None = None) -> KeepMap:
    """One point per nonempty (theta, phi) bin.

    The kept point is the one closest to the bin centre in angle, then the
    one with smallest range, then the smallest index.
    """
    bin_id, dist, r = angular_bins(cloud, spec)
    kernels = _select_kernels(backend)
    kept = kernels.angular_select(np.ascontiguousarray(bin_id), np.ascontiguousarray(dist),
                                  np.ascontiguousarray(r), spec.n_bins)
    return KeepMap(kept, bin_id[kept], len(bin_id))


def scatter_grads(keep: KeepMap, kept_grads: np.ndarray, n_input: int | None = None) -> np.ndarray:
    n_input = keep.n_input if n_input is None else n_input
    kept_grads = np.asarray(kept_grads, dtype=np.float64).reshape(-1, 3)
    if len(kept_grads) != len(keep.kept):
        raise ValueError(f"{len(kept_grads)} gradients for {len(keep.kept)} kept points")
    if keep.kept.size and (keep.kept.min() < 0 or keep.kept.max() >= n_input):
        raise IndexError(f"kept index outside [0, {n_input})")
    out = np.zeros((n_input, 3))
    out[keep.kept] = kept_grads
    return out
