"""Brute-force dense re-implementations used as independent oracles.

Everything here loops over the whole grid directly from the definitions,
in extended precision, and shares no code with the sparse kernels.
"""

from __future__ import annotations

import numpy as np

from ..kitti_io import CameraModel, DepthImage


def reference_points(Z: DepthImage, cam: CameraModel, dtype=np.longdouble) -> np.ndarray:
    v, u = np.nonzero(Z.valid)
    z = Z.values[v, u].astype(dtype)
    x = (u.astype(dtype) - dtype(cam.c_u)) * z / dtype(cam.f_u)
    y = (v.astype(dtype) - dtype(cam.c_v)) * z / dtype(cam.f_v)
    return np.stack([x, y, z], axis=1)


def reference_soft_tensor(points: np.ndarray, grid, dtype=np.longdouble) -> np.ndarray:
    """Dense soft occupancy, shape ``grid.counts``."""
    pts = np.asarray(points, dtype=dtype).reshape(-1, 3)
    origin = np.array(grid.origin, dtype=dtype)
    width = np.array(grid.bin_size, dtype=dtype)
    counts = np.array(grid.counts)
    cell = np.floor((pts - origin) / width).astype(np.int64)
    inside = np.all((cell >= 0) & (cell < counts), axis=1)

    axes = [np.arange(n) for n in grid.counts]
    all_idx = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    centers = origin + (all_idx.astype(dtype) + dtype(0.5)) * width
    sigma_sq = dtype(grid.sigma_sq)
    T = np.zeros(len(all_idx), dtype=dtype)
    occupied = np.unique(cell[inside], axis=0) if inside.any() else np.zeros((0, 3), dtype=np.int64)
    for src in occupied:
        members = pts[inside & np.all(cell == src, axis=1)]
        cheb = np.abs(all_idx - src).max(axis=1)
        d2 = ((members[None, :, :] - centers[:, None, :]) ** 2).sum(axis=2)
        t_pair = np.exp(-d2 / sigma_sq).mean(axis=1)
        T += np.where(cheb == 0, t_pair, 0)
        if grid.neighborhood == "cube26":
            T += np.where(cheb == 1, t_pair / dtype(26), 0)
    return T.reshape(grid.counts)


def reference_quantized_loss(Z: DepthImage, cam, grid, target, dtype=np.longdouble):
    """``0.5 * sum (T - T*)^2`` with a dense brute-force soft tensor."""
    T = reference_soft_tensor(reference_points(Z, cam, dtype), grid, dtype)
    Tstar = np.zeros(grid.n_bins, dtype=dtype)
    Tstar[target.keys] = target.values
    diff = T.ravel() - Tstar
    return dtype(0.5) * np.sum(diff * diff)


def reference_depth_grad(Z: DepthImage, point_grads: np.ndarray, cam) -> np.ndarray:
    """Chain rule for depth written per pixel with explicit loops."""
    H, W = Z.shape
    out = np.zeros((H, W))
    n = 0
    for v in range(H):
        for u in range(W):
            if not Z.valid[v, u]:
                continue
            gx, gy, gz = point_grads[n]
            out[v, u] += gx * (u - cam.c_u) / cam.f_u + gy * (v - cam.c_v) / cam.f_v + gz
            n += 1
    return out
