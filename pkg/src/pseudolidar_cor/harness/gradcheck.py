"""Central finite-difference oracle for depth-image gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..kitti_io import DepthImage


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_pixel: tuple[int, int]
    analytic: float
    numeric: float
    h: float
    n_checked: int

    def passed(self, tol: float) -> bool:
        return self.max_rel_error <= tol

    def __str__(self):
        u, v = self.worst_pixel
        return (f"max_rel_error={self.max_rel_error:.3e} at pixel (u={u}, v={v}) "
                f"analytic={self.analytic:.12g} numeric={self.numeric:.12g} h={self.h:g} "
                f"checked={self.n_checked}")


def relative_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    return np.abs(analytic - numeric) / scale


def numeric_gradient(loss_fn, Z: DepthImage, h: float, pixels) -> np.ndarray:
    """Central differences of ``loss_fn`` at each ``(u, v)`` in ``pixels``."""
    out = np.empty(len(pixels))
    base = Z.values
    for n, (u, v) in enumerate(pixels):
        vals = base.copy()
        vals[v, u] = base[v, u] + h
        plus = loss_fn(Z.with_values(vals))
        vals[v, u] = base[v, u] - h
        minus = loss_fn(Z.with_values(vals))
        if not (math.isfinite(plus) and math.isfinite(minus)):
            raise FloatingPointError(f"non-finite loss perturbing pixel (u={u}, v={v})")
        out[n] = (plus - minus) / (2 * h)
    return out


def finite_diff_check(loss_fn, grad_fn, Z: DepthImage, h: float = 1e-4, pixels=None) -> GradCheckReport:
    """Compare ``grad_fn(Z)`` with central differences of ``loss_fn``.

    ``pixels`` is a sequence of ``(u, v)``; by default every valid pixel.
    """
    if not h > 0:
        raise ValueError("step h must be positive")
    if pixels is None:
        v, u = np.nonzero(Z.valid)
        pixels = list(zip(u.tolist(), v.tolist()))
    if not pixels:
        raise ValueError("no pixels to check")
    analytic_all = np.asarray(grad_fn(Z), dtype=np.float64)
    analytic = np.array([analytic_all[v, u] for u, v in pixels])
    numeric = numeric_gradient(loss_fn, Z, h, pixels)
    err = relative_error(analytic, numeric)
    worst = int(np.argmax(err))
    return GradCheckReport(float(err[worst]), tuple(pixels[worst]), float(analytic[worst]),
                           float(numeric[worst]), h, len(pixels))
