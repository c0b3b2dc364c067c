"""KITTI-style sensor files: velodyne sweeps, calibration text, 16-bit depth PNGs.

Formats
-------
* velodyne ``.bin``: consecutive 16-byte records, each four little-endian
  ``float32`` values ``x, y, z, reflectance``. No header.
* depth ``.png``: single-channel 16-bit grayscale; ``depth = raw / 256`` metres,
  ``raw == 0`` marks a pixel without depth.
* calibration ``.txt``: ``key: v1 v2 ...`` lines. Projection matrices are 12
  row-major floats (3x4).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError

RECORD_BYTES = 16
DEPTH_SCALE = 256.0
VELO_DTYPE = np.dtype("<f4")

#: KITTI color camera image size, used when the calibration file has none.
KITTI_IMAGE_SIZE = (1242, 375)


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics in pixels."""

    f_u: float
    f_v: float
    c_u: float
    c_v: float
    image_width: int
    image_height: int

    def __post_init__(self):
        if not (self.f_u > 0 and self.f_v > 0):
            raise ValueError(f"focal lengths must be positive, got ({self.f_u}, {self.f_v})")
        if not (0 <= self.c_u < self.image_width and 0 <= self.c_v < self.image_height):
            raise ValueError(
                f"principal point ({self.c_u}, {self.c_v}) outside "
                f"{self.image_width}x{self.image_height} image"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.image_height, self.image_width)


@dataclass
class LidarSweep:
    """``(N, 4)`` float32 array of ``x, y, z, reflectance``."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float32)
        if pts.size == 0:
            pts = pts.reshape(0, 4)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ValueError(f"sweep must be (N, 4), got {pts.shape}")
        self.points = pts

    def __len__(self):
        return len(self.points)

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    def check(self):
        """Raise ``ValueError`` naming the first record that breaks the invariants."""
        bad = _first_bad_record(self.points)
        if bad is not None:
            raise ValueError(f"record {bad} is non-finite or has reflectance outside [0, 1]")


@dataclass
class DepthImage:
    """Metric depth grid with a validity mask.

    Invalid pixels carry ``0.0`` in ``values`` and never enter a computation.
    """

    values: np.ndarray
    valid: np.ndarray = field(default=None)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"depth image must be 2-D, got shape {values.shape}")
        if self.valid is None:
            valid = np.isfinite(values) & (values > 0)
        else:
            valid = np.asarray(self.valid, dtype=bool)
            if valid.shape != values.shape:
                raise ValueError("valid mask shape differs from values")
            if np.any(~np.isfinite(values[valid]) | (values[valid] <= 0)):
                raise ValueError("valid pixels must hold finite positive depth")
        values[~valid] = 0.0
        self.values = values
        self.valid = valid

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def with_values(self, values: np.ndarray) -> DepthImage:
        """Same mask, new depths (used by optimizers and finite differences)."""
        return DepthImage(values, self.valid.copy())

    def copy(self) -> DepthImage:
        return DepthImage(self.values.copy(), self.valid.copy())


def _first_bad_record(points: np.ndarray):
    finite = np.isfinite(points).all(axis=1)
    refl = points[:, 3]
    ok = finite & (refl >= 0) & (refl <= 1)
    if ok.all():
        return None
    return int(np.flatnonzero(~ok)[0])


def read_velodyne(path: str | os.PathLike) -> LidarSweep:
    raw = Path(path).read_bytes()
    if len(raw) % RECORD_BYTES:
        offset = len(raw) - len(raw) % RECORD_BYTES
        raise FormatError(f"{path}: truncated record at byte offset {offset}")
    points = np.frombuffer(raw, dtype=VELO_DTYPE).reshape(-1, 4)
    bad = _first_bad_record(points)
    if bad is not None:
        raise FormatError(f"{path}: record {bad} rejected (non-finite or reflectance outside [0, 1])")
    return LidarSweep(points.astype(np.float32))


def write_velodyne(sweep: LidarSweep, path: str | os.PathLike) -> None:
    # validate before touching the filesystem
    sweep.check()
    Path(path).write_bytes(sweep.points.astype(VELO_DTYPE).tobytes())


def encode_depth(img: DepthImage) -> np.ndarray:
    """Depth image to raw uint16, rounding to the nearest 1/256 m."""
    raw = np.zeros(img.shape, dtype=np.uint16)
    depth = img.values[img.valid]
    scaled = np.floor(depth * DEPTH_SCALE + 0.5)
    if np.any(scaled > np.iinfo(np.uint16).max):
        raise ValueError(f"depth above {65535 / DEPTH_SCALE:.3f} m cannot be encoded")
    # keep tiny positive depths valid rather than collapsing them into the sentinel
    raw[img.valid] = np.maximum(scaled, 1).astype(np.uint16)
    return raw


def decode_depth(raw: np.ndarray) -> DepthImage:
    raw = np.asarray(raw)
    valid = raw > 0
    return DepthImage(raw.astype(np.float64) / DEPTH_SCALE, valid)


def write_depth_png(img: DepthImage, path: str | os.PathLike) -> None:
    Image.fromarray(encode_depth(img)).save(path, format="PNG")


def read_depth_png(path: str | os.PathLike) -> DepthImage:
    with Image.open(path) as im:
        if im.mode not in ("I;16", "I;16B", "I;16L"):
            raise FormatError(f"{path}: expected single-channel 16-bit image, got mode {im.mode!r}")
        raw = np.array(im, dtype=np.uint16)
    return decode_depth(raw)


def _read_calibration_table(path) -> dict[str, tuple[int, list[float]]]:
    table = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise FormatError(f"{path}:{lineno}: expected 'key: values'")
        key, rest = line.split(":", 1)
        try:
            vals = [float(tok) for tok in rest.split()]
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: non-numeric token ({exc})") from None
        table[key.strip()] = (lineno, vals)
    return table


def _matrix(table, path, key, size):
    lineno, vals = table[key]
    if len(vals) != size:
        raise FormatError(f"{path}:{lineno}: key {key!r} needs {size} values, got {len(vals)}")
    return np.array(vals, dtype=np.float64)


def parse_calibration(path: str | os.PathLike, key: str = "P2", image_size=None) -> CameraModel:
    """Read pinhole intrinsics from the 3x4 projection matrix stored under ``key``.

    ``image_size`` is ``(width, height)``; when omitted an ``image_size: W H``
    line is used if present, otherwise the KITTI color-camera size.
    """
    table = _read_calibration_table(path)
    if key not in table:
        raise FormatError(f"{path}: missing calibration key {key!r}")
    P = _matrix(table, path, key, 12).reshape(3, 4)
    if image_size is None:
        image_size = (
            tuple(int(v) for v in _matrix(table, path, "image_size", 2))
            if "image_size" in table
            else KITTI_IMAGE_SIZE
        )
    width, height = image_size
    return CameraModel(P[0, 0], P[1, 1], P[0, 2], P[1, 2], int(width), int(height))


def parse_extrinsic(path: str | os.PathLike, key: str = "Tr_velo_to_cam", rect_key: str = "R0_rect") -> np.ndarray:
    """LiDAR-to-camera transform as a 3x4 matrix; identity when ``key`` is absent.

    When ``rect_key`` (a 3x3 rectification) is present it is applied after the
    rigid transform, as in KITTI object calibration files.
    """
    table = _read_calibration_table(path)
    T = np.eye(4)
    if key in table:
        T[:3, :] = _matrix(table, path, key, 12).reshape(3, 4)
        if rect_key in table:
            R = np.eye(4)
            R[:3, :3] = _matrix(table, path, rect_key, 9).reshape(3, 3)
            T = R @ T
    return T[:3, :]


def transform_sweep(sweep: LidarSweep, extrinsic: np.ndarray) -> LidarSweep:
    """Apply a 3x4 rigid transform to the sweep's coordinates."""
    E = np.asarray(extrinsic, dtype=np.float64)
    xyz = sweep.xyz.astype(np.float64) @ E[:, :3].T + E[:, 3]
    return LidarSweep(np.column_stack([xyz, sweep.points[:, 3]]))


def lidar_to_depth(sweep: LidarSweep, cam: CameraModel, extrinsic=None) -> DepthImage:
    """Sparse ground-truth depth from projecting a sweep into the image.

    The sweep is taken to be in camera coordinates (z forward) unless a 3x4
    ``extrinsic`` is given. Points behind the camera or outside the frame are
    skipped; on pixel collisions the smallest z wins.
    """
    if extrinsic is not None:
        sweep = transform_sweep(sweep, extrinsic)
    xyz = sweep.xyz.astype(np.float64)
    H, W = cam.shape
    depth = np.zeros((H, W))
    valid = np.zeros((H, W), dtype=bool)
    front = xyz[:, 2] > 0
    x, y, z = xyz[front].T
    u = np.floor(cam.f_u * x / z + cam.c_u + 0.5)
    v = np.floor(cam.f_v * y / z + cam.c_v + 0.5)
    inside = (u >= 0) & (u < W) & (v >= 0) & (v < H)
    u, v, z = u[inside].astype(np.int64), v[inside].astype(np.int64), z[inside]
    if z.size:
        flat = v * W + u
        # nearest surface first within each pixel, then keep the first hit
        order = np.lexsort((z, flat))
        flat, z = flat[order], z[order]
        first = np.ones(flat.size, dtype=bool)
        first[1:] = flat[1:] != flat[:-1]
        depth.ravel()[flat[first]] = z[first]
        valid.ravel()[flat[first]] = True
    return DepthImage(depth, valid)
