"""Synthetic depth scenes with consistent ground truth."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..kitti_io import CameraModel, DepthImage, LidarSweep, lidar_to_depth
from ..losses import target_occupancy
from ..projection import depth_to_points
from ..soft_voxelizer import GridSpec, OccupancyTensor

# KITTI color camera (object benchmark, P2 of a typical drive)
KITTI_CAMERA = CameraModel(721.5377, 721.5377, 609.5593, 172.854, 1242, 375)


@dataclass
class Scene:
    cam: CameraModel
    Zstar: DepthImage
    Z0: DepthImage
    sweep: LidarSweep
    object_mask: np.ndarray

    @property
    def background_mask(self) -> np.ndarray:
        return self.Zstar.valid & ~self.object_mask


def sweep_from_depth(Z: DepthImage, cam: CameraModel) -> LidarSweep:
    """LiDAR-style sweep reproducing ``Z`` exactly (camera frame, zero reflectance)."""
    pts = depth_to_points(Z, cam).points
    return LidarSweep(np.column_stack([pts, np.zeros(len(pts))]))


def synth_scene(n_objects=1, depth_range=(8.0, 16.0), noise=0.0, bias=0.0, shape=(48, 48),
                cam: CameraModel | None = None, seed=0, object_depths=None) -> Scene:
    """Fronto-parallel wall at ``depth_range[1]`` with box-shaped objects in front.

    Objects sit in separate horizontal slots, so each one is its own
    connected component. ``Z0`` is ``Zstar`` plus ``bias`` on object pixels
    plus Gaussian ``noise`` everywhere. ``object_depths`` overrides the
    random object depths.
    """
    H, W = shape
    if cam is None:
        cam = CameraModel(W * 0.8, W * 0.8, (W - 1) / 2, (H - 1) / 2, W, H)
    near, far = depth_range
    if not (0 < near < far):
        raise ValueError("depth_range must satisfy 0 < near < far")
    if n_objects < 0 or (n_objects and W // n_objects < 4):
        raise ValueError(f"cannot fit {n_objects} objects in width {W}")
    rng = np.random.default_rng(seed)
    depth = np.full(shape, float(far))
    mask = np.zeros(shape, dtype=bool)
    slot = W // max(n_objects, 1)
    for k in range(n_objects):
        lo = k * slot + 1
        width = int(rng.integers(max(2, slot // 2), slot - 1))
        left = lo + int(rng.integers(0, slot - 1 - width))
        height = int(rng.integers(max(2, H // 4), max(3, H // 2)))
        top = int(rng.integers(H // 4, H - height))
        mask[top:top + height, left:left + width] = True
        obj_depth = rng.uniform(near, (near + far) / 2)
        if object_depths is not None:
            obj_depth = float(object_depths[k])
        depth[top:top + height, left:left + width] = obj_depth
    Zstar = DepthImage(depth)
    z0 = depth + bias * mask
    if noise > 0:
        z0 = z0 + rng.normal(0.0, noise, size=shape)
    return Scene(cam, Zstar, DepthImage(np.maximum(z0, 1e-3)), sweep_from_depth(Zstar, cam), mask)


@dataclass
class GradCheckScene:
    cam: CameraModel
    grid: GridSpec
    Z: DepthImage
    target: OccupancyTensor


def gradcheck_scene(rng, shape=(8, 8), counts=(5, 5, 3), sigma_sq=0.01, margin=1e-4) -> GradCheckScene:
    """Random depth over a small 0.1 m grid; target from a perturbed copy.

    Depths are resampled until every point sits at least ``margin`` from a
    cell face, so a finite-difference step cannot change bin membership.
    """
    H, W = shape
    bin_w = 0.1
    near = 2.0
    cam = CameraModel(30.0, 30.0, (W - 1) / 2, (H - 1) / 2, W, H)
    grid = GridSpec((-counts[0] * bin_w / 2, -counts[1] * bin_w / 2, near), (bin_w,) * 3, counts,
                    sigma_sq, "cube26")
    v, u = np.mgrid[0:H, 0:W]
    ku = (u - cam.c_u) / cam.f_u
    kv = (v - cam.c_v) / cam.f_v
    z = np.empty(shape)
    todo = np.ones(shape, dtype=bool)
    lo, hi = near - 0.02, near + counts[2] * bin_w + 0.02
    while todo.any():
        z[todo] = rng.uniform(lo, hi, size=int(todo.sum()))
        pts = np.stack([ku * z, kv * z, z], axis=-1)
        rel = (pts - np.asarray(grid.origin)) / bin_w
        face_gap = np.abs(rel - np.round(rel)).min(axis=-1) * bin_w
        todo = face_gap < margin
    Z = DepthImage(z)
    perturbed = DepthImage(z + rng.normal(0.0, 0.05, size=shape))
    target = target_occupancy(depth_to_points(perturbed, cam), grid)
    return GradCheckScene(cam, grid, Z, target)


@dataclass
class DemoSetup:
    scene: Scene
    grid: GridSpec
    target: OccupancyTensor


def demo_scene(seed=0, bias=1.5, noise=0.05) -> DemoSetup:
    """Single object 1.5 m too far, on a grid with 2 m depth bins.

    The object's true depth (8.1 m) sits near the front of the [8, 10) bin
    so the biased copy (9.6 m) stays inside its target bin, within reach of
    the kernel. The wall (15 m) lies on a bin centre.
    """
    scene = synth_scene(1, depth_range=(8.0, 15.0), noise=noise, bias=bias, shape=(48, 48),
                        seed=seed, object_depths=[8.1])
    grid = GridSpec((-2.5, -1.0, 0.0), (0.25, 0.25, 2.0), (20, 8, 20), 0.25, "cube26")
    target = target_occupancy(depth_to_points(scene.Zstar, scene.cam), grid)
    return DemoSetup(scene, grid, target)


def raycast(dirs: np.ndarray, boxes) -> np.ndarray:
    """Ray parameter of the first hit of rays from the origin along ``dirs``
    with axis-aligned ``(lo, hi)`` boxes; ``inf`` on a miss (slab method)."""
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    best = np.full(len(dirs), np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        for lo, hi in boxes:
            t1 = np.asarray(lo, dtype=np.float64) * inv
            t2 = np.asarray(hi, dtype=np.float64) * inv
            # 0 * inf gives nan on axes the ray is parallel to; ignore them
            t_in = np.nanmax(np.minimum(t1, t2), axis=1)
            t_out = np.nanmin(np.maximum(t1, t2), axis=1)
            hit = (t_out >= t_in) & (t_in > 0) & (t_in < best)
            best = np.where(hit, t_in, best)
    return best


def street_boxes(rng, camera_height=1.65, facade_top=-1.5, cars_per_lane=2):
    """Road, two facades, an end wall and car-sized boxes, camera frame (y down)."""
    g = camera_height
    out = [((-40, g, 0.5), (40, g + 1.5, 90)),
           ((-16, facade_top, 0.5), (-12, g, 90)), ((12, facade_top, 0.5), (16, g, 90)),
           ((-12, facade_top, 80), (12, g, 82))]
    for lane in (-6.0, -2.5, 2.5, 6.0):
        for z in rng.uniform(6.0, 50.0, size=cars_per_lane):
            x = lane + rng.uniform(-0.3, 0.3)
            out.append(((x - 0.85, g - 1.5, z), (x + 0.85, g, z + 4.0)))
    return [(np.array(lo, dtype=np.float64), np.array(hi, dtype=np.float64)) for lo, hi in out]


@dataclass
class StreetScene:
    cam: CameraModel
    Ztrue: DepthImage     # dense geometry, every pixel that hits something
    Z0: DepthImage        # dense "estimated" depth: Ztrue with relative noise, sky far away
    Zstar: DepthImage     # sparse ground truth from the simulated sweep
    sweep: LidarSweep


def street_scene(seed=0, rel_noise=0.03, az_res_deg=0.1728, max_range=120.0,
                 sky_depth=200.0) -> StreetScene:
    """Full-resolution KITTI-camera street: ~300k pseudo-LiDAR points and a
    64-beam sweep whose projection covers ~4% of the pixels."""
    rng = np.random.default_rng(seed)
    cam = KITTI_CAMERA
    boxes = street_boxes(rng)
    H, W = cam.shape
    v, u = np.mgrid[0:H, 0:W]
    rays = np.stack([(u - cam.c_u) / cam.f_u, (v - cam.c_v) / cam.f_v, np.ones((H, W))], axis=-1)
    z = raycast(rays.reshape(-1, 3), boxes).reshape(H, W)
    hit = np.isfinite(z)
    Ztrue = DepthImage(np.where(hit, z, 0.0), hit)
    Z0 = DepthImage(np.where(hit, z, sky_depth) * (1 + rel_noise * rng.standard_normal((H, W))))

    elev = np.radians(np.linspace(-24.9, 2.0, 64))
    azim = np.radians(np.arange(-50.0, 50.0, az_res_deg))
    E, A = np.meshgrid(elev, azim, indexing="ij")
    beams = np.stack([np.cos(E) * np.sin(A), -np.sin(E), np.cos(E) * np.cos(A)], axis=-1).reshape(-1, 3)
    t = raycast(beams, boxes)
    ok = np.isfinite(t) & (t < max_range)
    pts = beams[ok] * t[ok, None]
    sweep = LidarSweep(np.column_stack([pts, np.zeros(len(pts))]))
    return StreetScene(cam, Ztrue, Z0, lidar_to_depth(sweep, cam), sweep)
