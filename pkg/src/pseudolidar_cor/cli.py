"""Command-line entry point: ``pseudolidar-cor <command> [flags]``.

Every flag can also come from ``--config FILE``: one ``key = value`` per
line, ``#`` starts a comment, keys are long flag names (``sigma-sq`` or
``sigma_sq``), optionally scoped to one command (``voxelize.sigma-sq``).
Flags given on the command line win over the file.

Exit status: 0 success, 1 validation failure, 2 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from ._backend import BACKEND
from .errors import DivergenceError, FormatError, GradientCheckError
from .kitti_io import (KITTI_IMAGE_SIZE, CameraModel, LidarSweep, lidar_to_depth,
                       parse_calibration, parse_extrinsic, read_depth_png, read_velodyne,
                       write_depth_png, write_velodyne)
from .losses import LossWeights, stats_csv
from .projection import depth_to_points
from .soft_voxelizer import GridSpec, hard_voxelize, soft_voxelize, write_tensor_dump
from .sparsifier import SphericalBinSpec, angular_sparsify, filter_height

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class ConfigError(ValueError):
    pass


# --- argument helpers -------------------------------------------------------

def _floats(n):
    def parse(text):
        vals = [float(v) for v in str(text).replace(",", " ").split()]
        if len(vals) != n:
            raise argparse.ArgumentTypeError(f"expected {n} numbers, got {text!r}")
        return tuple(vals)
    return parse


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def parse_grid(text: str, sigma_sq: float, neighborhood: str) -> GridSpec:
    """``kitti`` or ``origin=x y z;bin_size=bx by bz;counts=nx ny nz``."""
    text = text.strip()
    if text == "kitti":
        return GridSpec.kitti(sigma_sq, neighborhood)
    try:
        fields = dict(part.split("=", 1) for part in text.split(";") if part.strip())
        fields = {k.strip(): v for k, v in fields.items()}
        return GridSpec(
            tuple(float(v) for v in fields["origin"].replace(",", " ").split()),
            tuple(float(v) for v in fields["bin_size"].replace(",", " ").split()),
            tuple(int(v) for v in fields["counts"].replace(",", " ").split()),
            float(fields.get("sigma_sq", sigma_sq)),
            fields.get("neighborhood", neighborhood).strip(),
        )
    except (KeyError, ValueError) as exc:
        raise ValueError(f"bad --grid {text!r}: {exc}") from None


def load_camera(args, image_size=None) -> CameraModel:
    if args.camera is not None:
        fu, fv, cu, cv, w, h = args.camera
        return CameraModel(fu, fv, cu, cv, int(w), int(h))
    if args.calib is None:
        raise ValueError("need --calib or --camera")
    return parse_calibration(args.calib, image_size=image_size)


def read_points(path) -> np.ndarray:
    """``.bin`` velodyne records or whitespace text whose first three columns are x y z."""
    path = Path(path)
    if path.suffix == ".bin":
        return read_velodyne(path).xyz.astype(np.float64)
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) < 3:
                raise FormatError(f"{path}:{lineno}: need at least x y z")
            try:
                rows.append([float(p) for p in parts[:3]])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: not a number") from None
    pts = np.array(rows, dtype=np.float64).reshape(-1, 3)
    if not np.isfinite(pts).all():
        raise FormatError(f"{path}: non-finite coordinate")
    return pts


def write_points(path, pts: np.ndarray, extra=None, extra_names=()):
    path = Path(path)
    if path.suffix == ".bin":
        write_velodyne(LidarSweep(np.column_stack([pts, np.zeros(len(pts))])), path)
        return
    with open(path, "w") as fh:
        fh.write("# x y z " + " ".join(extra_names) + "\n")
        for n, p in enumerate(pts):
            cols = [repr(float(c)) for c in p]
            if extra is not None:
                cols += [str(c) for c in extra[n]]
            fh.write(" ".join(cols) + "\n")


# --- commands ---------------------------------------------------------------

def cmd_project(args, out):
    depth = read_depth_png(args.depth)
    H, W = depth.shape
    cam = load_camera(args, image_size=(W, H))
    if cam.shape != depth.shape:
        raise ValueError(f"camera is {cam.shape[1]}x{cam.shape[0]}, depth image is {W}x{H}")
    cloud = depth_to_points(depth, cam)
    write_points(args.out, cloud.points, cloud.source, ("u", "v"))
    print(f"{len(cloud)} points -> {args.out}", file=out)


def cmd_voxelize(args, out):
    grid = parse_grid(args.grid, args.sigma_sq, args.neighborhood)
    pts = read_points(args.points)
    if args.mode == "hard":
        tensor = hard_voxelize(pts, grid)
    else:
        tensor, _ = soft_voxelize(pts, grid)
    write_tensor_dump(tensor, args.out, args.mode)
    print(f"{len(tensor)} bins -> {args.out}", file=out)


def cmd_sparsify(args, out):
    spec = SphericalBinSpec.lidar64(phi_res_deg=args.phi_res, beams=args.beams,
                                    theta_deg=args.theta_range, phi_extent_deg=args.phi_range)
    pts = read_points(args.points)
    keep = filter_height(pts, args.y_limit)
    keep = keep.then(angular_sparsify(pts[keep.kept], spec))
    write_points(args.out, pts[keep.kept], keep.kept[:, None], ("index",))
    print(f"{len(keep)} of {len(pts)} points kept -> {args.out}", file=out)


def cmd_gtdepth(args, out):
    sweep = read_velodyne(args.velodyne)
    W, H = args.image_size
    cam = load_camera(args, image_size=(int(W), int(H)))
    extrinsic = None
    if not args.camera_frame:
        if args.calib is None:
            raise ValueError("need --calib for the LiDAR-to-camera transform (or --camera-frame)")
        extrinsic = parse_extrinsic(args.calib)
    depth = lidar_to_depth(sweep, cam, extrinsic)
    write_depth_png(depth, args.out)
    print(f"{int(depth.valid.sum())} valid pixels -> {args.out}", file=out)


def cmd_gradcheck(args, out):
    from .harness.gradcheck import finite_diff_check
    from .harness.reference import reference_quantized_loss
    from .harness.scenes import gradcheck_scene
    from .pipeline import quantized_det

    rng = np.random.default_rng(args.seed)
    worst = None
    for n in range(args.scenes):
        sc = gradcheck_scene(rng, shape=(args.size, args.size), sigma_sq=args.sigma_sq)
        if args.oracle == "reference":
            loss_fn = lambda Z, sc=sc: reference_quantized_loss(Z, sc.cam, sc.grid, sc.target)
        else:
            loss_fn = lambda Z, sc=sc: quantized_det(Z, sc.cam, sc.grid, sc.target).loss
        grad_fn = lambda Z, sc=sc: quantized_det(Z, sc.cam, sc.grid, sc.target).grad
        pixels = None
        if args.pixels > 0:
            v, u = np.nonzero(sc.Z.valid)
            pick = rng.choice(len(u), size=min(args.pixels, len(u)), replace=False)
            pixels = [(int(u[i]), int(v[i])) for i in np.sort(pick)]
        rep = finite_diff_check(loss_fn, grad_fn, sc.Z, h=args.h, pixels=pixels)
        print(f"scene {n}: {rep}", file=out)
        if worst is None or rep.max_rel_error > worst.max_rel_error:
            worst = rep
    print(f"worst: {worst}", file=out)
    if not worst.passed(args.tol):
        raise GradientCheckError(f"max relative error {worst.max_rel_error:.3e} exceeds {args.tol:g}")


def cmd_demo(args, out):
    from .harness.demo import optimize_depth
    from .harness.scenes import demo_scene

    setup = demo_scene(seed=args.seed, bias=args.bias)
    sc = setup.scene
    w = LossWeights(args.lambda_depth, args.lambda_det)
    trace = optimize_depth(sc.Z0, setup.target, sc.cam, setup.grid, w, sc.Zstar, args.steps, args.lr,
                           track=sc.object_mask)
    bg = sc.background_mask

    def rmse(Z):
        return float(np.sqrt(np.mean((Z.values[bg] - sc.Zstar.values[bg]) ** 2)))

    if args.trace:
        with open(args.trace, "w") as fh:
            fh.write("iter,loss,det_loss,depth_loss,grad_ratio,grad_mean,grad_sum,mean_distance\n")
            for row in trace.rows():
                fh.write(",".join([str(row[0])] + [repr(float(v)) for v in row[1:]]) + "\n")
    det0, det1 = trace.det_loss[0], trace.det_loss[-1]
    print(f"det_loss {det0:.6g} -> {det1:.6g} (ratio {det1 / det0 if det0 else float('nan'):.4f})", file=out)
    print(f"mean distance to target bin centre {trace.mean_distance[0]:.6g} -> {trace.mean_distance[-1]:.6g}",
          file=out)
    print(f"background RMSE {rmse(sc.Z0):.6g} -> {rmse(trace.Z):.6g}", file=out)


def cmd_stats(args, out):
    from .harness.coverage import coverage_stats
    from .harness.scenes import StreetScene, street_scene

    if args.depth is None:
        scene = street_scene(seed=args.seed)
    else:
        if args.gt is None or args.velodyne is None:
            raise ValueError("--depth needs --gt and --velodyne")
        Z0 = read_depth_png(args.depth)
        Zstar = read_depth_png(args.gt)
        if Z0.shape != Zstar.shape:
            raise ValueError(f"--depth is {Z0.shape}, --gt is {Zstar.shape}")
        H, W = Z0.shape
        cam = load_camera(args, image_size=(W, H))
        sweep = read_velodyne(args.velodyne)
        if not args.camera_frame:
            if args.calib is None:
                raise ValueError("need --calib for the LiDAR-to-camera transform (or --camera-frame)")
            from .kitti_io import transform_sweep
            sweep = transform_sweep(sweep, parse_extrinsic(args.calib))
        scene = StreetScene(cam, Zstar, Z0, Zstar, sweep)
    grid = parse_grid(args.grid, args.sigma_sq, args.neighborhood)
    spec = SphericalBinSpec.lidar64(phi_res_deg=args.phi_res, beams=args.beams)
    out.write(stats_csv(coverage_stats(scene, grid, spec, args.y_limit)))


def cmd_bench(args, out):
    from .harness.bench import bench_voxelize

    grid = parse_grid(args.grid, args.sigma_sq, args.neighborhood)
    backend = None if args.backend == "default" else args.backend
    report = bench_voxelize(args.sizes, grid, args.reps, backend)
    out.write(report.csv())
    growth = report.growth()
    if growth:
        print("# growth per step: " + ", ".join(f"{g:.2f}" for g in growth), file=out)


# --- parser -----------------------------------------------------------------

def _camera_flags(p):
    p.add_argument("--calib", help="KITTI calibration file (P2 intrinsics, Tr_velo_to_cam, R0_rect)")
    p.add_argument("--camera", type=_floats(6), metavar="FU,FV,CU,CV,W,H",
                   help="intrinsics given directly instead of --calib")


def _grid_flags(p, default_sigma=0.01):
    p.add_argument("--grid", default="kitti",
                   help="'kitti' or 'origin=x y z;bin_size=bx by bz;counts=nx ny nz'")
    p.add_argument("--sigma-sq", type=float, default=default_sigma, help="RBF width sigma^2 in m^2")
    p.add_argument("--neighborhood", choices=("none", "cube26"), default="cube26")


def _beam_flags(p):
    p.add_argument("--beams", type=int, default=64)
    p.add_argument("--phi-res", type=float, default=0.18, help="azimuth bin width, degrees")
    p.add_argument("--y-limit", type=float, default=1.0, help="drop points higher than this above the camera, m")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pseudolidar-cor", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", help="key = value file mirroring the flags")
    ap.add_argument("--version", action="store_true", help="print version and kernel backend")
    sub = ap.add_subparsers(dest="command")

    p = sub.add_parser("project", help="depth PNG -> point cloud")
    p.add_argument("--depth", help="16-bit depth PNG (raw / 256 = metres)")
    _camera_flags(p)
    p.add_argument("--out", help=".bin (velodyne layout) or text 'x y z u v'")
    p.set_defaults(func=cmd_project, required=("depth", "out"))

    p = sub.add_parser("voxelize", help="point cloud -> occupancy tensor dump")
    p.add_argument("--points", help=".bin or text with x y z in the first columns")
    p.add_argument("--mode", choices=("hard", "soft"), default="soft")
    _grid_flags(p)
    p.add_argument("--out", help="tensor dump path")
    p.set_defaults(func=cmd_voxelize, required=("points", "out"))

    p = sub.add_parser("sparsify", help="height filter + one point per angular bin")
    p.add_argument("--points")
    _beam_flags(p)
    p.add_argument("--theta-range", type=_floats(2), default=(-24.9, 2.0), metavar="LO,HI",
                   help="elevation extent, degrees")
    p.add_argument("--phi-range", type=_floats(2), default=(-45.0, 45.0), metavar="LO,HI",
                   help="azimuth extent, degrees")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sparsify, required=("points", "out"))

    p = sub.add_parser("gtdepth", help="velodyne sweep -> sparse ground-truth depth PNG")
    p.add_argument("--velodyne")
    _camera_flags(p)
    p.add_argument("--image-size", type=_floats(2), default=KITTI_IMAGE_SIZE, metavar="W,H")
    p.add_argument("--camera-frame", type=_bool, nargs="?", const=True, default=False,
                   help="sweep is already in camera coordinates")
    p.add_argument("--out")
    p.set_defaults(func=cmd_gtdepth, required=("velodyne", "out"))

    p = sub.add_parser("gradcheck", help="analytic vs finite-difference depth gradients")
    p.add_argument("--h", type=float, default=1e-7, help="central-difference step, m")
    p.add_argument("--pixels", type=int, default=0, help="random pixels per scene (0 = all)")
    p.add_argument("--scenes", type=int, default=20)
    p.add_argument("--size", type=int, default=8, help="depth map is SIZE x SIZE")
    p.add_argument("--sigma-sq", type=float, default=0.01)
    p.add_argument("--oracle", choices=("reference", "pipeline"), default="reference",
                   help="loss for the differences: extended-precision brute force or the pipeline itself")
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck, required=())

    p = sub.add_parser("demo-e2e", help="gradient descent on depth through soft voxelization")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lambda-depth", type=float, default=0.0)
    p.add_argument("--lambda-det", type=float, default=1.0)
    p.add_argument("--bias", type=float, default=1.5, help="depth error on object pixels, m")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", help="write the per-iteration trace as CSV")
    p.set_defaults(func=cmd_demo, required=())

    p = sub.add_parser("stats", help="gradient coverage CSV: loss_name,ratio,mean,sum")
    p.add_argument("--depth", help="estimated depth PNG (default: synthetic street scene)")
    p.add_argument("--gt", help="ground-truth depth PNG")
    p.add_argument("--velodyne", help="sweep for the occupancy target")
    _camera_flags(p)
    p.add_argument("--camera-frame", type=_bool, nargs="?", const=True, default=False)
    _grid_flags(p)
    _beam_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_stats, required=())

    p = sub.add_parser("bench", help="time hard and soft voxelization")
    p.add_argument("--sizes", type=int, nargs="+", default=[75_000, 150_000, 300_000])
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--backend", choices=("default", "cython", "python"), default="default")
    _grid_flags(p)
    p.set_defaults(func=cmd_bench, required=())
    return ap


def _subparsers(ap):
    for action in ap._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices
    return {}


def read_config(path) -> list[tuple[int, str, str]]:
    entries = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            entries.append((lineno, key.replace("_", "-"), value))
    return entries


def apply_config(ap, command, path):
    """Turn config entries for ``command`` into parser defaults."""
    subs = _subparsers(ap)
    known = {}
    for name, p in subs.items():
        known[name] = {a.option_strings[0][2:]: a for a in p._actions
                       if a.option_strings and a.option_strings[0].startswith("--") and a.dest != "help"}
    everywhere = set().union(*known.values())
    defaults = {}
    for lineno, key, value in read_config(path):
        scope, _, name = key.rpartition(".")
        if scope and scope not in subs:
            raise ConfigError(f"{path}:{lineno}: unknown command {scope!r}")
        if name not in (known[scope] if scope else everywhere):
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if (scope and scope != command) or name not in known[command]:
            continue
        action = known[command][name]
        try:
            if action.nargs in ("+", "*"):
                val = [action.type(v) if action.type else v for v in value.replace(",", " ").split()]
            else:
                val = action.type(value) if action.type else value
        except (argparse.ArgumentTypeError, ValueError) as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {name}: {exc}") from None
        if action.choices is not None and val not in action.choices:
            raise ConfigError(f"{path}:{lineno}: {name} must be one of {sorted(action.choices)}")
        defaults[action.dest] = val
    subs[command].set_defaults(**defaults)


def main(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    if args.version:
        from . import __version__
        print(f"pseudolidar-cor {__version__} ({BACKEND} kernels)", file=out)
        return EXIT_OK
    if args.command is None:
        ap.print_help(sys.stderr)
        return EXIT_INVALID
    try:
        if args.config:
            apply_config(ap, args.command, args.config)
            args = ap.parse_args(argv)
        missing = [name for name in args.required if getattr(args, name) is None]
        if missing:
            raise ValueError("missing " + ", ".join("--" + m.replace("_", "-") for m in missing))
        args.func(args, out)
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, GradientCheckError, DivergenceError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
