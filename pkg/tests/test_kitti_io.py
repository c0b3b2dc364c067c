import struct

import numpy as np
import pytest
from PIL import Image

from pseudolidar_cor import (CameraModel, DepthImage, LidarSweep, depth_to_points, lidar_to_depth,
                             parse_calibration, parse_extrinsic, read_depth_png, read_velodyne,
                             write_depth_png, write_velodyne)
from pseudolidar_cor.errors import FormatError
from pseudolidar_cor.kitti_io import decode_depth, encode_depth, transform_sweep


def test_camera_validation():
    with pytest.raises(ValueError):
        CameraModel(0.0, 1.0, 1.0, 1.0, 10, 10)
    with pytest.raises(ValueError):
        CameraModel(1.0, 1.0, 10.0, 1.0, 10, 10)
    assert CameraModel(1.0, 1.0, 0.0, 0.0, 10, 5).shape == (5, 10)


def test_read_two_points(tmp_path):
    p = tmp_path / "two.bin"
    p.write_bytes(struct.pack("<8f", 1, 2, 3, 0.5, 4, 5, 6, 0.25))
    s = read_velodyne(p)
    assert len(s) == 2
    np.testing.assert_array_equal(s.points, [[1, 2, 3, 0.5], [4, 5, 6, 0.25]])


def test_empty_velodyne(tmp_path):
    p = tmp_path / "e.bin"
    write_velodyne(LidarSweep(np.zeros((0, 4))), p)
    assert p.stat().st_size == 0
    assert len(read_velodyne(p)) == 0


def test_truncated_velodyne_names_offset(tmp_path):
    p = tmp_path / "t.bin"
    p.write_bytes(bytes(17))
    with pytest.raises(FormatError, match="offset 16"):
        read_velodyne(p)


def test_non_finite_record_index(tmp_path):
    p = tmp_path / "nan.bin"
    p.write_bytes(struct.pack("<12f", 0, 0, 1, 0, 0, 0, 2, 0, float("nan"), 0, 3, 0))
    with pytest.raises(FormatError, match="record 2"):
        read_velodyne(p)


def test_velodyne_roundtrip_bit_exact(tmp_path, rng):
    pts = np.column_stack([rng.normal(0, 30, (1000, 3)), rng.uniform(0, 1, 1000)]).astype(np.float32)
    p = tmp_path / "r.bin"
    write_velodyne(LidarSweep(pts), p)
    raw = p.read_bytes()
    assert raw == pts.astype("<f4").tobytes()
    back = read_velodyne(p)
    assert back.points.tobytes() == pts.tobytes()
    write_velodyne(back, tmp_path / "r2.bin")
    assert (tmp_path / "r2.bin").read_bytes() == raw


def test_nan_rejected_before_write(tmp_path):
    p = tmp_path / "never.bin"
    with pytest.raises(ValueError):
        write_velodyne(LidarSweep([[0, 0, np.nan, 0]]), p)
    assert not p.exists()


def test_depth_scale_and_sentinel():
    img = decode_depth(np.array([[25600, 0]], dtype=np.uint16))
    assert img.values[0, 0] == 100.0 and img.valid[0, 0]
    assert not img.valid[0, 1]


def test_depth_encode_quantum(tmp_path):
    img = DepthImage(np.array([[5.0, 5.001, 0.0]]))
    write_depth_png(img, tmp_path / "d.png")
    back = read_depth_png(tmp_path / "d.png")
    assert np.all(np.abs(back.values[0, :2] - img.values[0, :2]) <= 1 / 512)
    assert back.valid.tolist() == [[True, True, False]]


def test_depth_png_roundtrip_bound(tmp_path, rng):
    vals = rng.uniform(1e-3, 255.0, size=(40, 50))
    vals[rng.random(vals.shape) < 0.3] = 0
    img = DepthImage(vals)
    write_depth_png(img, tmp_path / "d.png")
    back = read_depth_png(tmp_path / "d.png")
    np.testing.assert_array_equal(back.valid, img.valid)
    assert np.max(np.abs(back.values - img.values)) <= 1 / 512


def test_depth_too_far_to_encode():
    with pytest.raises(ValueError):
        encode_depth(DepthImage(np.array([[300.0]])))


def test_depth_png_wrong_mode(tmp_path):
    Image.fromarray(np.zeros((4, 4, 3), dtype=np.uint8)).save(tmp_path / "rgb.png")
    with pytest.raises(FormatError):
        read_depth_png(tmp_path / "rgb.png")


CALIB = """P0: 1 0 0 0 0 1 0 0 0 0 1 0
P2: 100 0 50 4.5 0 100 40 0.2 0 0 1 0.003
R0_rect: 1 0 0 0 1 0 0 0 1
Tr_velo_to_cam: 0 -1 0 0 0 0 -1 0 1 0 0 0
"""


def test_parse_calibration(tmp_path):
    p = tmp_path / "calib.txt"
    p.write_text(CALIB)
    cam = parse_calibration(p, image_size=(100, 80))
    assert (cam.f_u, cam.f_v, cam.c_u, cam.c_v) == (100, 100, 50, 40)
    assert cam.shape == (80, 100)
    assert parse_calibration(p).shape == (375, 1242)


def test_calibration_errors(tmp_path):
    p = tmp_path / "calib.txt"
    p.write_text(CALIB)
    with pytest.raises(FormatError, match="P3"):
        parse_calibration(p, key="P3")
    p.write_text("P0: 1 0 0\nP2: 100 0 5O 0 0 100 40 0 0 0 1 0\n")
    with pytest.raises(FormatError, match=":2:"):
        parse_calibration(p)


def test_extrinsic_velo_axes(tmp_path):
    p = tmp_path / "calib.txt"
    p.write_text(CALIB)
    E = parse_extrinsic(p)
    # LiDAR x forward, y left, z up -> camera z forward, x right, y down
    out = transform_sweep(LidarSweep([[10, 2, 1, 0.5]]), E)
    np.testing.assert_allclose(out.points, [[-2, -1, 10, 0.5]])
    p.write_text("P2: 1 0 0 0 0 1 0 0 0 0 1 0\n")
    np.testing.assert_array_equal(parse_extrinsic(p), np.eye(4)[:3])


def test_lidar_to_depth_rules(cam100):
    s = LidarSweep([[0, 0, 5, 0], [0, 0, 3, 0], [0, 0, -1, 0], [1, 0, 5, 0], [100, 0, 1, 0]])
    d = lidar_to_depth(s, cam100)
    assert d.values[40, 50] == 3.0
    assert d.values[40, 70] == 5.0
    assert d.valid.sum() == 2


def test_lidar_to_depth_inverse_pair(cam100, rng):
    n = 2000
    z = rng.uniform(2, 60, n)
    u = rng.uniform(-0.49, 99.49, n)
    v = rng.uniform(-0.49, 79.49, n)
    pts = np.column_stack([(u - 50) * z / 100, (v - 40) * z / 100, z])
    sweep = LidarSweep(np.column_stack([pts, np.zeros(n)]))
    d = lidar_to_depth(sweep, cam100)
    cloud = depth_to_points(d, cam100)
    # match each pixel back to the float32 point that won it
    p32 = sweep.xyz.astype(np.float64)
    pu = np.floor(100 * p32[:, 0] / p32[:, 2] + 50 + 0.5).astype(int)
    pv = np.floor(100 * p32[:, 1] / p32[:, 2] + 40 + 0.5).astype(int)
    for (x, y, zz), (cu, cv) in zip(cloud.points, cloud.source):
        cand = p32[(pu == cu) & (pv == cv)]
        src = cand[np.argmin(cand[:, 2])]
        assert abs(x - src[0]) <= src[2] * 0.5 / 100 + 1e-12
        assert abs(y - src[1]) <= src[2] * 0.5 / 100 + 1e-12
        assert zz == src[2]
