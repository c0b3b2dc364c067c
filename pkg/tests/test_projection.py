import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pseudolidar_cor import (CameraModel, DepthImage, ProvenancedCloud, backprop_to_depth, depth_to_points,
                             points_to_spherical, spherical_to_points)
from pseudolidar_cor.harness.gradcheck import finite_diff_check
from pseudolidar_cor.harness.reference import reference_depth_grad
from pseudolidar_cor.projection import depth_jacobian


@pytest.fixture
def cam_sq():
    return CameraModel(100.0, 100.0, 50.0, 50.0, 100, 100)


def test_forward_substitution(cam_sq):
    vals = np.zeros((100, 100))
    vals[40, 60] = 10.0
    c = depth_to_points(DepthImage(vals), cam_sq)
    np.testing.assert_array_equal(c.points, [[1.0, -1.0, 10.0]])
    assert c.source.tolist() == [[60, 40]]


def test_principal_point_on_axis(cam_sq):
    vals = np.zeros((100, 100))
    vals[50, 50] = 7.25
    np.testing.assert_array_equal(depth_to_points(DepthImage(vals), cam_sq).points, [[0, 0, 7.25]])


def test_one_point_per_valid_pixel(rng):
    cam = CameraModel(5.0, 5.0, 1.5, 1.5, 4, 4)
    vals = np.zeros((4, 4))
    vals[[0, 1, 2, 3], [3, 0, 2, 1]] = [1, 2, 3, 4]
    c = depth_to_points(DepthImage(vals), cam)
    assert len(c) == 4
    # row-major order, provenance recorded
    assert c.source.tolist() == [[3, 0], [0, 1], [2, 2], [1, 3]]
    np.testing.assert_array_equal(c.points[:, 2], [1, 2, 3, 4])


def test_no_valid_pixels(cam_sq):
    with pytest.raises(ValueError):
        depth_to_points(DepthImage(np.zeros((100, 100))), cam_sq)


def test_exact_reconstruction_of_known_cloud(rng):
    cam = CameraModel(721.5377, 721.5377, 609.5593, 172.854, 1242, 375)
    H, W = cam.shape
    z = rng.uniform(1, 80, (H, W))
    c = depth_to_points(DepthImage(z), cam)
    v, u = np.mgrid[0:H, 0:W]
    expect = np.stack([(u - cam.c_u) * z / cam.f_u, (v - cam.c_v) * z / cam.f_v, z], -1).reshape(-1, 3)
    np.testing.assert_array_equal(c.points, expect)


def test_backprop_passthrough_and_jacobian(cam_sq):
    vals = np.zeros((100, 100))
    vals[7, 60] = 3.0
    c = depth_to_points(DepthImage(vals), cam_sq)
    assert backprop_to_depth(c, [[0, 0, 1]], cam_sq)[7, 60] == 1.0
    assert backprop_to_depth(c, [[1, 0, 0]], cam_sq)[7, 60] == pytest.approx(0.1, abs=0)
    with pytest.raises(ValueError):
        backprop_to_depth(c, np.zeros((2, 3)), cam_sq)


def test_backprop_matches_loop_reference(rng):
    cam = CameraModel(30.0, 28.0, 3.5, 3.0, 8, 8)
    vals = rng.uniform(2, 5, (8, 8))
    vals[rng.random((8, 8)) < 0.2] = 0
    Z = DepthImage(vals)
    c = depth_to_points(Z, cam)
    g = rng.normal(size=(len(c), 3))
    np.testing.assert_allclose(backprop_to_depth(c, g, cam), reference_depth_grad(Z, g, cam), rtol=1e-13, atol=1e-15)


def test_backprop_accumulates_in_point_order(cam_sq):
    c = ProvenancedCloud([[0, 0, 1]] * 3, [[5, 5]] * 3, (100, 100))
    g = np.array([[0, 0, 1e16], [0, 0, 1.0], [0, 0, -1e16]])
    # sequential (1e16 + 1) - 1e16 = 0 in double; any other order differs
    assert backprop_to_depth(c, g, cam_sq)[5, 5] == ((1e16 + 1.0) - 1e16)


def test_backprop_linear(rng, cam_sq):
    vals = rng.uniform(1, 9, (100, 100))
    c = depth_to_points(DepthImage(vals), cam_sq)
    g1, g2 = rng.normal(size=(2, len(c), 3))
    a = backprop_to_depth(c, g1 + g2, cam_sq)
    b = backprop_to_depth(c, g1, cam_sq) + backprop_to_depth(c, g2, cam_sq)
    np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-13)


def test_jacobian_matches_finite_differences(rng):
    cam = CameraModel(30.0, 28.0, 3.5, 3.0, 8, 8)
    Z = DepthImage(rng.uniform(2, 5, (8, 8)))
    c = depth_to_points(Z, cam)
    J = depth_jacobian(c, cam)
    h = 1e-4
    plus = depth_to_points(Z.with_values(Z.values + h), cam).points
    minus = depth_to_points(Z.with_values(Z.values - h), cam).points
    fd = (plus - minus) / (2 * h)
    mask = np.abs(J) > 0
    assert np.max(np.abs(fd[mask] - J[mask]) / np.abs(J[mask])) <= 1e-8
    assert np.all(fd[~mask] == 0)


def test_chain_rule_gradcheck(rng):
    cam = CameraModel(30.0, 28.0, 3.5, 3.0, 8, 8)
    Z = DepthImage(rng.uniform(2, 5, (8, 8)))
    g = rng.normal(size=(64, 3))
    loss = lambda D: float(np.sum(g * depth_to_points(D, cam).points))
    grad = lambda D: backprop_to_depth(depth_to_points(D, cam), g, cam)
    rep = finite_diff_check(loss, grad, Z, h=1e-4)
    assert rep.max_rel_error <= 1e-6, rep


def test_spherical_axes():
    np.testing.assert_allclose(points_to_spherical([[0, 0, 5]]), [[5, 0, 0]])
    np.testing.assert_allclose(points_to_spherical([[5, 0, 5]]), [[5 * math.sqrt(2), 0, math.pi / 4]])
    # up (negative y) is positive elevation
    assert points_to_spherical([[0, -1, 1]])[0, 1] == pytest.approx(math.pi / 4)
    with pytest.raises(ValueError):
        points_to_spherical([[0, 0, 0]])


@settings(max_examples=200, deadline=None)
@given(st.floats(0.1, 200), st.floats(-1.5, 1.5), st.floats(-3.0, 3.0))
def test_spherical_roundtrip(r, theta, phi):
    back = points_to_spherical(spherical_to_points([[r, theta, phi]]))[0]
    np.testing.assert_allclose(back, [r, theta, phi], rtol=1e-12, atol=1e-12)
