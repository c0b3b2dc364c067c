import numpy as np
import pytest

from pseudolidar_cor import DepthImage, GridSpec, OccupancyTensor
from pseudolidar_cor.harness.gradcheck import finite_diff_check
from pseudolidar_cor.harness.scenes import demo_scene
from pseudolidar_cor.losses import (GradStats, LossWeights, depth_loss, gradient_stats, point_match_loss,
                                    smooth_l1, stats_csv, surrogate_det_loss, total_loss)
from pseudolidar_cor.pipeline import joint_quantized

G = GridSpec((0, 0, 0), (1, 1, 1), (2, 2, 2))


def test_smooth_l1_values():
    assert smooth_l1(0.5) == (0.125, 0.5)
    assert smooth_l1(-2.0) == (1.5, -1.0)
    v, d = smooth_l1(1.0)
    assert v == 0.5 and d == 1.0
    assert smooth_l1(0.9999999)[0] == pytest.approx(0.5, abs=1e-6)


def test_smooth_l1_c1(rng):
    x = rng.uniform(-5, 5, 10000)
    _, d = smooth_l1(x)
    assert np.all(np.abs(d) <= 1)
    eps = 1e-9
    for knee in (-1.0, 1.0):
        lo, hi = smooth_l1(np.array([knee - eps, knee + eps]))
        assert abs(lo[1] - lo[0]) < 1e-8 and abs(hi[1] - hi[0]) < 1e-8


def test_depth_loss_two_pixels():
    L, g = depth_loss(DepthImage([[2.0, 4.0]]), DepthImage([[2.5, 6.0]]))
    assert L == 0.8125
    np.testing.assert_array_equal(g, [[-0.25, -0.5]])


def test_depth_loss_identity_and_empty():
    Z = DepthImage([[1.0, 2.0]])
    L, g = depth_loss(Z, Z.copy())
    assert L == 0 and not g.any()
    with pytest.raises(ValueError):
        depth_loss(Z, DepthImage(np.zeros((1, 2))))
    with pytest.raises(ValueError):
        depth_loss(Z, DepthImage(np.ones((2, 2))))


def test_depth_loss_only_on_shared_pixels(rng):
    Z = DepthImage(rng.uniform(1, 10, (6, 7)))
    star = rng.uniform(1, 10, (6, 7))
    star[rng.random((6, 7)) < 0.5] = 0
    L, g = depth_loss(Z, DepthImage(star))
    assert np.all(g[star == 0] == 0)
    assert np.count_nonzero(g) == np.count_nonzero(star)


def test_depth_loss_gradcheck(rng):
    Zs = DepthImage(rng.uniform(2, 8, (8, 8)))
    Z = DepthImage(Zs.values + rng.uniform(-3, 3, (8, 8)))
    rep = finite_diff_check(lambda D: depth_loss(D, Zs)[0], lambda D: depth_loss(D, Zs)[1], Z, h=1e-4)
    assert rep.max_rel_error <= 1e-7, rep


def test_surrogate_examples():
    m = OccupancyTensor.from_dict(G, {(1, 0, 1): 1.0})
    empty = OccupancyTensor(G)
    L, g = surrogate_det_loss(m, m)
    assert L == 0 and len(g) == 0
    L, g = surrogate_det_loss(m, empty)
    assert L == 0.5 and g.to_dict() == {(1, 0, 1): 1.0}
    L, g = surrogate_det_loss(empty, m)
    assert L == 0.5 and g.to_dict() == {(1, 0, 1): -1.0}
    with pytest.raises(ValueError):
        surrogate_det_loss(m, OccupancyTensor(G.replace(sigma_sq=0.5)))


def test_surrogate_gradient_exact(rng):
    keys = np.arange(8)
    pred = OccupancyTensor(G, keys, rng.uniform(0, 2, 8))
    tgt = OccupancyTensor(G, keys[::2], np.ones(4))
    L, g = surrogate_det_loss(pred, tgt)
    h = 1e-6
    for i in range(8):
        vp, vm = pred.values.copy(), pred.values.copy()
        vp[i] += h
        vm[i] -= h
        fd = (surrogate_det_loss(OccupancyTensor(G, keys, vp), tgt)[0]
              - surrogate_det_loss(OccupancyTensor(G, keys, vm), tgt)[0]) / (2 * h)
        assert fd == pytest.approx(g[i], rel=1e-8)


def test_point_match():
    L, g = point_match_loss([[1, 2, 3]], [[1, 0, 3]])
    assert L == 2.0 and g.tolist() == [[0, 2, 0]]


def test_total_loss_weights():
    w = LossWeights.point_detector()
    assert (w.lambda_depth, w.lambda_det) == (1.0, 0.01)
    assert total_loss(10.0, 0.1, w) == pytest.approx(0.2, abs=1e-15)
    w = LossWeights.voxel_detector()
    assert (w.lambda_depth, w.lambda_det) == (1.0, 0.1)
    assert total_loss(3.0, 4.0, LossWeights(0, 0)) == 0
    with pytest.raises(ValueError):
        LossWeights(-1, 0)


def test_doubling_lambda_det_doubles_det_component():
    setup = demo_scene()
    sc = setup.scene
    a = joint_quantized(sc.Z0, sc.cam, setup.grid, setup.target, sc.Zstar, LossWeights(1.0, 0.1))
    b = joint_quantized(sc.Z0, sc.cam, setup.grid, setup.target, sc.Zstar, LossWeights(1.0, 0.2))
    np.testing.assert_array_equal(b.grad - b.depth_grad, 2 * (a.grad - a.depth_grad))
    np.testing.assert_array_equal(0.2 * b.det_grad, 2 * (0.1 * a.det_grad))


def test_gradient_stats():
    g = np.zeros((10, 10))
    g.flat[[3, 50, 99]] = [0.1, -0.1, 0.1]
    st = gradient_stats(g)
    assert st.ratio == 0.03 and st.mean == pytest.approx(0.1) and st.sum == pytest.approx(0.3)
    assert gradient_stats(np.zeros((4, 4))) == GradStats(0.0, 0.0, 0.0)


def test_gradient_stats_self_consistent(rng):
    g = rng.normal(size=(30, 40)) * (rng.random((30, 40)) < 0.2)
    st = gradient_stats(g)
    assert st.mean * st.ratio * g.size == pytest.approx(st.sum, rel=1e-12)


def test_stats_csv():
    text = stats_csv({"depth": GradStats(0.5, 0.25, 1.0), "quantized": GradStats(0.75, 1e-5, 2e-3)})
    assert text.splitlines() == ["loss_name,ratio,mean,sum", "depth,0.5,0.25,1.0", "quantized,0.75,1e-05,0.002"]
