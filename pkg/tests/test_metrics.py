import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from monostixels.core import (CameraRig, FrameMotion, SemanticClass, Stixel, StixelColumn,
                              StixelType)
from monostixels.metrics import (THRESHOLDS, compactness, dense_compactness, depth_stats,
                                 evaluate, sfm_baseline, stixel_depth_map)
from monostixels.synthworld import oncoming_scene, render, standard_scene


def test_identity():
    gt = np.linspace(2, 50, 30).reshape(5, 6)
    s = depth_stats(gt, gt)
    assert (s.rmse, s.rel_error, s.thresholds) == (0.0, 0.0, (1.0, 1.0, 1.0, 1.0))


def test_uniform_scale():
    gt = np.linspace(2, 50, 30).reshape(5, 6)
    s = depth_stats(1.2 * gt, gt)
    assert s.rel_error == pytest.approx(0.2)
    assert s.thresholds[0] == 0.0 and s.thresholds[1] == 1.0


def test_two_pixels():
    s = depth_stats(np.array([11.0, 18.0]), np.array([10.0, 20.0]))
    assert s.rmse == pytest.approx(np.sqrt(2.5)) and round(s.rmse, 3) == 1.581
    assert s.rel_error == pytest.approx(0.1)


def test_invalid_predictions_fail_thresholds():
    gt = np.array([10.0, 10.0, 10.0, np.nan])
    pred = np.array([10.0, np.nan, -1.0, 5.0])
    s = depth_stats(pred, gt)
    assert s.n_gt == 3 and s.n_valid == 1
    assert s.thresholds == pytest.approx((1 / 3,) * 4)
    assert s.invalid_fraction == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        depth_stats(np.full(3, np.nan), np.ones(3))


def test_report_splits_and_json():
    gt = np.full((2, 2), 10.0)
    pred = np.array([[10.0, 12.0], [10.0, 10.0]])
    moving = np.array([[False, True], [False, False]])
    rep = evaluate(pred, gt, moving, compactness=9)
    assert rep.moving.rel_error == pytest.approx(0.2)
    assert rep.static.rel_error == 0.0
    d = json.loads(rep.to_json())
    assert d["compactness"] == 9 and d["threshold_values"] == list(THRESHOLDS)
    assert evaluate(pred, gt, np.zeros((2, 2), bool)).moving is None


def _sky_col(c, n):
    return StixelColumn(c, tuple(Stixel(c, 2 * (n - i) - 1, 2 * (n - i) - 2, StixelType.SKY,
                                        SemanticClass.SKY, 0.0) for i in range(n)))


def test_compactness():
    assert compactness([_sky_col(0, 50), _sky_col(1, 50)]) == 300
    assert dense_compactness(1242, 375) == 465750
    assert compactness([]) == 0


def test_stixel_depth_map():
    rig = CameraRig.simple(100.0, 1.0, 5.0, 3, 10, stixel_width=3)
    col = StixelColumn(0, (
        Stixel(0, 9, 6, StixelType.GROUND, SemanticClass.ROAD, 1 / 1.65),
        Stixel(0, 5, 3, StixelType.STATIC_OBJECT, SemanticClass.BUILDING, 0.1),
        Stixel(0, 2, 0, StixelType.SKY, SemanticClass.SKY, 0.0)))
    d = stixel_depth_map([col], rig)
    assert np.all(np.isinf(d[:3]))
    assert np.allclose(d[3:6, 1], 10.0)
    # ground at row 9: y = 4 / 100 per unit depth, so z = 1.65 / 0.04
    assert d[9, 1] == pytest.approx(1.65 / 0.04)


def test_sfm_exact_on_static_scene():
    sc = standard_scene(height=64, width=128, oncoming_speed=0.0)
    r = render(sc)
    z = sfm_baseline(r.flow, sc.rig, sc.motion)
    v, u = np.mgrid[0:64, 0:128]
    far = np.hypot(u - sc.rig.K[0, 2], v - sc.rig.K[1, 2]) > 3
    sel = far & np.isfinite(r.depth)
    assert sel.sum() > 1000
    assert np.all(np.abs(z[sel] - r.depth[sel]) <= 1e-6 * r.depth[sel])


def test_sfm_fails_on_oncoming_object():
    sc = oncoming_scene(height=64, width=128)
    r = render(sc)
    z = sfm_baseline(r.flow, sc.rig, sc.motion)[r.moving]
    gt = r.depth[r.moving]
    with np.errstate(invalid="ignore"):
        bad = ~np.isfinite(z) | (np.abs(z - gt) > 0.5 * gt)
    assert r.moving.sum() > 50 and np.all(bad)


def test_sfm_epipole_and_zero_baseline():
    rig = CameraRig.simple(100.0, 20.0, 10.0, 41, 21)
    z = sfm_baseline(np.zeros((21, 41, 2)), rig, FrameMotion.forward(1.0))
    assert np.isnan(z[10, 20])
    with pytest.raises(ValueError, match="triangulation undefined"):
        sfm_baseline(np.zeros((21, 41, 2)), rig, FrameMotion.forward(0.0, 0.1))


@settings(max_examples=100, deadline=None)
@given(arrays(float, 20, elements=st.floats(0.1, 100)),
       arrays(float, 20, elements=st.floats(0.1, 100)))
def test_thresholds_monotone(pred, gt):
    t = depth_stats(pred, gt).thresholds
    assert all(0 <= a <= b <= 1 for a, b in zip(t, t[1:]))
