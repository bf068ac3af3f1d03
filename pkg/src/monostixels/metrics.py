"""Depth metrics, stixel depth rendering and the two-view triangulation baseline."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .core import CameraRig, FrameMotion, StixelType
from .geometry import pixel_ray, stixel_normal

THRESHOLDS = (1.1, 1.25, 1.25 ** 2, 1.25 ** 3)


@dataclass(frozen=True)
class DepthStats:
    n_gt: int                   # pixels with valid ground truth
    n_valid: int                # ... that also have a valid prediction
    rmse: float
    rel_error: float
    thresholds: tuple           # fraction of n_gt with max(y/y*, y*/y) < thr
    invalid_fraction: float


@dataclass(frozen=True)
class DepthReport:
    overall: DepthStats
    static: Optional[DepthStats] = None
    moving: Optional[DepthStats] = None
    compactness: Optional[int] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["threshold_values"] = list(THRESHOLDS)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _valid(x):
    return np.isfinite(x) & (x > 0)


def depth_stats(pred, gt, mask=None) -> DepthStats:
    """Metrics over pixels with valid ground truth (inside ``mask`` if given).

    Invalid predictions count as threshold failures and are left out of RMSE
    and relative error. Raises if no pixel has both a valid ground truth and
    a valid prediction.
    """
    pred, gt = np.asarray(pred, float), np.asarray(gt, float)
    if pred.shape != gt.shape:
        raise ValueError("prediction and ground truth differ in shape")
    sel = _valid(gt) if mask is None else _valid(gt) & np.asarray(mask, bool)
    y_star = gt[sel]
    y = pred[sel]
    ok = _valid(y)
    if not np.any(ok):
        raise ValueError("no pixel with valid ground truth and prediction")
    err = y[ok] - y_star[ok]
    ratio = np.zeros(y.shape)
    ratio[ok] = np.maximum(y[ok] / y_star[ok], y_star[ok] / y[ok])
    thr = tuple(float(np.mean(ok & (ratio < t))) for t in THRESHOLDS)
    return DepthStats(n_gt=int(y.size), n_valid=int(ok.sum()),
                      rmse=float(np.sqrt(np.mean(err * err))),
                      rel_error=float(np.mean(np.abs(err) / y_star[ok])),
                      thresholds=thr, invalid_fraction=float(1.0 - ok.mean()))


def _split(pred, gt, mask):
    n_gt = int(np.sum(_valid(gt) & mask))
    if n_gt == 0:
        return None
    try:
        return depth_stats(pred, gt, mask)
    except ValueError:
        # every prediction in the split is invalid
        return DepthStats(n_gt, 0, float("nan"), float("nan"), (0.0,) * len(THRESHOLDS), 1.0)


def evaluate(pred, gt, moving=None, compactness: Optional[int] = None) -> DepthReport:
    """Overall metrics plus static / moving splits when a moving mask is given."""
    overall = depth_stats(pred, gt)
    if moving is None:
        return DepthReport(overall, compactness=compactness)
    moving = np.asarray(moving, bool)
    if moving.shape != np.shape(gt):
        raise ValueError("mask and depth maps differ in shape")
    return DepthReport(overall, _split(pred, gt, ~moving), _split(pred, gt, moving),
                       compactness)


def compactness(columns) -> int:
    """Three values (segmentation and depth) per stixel."""
    return 3 * sum(len(c.stixels) for c in columns)


def dense_compactness(width: int, height: int) -> int:
    """One depth value per pixel."""
    return int(width) * int(height)


def stixel_depth_map(columns, rig: CameraRig) -> np.ndarray:
    """Per-pixel z-depth of the stixel planes; +inf on sky, NaN outside any column."""
    h, w = rig.height, rig.width
    depth = np.full((h, w), np.nan)
    ws = rig.stixel_width
    for col in columns:
        c = col.column_index
        u = np.arange(c * ws, (c + 1) * ws, dtype=float)
        for s in col.stixels:
            rows = slice(s.v_top, s.v_bottom + 1)
            if s.stype == StixelType.SKY or s.inv_depth <= 0:
                depth[rows, c * ws:(c + 1) * ws] = np.inf
                continue
            n = stixel_normal(s.stype, rig.u_center(c), rig)
            vv, uu = np.meshgrid(np.arange(s.v_top, s.v_bottom + 1, dtype=float), u,
                                 indexing="ij")
            y = pixel_ray(rig, uu, vv)
            ny = y @ n
            with np.errstate(divide="ignore", invalid="ignore"):
                z = np.where(ny > 0, y[..., 2] / (ny * s.inv_depth), np.inf)
            depth[rows, c * ws:(c + 1) * ws] = z
    return depth


def sfm_baseline(flow, rig: CameraRig, motion: FrameMotion) -> np.ndarray:
    """Midpoint triangulation of every pixel with its flow partner.

    The current camera sits at the origin. Under ``X_prev = R X - t`` the
    previous camera centre is ``R^T t`` and its rays are ``R^T K^-1 x_prev``.
    Returns z-depth with NaN where the result is non-positive, non-finite or
    the two rays are parallel.
    """
    flow = np.asarray(flow, float)
    h, w = flow.shape[:2]
    if np.linalg.norm(motion.t_cam) <= 1e-12:
        raise ValueError("triangulation undefined")
    v, u = np.mgrid[0:h, 0:w].astype(float)
    d1 = pixel_ray(rig, u, v)
    d0 = pixel_ray(rig, u + flow[..., 0], v + flow[..., 1]) @ motion.R_cam   # R^T applied
    c0 = motion.R_cam.T @ motion.t_cam
    # least squares for s1 d1 - s0 d0 = c0
    a11 = np.sum(d1 * d1, -1)
    a22 = np.sum(d0 * d0, -1)
    a12 = -np.sum(d1 * d0, -1)
    b1 = d1 @ c0
    b2 = -(d0 @ c0)
    det = a11 * a22 - a12 * a12
    ok = det > 1e-12 * a11 * a22
    det = np.where(ok, det, 1.0)
    s1 = (a22 * b1 - a12 * b2) / det
    s0 = (a11 * b2 - a12 * b1) / det
    mid = 0.5 * (s1[..., None] * d1 + (c0 + s0[..., None] * d0))
    z = mid[..., 2]
    with np.errstate(invalid="ignore"):
        good = ok & np.isfinite(z) & (z > 0)
    return np.where(good, z, np.nan)
