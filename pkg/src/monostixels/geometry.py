"""Planes, stixel homographies and back-projection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CameraRig, FrameMotion, StixelType


class GeometryError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class StixelPlane:
    """Plane ``normal @ X = 1 / inv_dist`` in current camera coordinates."""
    normal: np.ndarray
    inv_dist: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float).reshape(3)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise GeometryError("plane normal must be unit length")
        if not self.inv_dist >= 0:
            raise GeometryError("inverse plane distance must be >= 0")
        object.__setattr__(self, "normal", n)


def pixel_ray(rig: CameraRig, u, v) -> np.ndarray:
    """K^-1 [u, v, 1]; broadcasts over array-valued u, v (result shape (..., 3))."""
    u, v = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
    x = np.stack([u, v, np.ones_like(u)], axis=-1)
    return x @ rig.K_inv.T


def stixel_normal(stype, u_center, rig: CameraRig) -> np.ndarray:
    stype = StixelType(stype)
    if stype == StixelType.SKY:
        raise GeometryError("sky stixels have no plane normal")
    down = rig.down
    if stype == StixelType.GROUND:
        return down.copy()
    ray = pixel_ray(rig, u_center, rig.K[1, 2])
    horiz = ray - (ray @ down) * down
    norm = np.linalg.norm(horiz)
    if norm < 1e-12:
        raise GeometryError("degenerate normal")
    return horiz / norm


def make_homography(rig: CameraRig, motion: FrameMotion, plane: StixelPlane,
                    t_tilde=None) -> np.ndarray:
    """K (R_cam - q n^T) K^-1.

    Static planes use ``q = p * t_cam``. When ``t_tilde`` is given the plane
    belongs to a dynamic stixel and ``q = ground_axes @ t_tilde`` (the scaled
    camera-minus-stixel translation on the ground plane), so ``p`` drops out.
    """
    if t_tilde is None:
        q = plane.inv_dist * motion.t_cam
    else:
        q = rig.ground_axes @ np.asarray(t_tilde, dtype=float)
    H = rig.K @ (motion.R_cam - np.outer(q, plane.normal)) @ rig.K_inv
    if not np.all(np.isfinite(H)):
        raise GeometryError("non-finite homography")
    return H


def sky_homography(rig: CameraRig, motion: FrameMotion) -> np.ndarray:
    return rig.K @ motion.R_cam @ rig.K_inv


def apply_homography(H, x) -> np.ndarray:
    """Dehomogenised ``H [x, 1]`` for points of shape (..., 2). No zero check."""
    x = np.asarray(x, dtype=float)
    xh = np.concatenate([x, np.ones(x.shape[:-1] + (1,))], axis=-1) @ np.asarray(H).T
    return xh[..., :2] / xh[..., 2:3]


def expected_flow(H, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    xh = np.asarray(H) @ np.array([x[0], x[1], 1.0])
    if abs(xh[2]) < 1e-12:
        raise GeometryError("point at infinity under H")
    return xh[:2] / xh[2] - x


def backproject_on_plane(x, plane: StixelPlane, rig: CameraRig) -> np.ndarray:
    if plane.inv_dist <= 0:
        raise GeometryError("cannot back-project onto a plane at infinity")
    ray = pixel_ray(rig, x[0], x[1])
    denom = plane.normal @ ray
    if abs(denom) < 1e-12:
        raise GeometryError("ray parallel to plane")
    if denom < 0:
        raise GeometryError("plane lies behind the camera along this ray")
    return ray * (1.0 / plane.inv_dist) / denom


def height_above_ground(X, ground_height, down=(0.0, 1.0, 0.0)) -> float:
    """Positive above the reference ground, negative below it."""
    return float(ground_height - np.dot(down, X))
