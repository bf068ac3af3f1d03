"""Shared domain types for mono-stixel estimation.

Conventions used throughout the package:

* Image coordinates: origin top-left, ``u`` to the right, ``v`` downward,
  pixel centres at integer coordinates. "Bottom" means larger ``v``.
* Camera frame: x right, y down, z forward. For a level rig the flat ground
  is the plane ``y = cam_height``.
* Optical flow points from the current image to the previous image.
* ``FrameMotion`` maps a static point from current to previous camera
  coordinates as ``X_prev = R_cam @ X - t_cam``; for a plane with
  ``n @ X = 1/p`` this gives the homography ``K (R_cam - p t_cam n^T) K^-1``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, fields, replace

import numpy as np


class StixelType(enum.IntEnum):
    GROUND = 0
    STATIC_OBJECT = 1
    DYNAMIC_OBJECT = 2
    SKY = 3


class SemanticClass(enum.IntEnum):
    ROAD = 0
    SIDEWALK = 1
    TERRAIN = 2
    BUILDING = 3
    POLES_SIGNAGE = 4
    VEGETATION = 5
    VEHICLE = 6
    TWO_WHEELER = 7
    PERSON = 8
    SKY = 9


NUM_CLASSES = len(SemanticClass)

# canonical lowercase names, used by every file format
CLASS_NAMES = [c.name.lower() for c in SemanticClass]
TYPE_NAMES = ["ground", "static_object", "dynamic_object", "sky"]

_CLASS_TYPE = {
    SemanticClass.ROAD: StixelType.GROUND,
    SemanticClass.SIDEWALK: StixelType.GROUND,
    SemanticClass.TERRAIN: StixelType.GROUND,
    SemanticClass.BUILDING: StixelType.STATIC_OBJECT,
    SemanticClass.POLES_SIGNAGE: StixelType.STATIC_OBJECT,
    SemanticClass.VEGETATION: StixelType.STATIC_OBJECT,
    SemanticClass.VEHICLE: StixelType.DYNAMIC_OBJECT,
    SemanticClass.TWO_WHEELER: StixelType.DYNAMIC_OBJECT,
    SemanticClass.PERSON: StixelType.DYNAMIC_OBJECT,
    SemanticClass.SKY: StixelType.SKY,
}


def class_to_type(c) -> StixelType:
    return _CLASS_TYPE[SemanticClass(c)]


def classes_of_type(stype) -> list:
    """Classes of ``stype`` in listing order (this order breaks ties)."""
    stype = StixelType(stype)
    return [c for c in SemanticClass if _CLASS_TYPE[c] == stype]


OBJECT_TYPES = (StixelType.STATIC_OBJECT, StixelType.DYNAMIC_OBJECT)


@dataclass(frozen=True)
class Stixel:
    column_index: int
    v_bottom: int
    v_top: int
    stype: StixelType
    sclass: SemanticClass
    inv_depth: float
    t_tilde: tuple = (0.0, 0.0)

    @property
    def n_rows(self) -> int:
        return self.v_bottom - self.v_top + 1


@dataclass(frozen=True)
class StixelColumn:
    column_index: int
    stixels: tuple
    energy: float = float("nan")

    def __len__(self):
        return len(self.stixels)


def _stixel_ok(s: Stixel, h: int) -> bool:
    if not (0 <= s.v_top <= s.v_bottom <= h - 1):
        return False
    try:
        if class_to_type(s.sclass) != s.stype:
            return False
    except (ValueError, KeyError):
        return False
    p = s.inv_depth
    if not np.isfinite(p):
        return False
    if s.stype == StixelType.SKY:
        if p != 0.0:
            return False
    elif p <= 0.0:
        return False
    tt = np.asarray(s.t_tilde, dtype=float)
    if tt.shape != (2,) or not np.all(np.isfinite(tt)):
        return False
    if s.stype != StixelType.DYNAMIC_OBJECT and np.any(tt != 0.0):
        return False
    return True


def validate_column(col: StixelColumn, h: int) -> bool:
    """True iff the stixels tile rows ``h-1 .. 0`` bottom-to-top and each is consistent."""
    st = col.stixels
    if not 1 <= len(st) <= h:
        return False
    if st[0].v_bottom != h - 1 or st[-1].v_top != 0:
        return False
    for lower, upper in zip(st[:-1], st[1:]):
        if lower.v_top != upper.v_bottom + 1:
            return False
    return all(_stixel_ok(s, h) and s.column_index == col.column_index for s in st)


def _is_rotation(R, tol=1e-6) -> bool:
    R = np.asarray(R, dtype=float)
    return (R.shape == (3, 3) and np.allclose(R @ R.T, np.eye(3), atol=tol)
            and abs(np.linalg.det(R) - 1.0) < tol)


@dataclass(frozen=True, eq=False)
class CameraRig:
    K: np.ndarray
    R_v2c: np.ndarray
    cam_height: float
    width: int
    height: int
    stixel_width: int = 5

    def __post_init__(self):
        K = np.array(self.K, dtype=float)
        R = np.array(self.R_v2c, dtype=float)
        if K.shape != (3, 3) or np.any(np.tril(K, -1) != 0) or K[0, 0] <= 0 or K[1, 1] <= 0:
            raise ValueError("K must be upper-triangular with positive focal lengths")
        if not _is_rotation(R):
            raise ValueError("R_v2c must be a proper rotation")
        if self.stixel_width < 1:
            raise ValueError("stixel_width must be >= 1")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")
        K.flags.writeable = False
        R.flags.writeable = False
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "R_v2c", R)
        object.__setattr__(self, "K_inv", np.linalg.inv(K))

    @property
    def n_columns(self) -> int:
        return self.width // self.stixel_width

    def u_center(self, column_index: int) -> float:
        return column_index * self.stixel_width + (self.stixel_width - 1) / 2.0

    @property
    def down(self) -> np.ndarray:
        """Unit vector pointing towards the ground, in camera coordinates."""
        return self.R_v2c @ np.array([0.0, 1.0, 0.0])

    @property
    def ground_axes(self) -> np.ndarray:
        """3x2 matrix whose columns span the ground plane (lateral, longitudinal)."""
        return self.R_v2c @ np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])

    def with_size(self, width, height, stixel_width=None) -> "CameraRig":
        return replace(self, width=int(width), height=int(height),
                       stixel_width=int(stixel_width or self.stixel_width))

    def to_dict(self) -> dict:
        return {"K": self.K.tolist(), "R_v2c": self.R_v2c.tolist(),
                "cam_height": float(self.cam_height), "width": int(self.width),
                "height": int(self.height), "stixel_width": int(self.stixel_width)}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraRig":
        return cls(K=np.array(d["K"], dtype=float),
                   R_v2c=np.array(d.get("R_v2c", np.eye(3).tolist()), dtype=float),
                   cam_height=float(d["cam_height"]), width=int(d["width"]),
                   height=int(d["height"]), stixel_width=int(d.get("stixel_width", 5)))

    @classmethod
    def simple(cls, f, cx, cy, width, height, cam_height=1.65, stixel_width=5):
        K = np.array([[f, 0.0, cx], [0.0, f, cy], [0.0, 0.0, 1.0]])
        return cls(K=K, R_v2c=np.eye(3), cam_height=cam_height, width=width,
                   height=height, stixel_width=stixel_width)


@dataclass(frozen=True, eq=False)
class FrameMotion:
    R_cam: np.ndarray
    t_cam: np.ndarray

    def __post_init__(self):
        R = np.array(self.R_cam, dtype=float)
        t = np.array(self.t_cam, dtype=float).reshape(3)
        if not _is_rotation(R):
            raise ValueError("R_cam must be a proper rotation")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "R_cam", R)
        object.__setattr__(self, "t_cam", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def forward(cls, distance, yaw=0.0):
        """Vehicle drove ``distance`` metres forward and turned left by ``yaw`` rad
        between the previous and the current frame (identity rig)."""
        c, s = np.cos(yaw), np.sin(yaw)
        R = np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])
        return cls(R, np.array([0.0, 0.0, -float(distance)]))

    def to_dict(self) -> dict:
        return {"R": self.R_cam.tolist(), "t": self.t_cam.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FrameMotion":
        return cls(np.array(d["R"], dtype=float), np.array(d["t"], dtype=float))


@dataclass(frozen=True, eq=False)
class ColumnObservation:
    """Row-wise aggregated measurements of one stixel column (index = row v)."""
    flow: np.ndarray       # (h, 2)
    flow_var: np.ndarray   # (h,)
    scores: np.ndarray     # (h, NUM_CLASSES)
    u_center: float
    # horizontal offsets (from u_center) of the pixels averaged into each row
    u_offsets: tuple = (0.0,)

    def __post_init__(self):
        flow = np.asarray(self.flow, dtype=float)
        var = np.asarray(self.flow_var, dtype=float)
        scores = np.asarray(self.scores, dtype=float)
        h = flow.shape[0]
        if flow.shape != (h, 2) or var.shape != (h,) or scores.shape != (h, NUM_CLASSES):
            raise ValueError("observation arrays have inconsistent shapes")
        if np.any(~(var > 0)):
            raise ValueError("flow variance must be positive")
        if np.any(scores < 0) or np.any(scores > 1) or np.any(np.abs(scores.sum(1) - 1) > 1e-4):
            raise ValueError("scores must be pseudo-probabilities summing to 1")
        for name, arr in (("flow", flow), ("flow_var", var), ("scores", scores)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "u_offsets", tuple(float(o) for o in self.u_offsets))

    @property
    def h(self) -> int:
        return self.flow.shape[0]

    def footprint(self, rows) -> np.ndarray:
        """Pixel positions averaged into ``rows``: shape (len(rows), n_offsets, 2)."""
        rows = np.asarray(rows, dtype=float)
        u = self.u_center + np.asarray(self.u_offsets)
        return np.stack(np.broadcast_arrays(u[None, :], rows[:, None]), axis=-1)


def bottom_edge(v_bottom) -> float:
    """Image row of the lower edge of a stixel, where it meets what lies below."""
    return v_bottom + 0.5


@dataclass(frozen=True)
class EnergyParams:
    beta_mc: float = 4.0
    alpha_grav_neg: float = 6.0
    beta_grav_neg: float = -2.0
    alpha_grav_pos: float = 6.0
    beta_grav_pos: float = 2.0
    alpha_ord: float = 4.0
    beta_ord: float = 0.2
    alpha_flat: float = 1.0
    beta_flat: float = 2.0
    delta_L: float = 1.0
    delta_F: float = 1.0
    alpha_L: float = 8.0
    alpha_F: float = 16.0
    mlesac_max_samples: int = 20
    min_inv_depth: float = 1.0 / 200.0
    max_inv_depth: float = 1.0 / 1.5

    def __post_init__(self):
        # beta_grav_neg is negative by design: it multiplies a negative height
        nonneg = ["beta_mc", "alpha_grav_neg", "alpha_grav_pos", "beta_grav_pos",
                  "alpha_ord", "beta_ord", "alpha_flat", "beta_flat", "delta_L",
                  "delta_F", "alpha_L", "alpha_F"]
        for name in nonneg:
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.delta_L + self.delta_F <= 0:
            raise ValueError("delta_L + delta_F must be positive")
        if int(self.mlesac_max_samples) < 1:
            raise ValueError("mlesac_max_samples must be >= 1")
        if not 0 < self.min_inv_depth < self.max_inv_depth:
            raise ValueError("need 0 < min_inv_depth < max_inv_depth")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "EnergyParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown energy parameters: {sorted(unknown)}")
        kw = dict(d)
        if "mlesac_max_samples" in kw:
            kw["mlesac_max_samples"] = int(kw["mlesac_max_samples"])
        return cls(**kw)
