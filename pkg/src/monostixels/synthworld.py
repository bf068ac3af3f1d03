"""Synthetic street scenes with exact ground truth.

A scene is a flat ground plane, upright billboard objects standing on it and
sky everywhere else. Inside each stixel column an object is the plane facing
the camera centre at the object's distance, which is exactly the estimator's
model class, so estimation error is separated from model error.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (CameraRig, FrameMotion, NUM_CLASSES, SemanticClass, Stixel,
                   StixelColumn, StixelType, class_to_type)
from .geometry import pixel_ray, stixel_normal

SKY_ID, GROUND_ID = 0, 1


@dataclass(frozen=True)
class SceneObject:
    columns: tuple                  # [first, last) stixel columns covered
    distance: float                 # metres along the plane normal
    height: float                   # metres above ground
    sclass: SemanticClass = SemanticClass.BUILDING
    velocity: tuple = (0.0, 0.0)    # (lateral, longitudinal) metres per frame

    @property
    def moving(self) -> bool:
        return bool(np.any(np.asarray(self.velocity) != 0.0))


@dataclass(frozen=True, eq=False)
class SceneSpec:
    rig: CameraRig
    motion: FrameMotion
    ground_height: float = 1.65
    objects: tuple = ()
    flow_sigma: float = 0.0
    outlier_fraction: float = 0.0
    confusion: float = 0.0
    ground_class: SemanticClass = SemanticClass.ROAD
    # move each object column's plane so its ground contact lies on a pixel edge
    snap_contacts: bool = False

    def __post_init__(self):
        if not 0 <= self.outlier_fraction < 1 or not 0 <= self.confusion < 1:
            raise ValueError("outlier fraction and confusion must lie in [0, 1)")
        if self.flow_sigma < 0 or self.ground_height <= 0:
            raise ValueError("invalid noise or ground height")
        for ob in self.objects:
            if not 1.5 < ob.distance < 200 or ob.height <= 0:
                raise ValueError("object distance must be in (1.5, 200) m and height > 0")
            if class_to_type(ob.sclass) not in (StixelType.STATIC_OBJECT,
                                                StixelType.DYNAMIC_OBJECT):
                raise ValueError("objects must carry an object class")
            if ob.moving and class_to_type(ob.sclass) != StixelType.DYNAMIC_OBJECT:
                raise ValueError("only dynamic-object classes may move")

    def to_dict(self) -> dict:
        return {
            "camera": self.rig.to_dict(),
            "motion": self.motion.to_dict(),
            "ground_height": self.ground_height,
            "objects": [{"columns": list(o.columns), "distance": o.distance,
                         "height": o.height, "class": o.sclass.name.lower(),
                         "velocity": list(o.velocity)} for o in self.objects],
            "noise": {"flow_sigma": self.flow_sigma,
                      "outlier_fraction": self.outlier_fraction,
                      "confusion": self.confusion},
            "ground_class": self.ground_class.name.lower(),
            "snap_contacts": self.snap_contacts,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        noise = d.get("noise", {})
        objs = tuple(SceneObject(tuple(o["columns"]), float(o["distance"]),
                                 float(o["height"]), SemanticClass[o["class"].upper()],
                                 tuple(o.get("velocity", (0.0, 0.0))))
                     for o in d.get("objects", []))
        return cls(rig=CameraRig.from_dict(d["camera"]),
                   motion=FrameMotion.from_dict(d["motion"]),
                   ground_height=float(d.get("ground_height", d["camera"]["cam_height"])),
                   objects=objs,
                   flow_sigma=float(noise.get("flow_sigma", 0.0)),
                   outlier_fraction=float(noise.get("outlier_fraction", 0.0)),
                   confusion=float(noise.get("confusion", 0.0)),
                   ground_class=SemanticClass[d.get("ground_class", "road").upper()],
                   snap_contacts=bool(d.get("snap_contacts", False)))


@dataclass(eq=False)
class RenderOutput:
    flow: np.ndarray            # (h, w, 2)
    var: np.ndarray             # (h, w)
    scores: np.ndarray          # (h, w, C)
    depth: np.ndarray           # (h, w), NaN on sky
    labels: np.ndarray          # (h, w) class index
    moving: np.ndarray          # (h, w) bool
    owner: np.ndarray           # (h, w) 0 sky, 1 ground, 2+k object k
    stixels: list = field(default_factory=list)


def column_distance(scene: SceneSpec, ob: SceneObject, c: int) -> float:
    """Plane distance of object ``ob`` inside stixel column ``c``.

    Without snapping this is ``ob.distance``. With snapping the contact line
    at the column centre is moved to the pixel edge ``k + 0.5`` whose contact
    factor ``(down.y) / (n.y)`` is closest to that of the nominal distance.
    """
    if not scene.snap_contacts:
        return float(ob.distance)
    rig = scene.rig
    n = stixel_normal(StixelType.STATIC_OBJECT, rig.u_center(c), rig)
    edges = np.arange(rig.height) + 0.5
    y = pixel_ray(rig, np.full(edges.shape, rig.u_center(c)), edges)
    dy, ny = y @ rig.down, y @ n
    ok = (dy > 1e-12) & (ny > 0)
    if not np.any(ok):
        return float(ob.distance)
    cf = np.where(ok, dy / np.where(ok, ny, 1.0), np.inf)
    k = int(np.argmin(np.abs(cf - scene.ground_height / ob.distance)))
    d = scene.ground_height / cf[k]
    return float(d) if 1.5 < d < 200 else float(ob.distance)


def _surface_q(scene: SceneSpec, ob: SceneObject | None, distance=None) -> np.ndarray:
    """Relative translation of a surface, pre-multiplied by its inverse distance."""
    rig, motion = scene.rig, scene.motion
    if ob is None:
        return motion.t_cam / scene.ground_height
    t_rel = motion.t_cam + motion.R_cam @ (rig.ground_axes @ np.asarray(ob.velocity, float))
    return t_rel / (ob.distance if distance is None else distance)


def _owners(scene: SceneSpec, u, v):
    """Owning surface id and ray scale s (X = s * ray) for pixel coordinates u, v."""
    rig = scene.rig
    shape = np.shape(u)
    u, v = np.ravel(u), np.ravel(v)
    y = pixel_ray(rig, u, v)
    down = rig.down
    dy = y @ down
    owner = np.full(u.shape, SKY_ID, dtype=int)
    scale = np.full(u.shape, np.inf)
    hit = dy > 1e-12
    scale[hit] = scene.ground_height / dy[hit]
    owner[hit] = GROUND_ID
    col = np.floor(u / rig.stixel_width).astype(int)
    for k, ob in enumerate(scene.objects):
        c0, c1 = ob.columns
        for c in range(int(c0), int(c1)):
            sel = col == c
            if not np.any(sel):
                continue
            n = stixel_normal(StixelType.STATIC_OBJECT, rig.u_center(c), rig)
            ny = y[sel] @ n
            with np.errstate(divide="ignore", invalid="ignore"):
                s = np.where(ny > 0, column_distance(scene, ob, c) / ny, np.inf)
            hgt = s * dy[sel]        # distance below the camera
            inside = (hgt <= scene.ground_height) & (hgt >= scene.ground_height - ob.height)
            closer = inside & (s < scale[sel])
            idx = np.flatnonzero(sel)[closer]
            scale[idx] = s[closer]
            owner[idx] = 2 + k
    return (owner.reshape(shape), scale.reshape(shape), y.reshape(shape + (3,)),
            col.reshape(shape))


def _normal_for(scene, owner_id, col):
    if owner_id == GROUND_ID:
        return scene.rig.down
    return stixel_normal(StixelType.STATIC_OBJECT, scene.rig.u_center(col), scene.rig)


def render(scene: SceneSpec, seed: int = 0) -> RenderOutput:
    rig, motion = scene.rig, scene.motion
    h, w = rig.height, rig.width
    v, u = np.mgrid[0:h, 0:w].astype(float)
    owner, scale, y, col = _owners(scene, u, v)

    # per-pixel previous-frame position K (R y - q n.y)
    Ry = y @ motion.R_cam.T
    Xp = Ry.copy()
    for oid in np.unique(owner):
        if oid == SKY_ID:
            continue
        ob = None if oid == GROUND_ID else scene.objects[oid - 2]
        sel = owner == oid
        if ob is None:
            Xp[sel] = Ry[sel] - np.outer(y[sel] @ rig.down, _surface_q(scene, None))
            continue
        idx = np.flatnonzero(sel.ravel())
        cols = col.ravel()[idx]
        ys = y.reshape(-1, 3)[idx]
        Xflat = Xp.reshape(-1, 3)
        for c in np.unique(cols):
            m = cols == c
            q = _surface_q(scene, ob, column_distance(scene, ob, c))
            Xflat[idx[m]] = Ry.reshape(-1, 3)[idx[m]] - np.outer(ys[m] @ _normal_for(scene, oid, c), q)
    xh = Xp @ rig.K.T
    flow = xh[..., :2] / xh[..., 2:3] - np.stack([u, v], axis=-1)

    rng = np.random.default_rng(seed)
    if scene.flow_sigma > 0:
        flow = flow + rng.normal(0.0, scene.flow_sigma, size=flow.shape)
    if scene.outlier_fraction > 0:
        out = rng.random((h, w)) < scene.outlier_fraction
        flow[out] = rng.uniform(-30.0, 30.0, size=(int(out.sum()), 2))
    var = np.full((h, w), max(scene.flow_sigma ** 2, 1e-4))

    labels = np.full((h, w), int(SemanticClass.SKY))
    labels[owner == GROUND_ID] = int(scene.ground_class)
    moving = np.zeros((h, w), dtype=bool)
    for k, ob in enumerate(scene.objects):
        labels[owner == 2 + k] = int(ob.sclass)
        if ob.moving:
            moving |= owner == 2 + k
    scores = np.full((h, w, NUM_CLASSES), scene.confusion / (NUM_CLASSES - 1))
    np.put_along_axis(scores, labels[..., None], 1.0 - scene.confusion, axis=2)

    depth = np.where(owner == SKY_ID, np.nan, scale * y[..., 2])
    return RenderOutput(flow=flow, var=var, scores=scores, depth=depth, labels=labels,
                        moving=moving, owner=owner, stixels=ground_truth_stixels(scene))


def ground_truth_stixels(scene: SceneSpec) -> list:
    """True stixel segmentation along the centre ray of every stixel column."""
    rig = scene.rig
    h = rig.height
    cols = []
    for c in range(rig.n_columns):
        uc = rig.u_center(c)
        vs = np.arange(h, dtype=float)
        owner, _, _, _ = _owners(scene, np.full(h, uc), vs)
        stixels = []
        v = h - 1
        while v >= 0:
            oid = owner[v]
            top = v
            while top - 1 >= 0 and owner[top - 1] == oid:
                top -= 1
            stixels.append(_gt_stixel(scene, c, oid, v, top))
            v = top - 1
        cols.append(StixelColumn(c, tuple(stixels)))
    return cols


def _gt_stixel(scene, c, oid, v_bottom, v_top) -> Stixel:
    if oid == SKY_ID:
        return Stixel(c, v_bottom, v_top, StixelType.SKY, SemanticClass.SKY, 0.0)
    if oid == GROUND_ID:
        return Stixel(c, v_bottom, v_top, StixelType.GROUND, scene.ground_class,
                      1.0 / scene.ground_height)
    ob = scene.objects[oid - 2]
    st = class_to_type(ob.sclass)
    tt = (0.0, 0.0)
    d = column_distance(scene, ob, c)
    if st == StixelType.DYNAMIC_OBJECT:
        q = _surface_q(scene, ob, d)
        tt = tuple(float(x) for x in scene.rig.ground_axes.T @ q)
    return Stixel(c, v_bottom, v_top, st, ob.sclass, 1.0 / d, tt)


def standard_scene(height=128, width=256, stixel_width=4, flow_sigma=0.0,
                   outlier_fraction=0.0, confusion=0.0, oncoming_speed=1.5,
                   snap_contacts=False) -> SceneSpec:
    """Forward-driving scene: ground, two static billboards, one oncoming vehicle.

    Geometry scales with the image size so any ``height`` gives a comparable
    layout (used by the complexity probe).
    """
    f = 0.8 * width
    rig = CameraRig.simple(f=f, cx=(width - 1) / 2.0, cy=0.4 * (height - 1), width=width,
                           height=height, cam_height=1.65, stixel_width=stixel_width)
    n = rig.n_columns
    objects = (
        SceneObject((0, int(0.28 * n)), 11.0, 9.0, SemanticClass.BUILDING),
        SceneObject((int(0.34 * n), int(0.5 * n)), 16.0, 1.6, SemanticClass.VEHICLE,
                    (0.0, -float(oncoming_speed))),
        SceneObject((int(0.7 * n), int(0.9 * n)), 9.0, 4.0, SemanticClass.VEGETATION),
    )
    return SceneSpec(rig=rig, motion=FrameMotion.forward(1.0), ground_height=1.65,
                     objects=objects, flow_sigma=flow_sigma,
                     outlier_fraction=outlier_fraction, confusion=confusion,
                     snap_contacts=snap_contacts)


def oncoming_scene(height=128, width=256, stixel_width=4, speed=1.5,
                   snap_contacts=False) -> SceneSpec:
    """Single oncoming vehicle on empty road, driving straight at the camera."""
    f = 0.8 * width
    rig = CameraRig.simple(f=f, cx=(width - 1) / 2.0, cy=0.4 * (height - 1), width=width,
                           height=height, cam_height=1.65, stixel_width=stixel_width)
    n = rig.n_columns
    car = SceneObject((int(0.3 * n), int(0.62 * n)), 12.0, 1.6, SemanticClass.VEHICLE,
                      (0.0, -float(speed)))
    return SceneSpec(rig=rig, motion=FrameMotion.forward(1.0), ground_height=1.65,
                     objects=(car,), snap_contacts=snap_contacts)
