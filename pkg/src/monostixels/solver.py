"""Label approximation for a single stixel hypothesis.

Given the rows and type of a segment, recover the homography from single
flow vectors (MLESAC-style selection over candidate rows), the semantic class,
and the inverse depth of dynamic stixels.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (CameraRig, ColumnObservation, EnergyParams, FrameMotion,
                   OBJECT_TYPES, SemanticClass, StixelType, bottom_edge, classes_of_type)
from .energy import PriorContext, capped_nll, flow_energies
from .geometry import (GeometryError, StixelPlane, make_homography, pixel_ray,
                       sky_homography, stixel_normal)


class HypothesisError(ValueError):
    """A single-vector solve produced no usable hypothesis."""


class DepthUnobservable(HypothesisError):
    pass


class DegenerateDynamicGeometry(HypothesisError):
    pass


class NoValidHypothesis(HypothesisError):
    pass


@dataclass(frozen=True, eq=False)
class SegmentHypothesis:
    H: np.ndarray
    inv_depth: float          # nan for dynamic stixels until a depth is chosen
    t_tilde: tuple
    flow_energy: float        # delta_F-weighted flow energy over the segment
    source_row: int           # -1 for sky


_GN_ITERATIONS = 3


def _rays(rig, pts):
    return pixel_ray(rig, pts[..., 0], pts[..., 1])


def _static_rows(pts, flows, rig, motion, normal):
    """Inverse depth from each row's flow vector.

    The linear system ``A p = b`` obtained from ``f = H(p) x - x`` at the
    footprint centre seeds Gauss-Newton on the footprint-mean flow (a no-op
    for single-pixel footprints). Returns ``(p, observable)``.
    """
    x = pts.mean(axis=1)
    y = _rays(rig, x)
    a = y @ (rig.K @ motion.R_cam).T
    b = np.outer(y @ normal, rig.K @ motion.t_cam)
    u1, v1 = x[:, 0] + flows[:, 0], x[:, 1] + flows[:, 1]
    A = np.stack([b[:, 0] - u1 * b[:, 2], b[:, 1] - v1 * b[:, 2]], axis=1)
    rhs = np.stack([a[:, 0] - u1 * a[:, 2], a[:, 1] - v1 * a[:, 2]], axis=1)
    observable = ~np.all(np.abs(A) < 1e-12, axis=1)
    AA = np.where(observable, np.sum(A * A, axis=1), 1.0)
    p = np.sum(A * rhs, axis=1) / AA
    if pts.shape[1] > 1:
        ys = _rays(rig, pts)
        ak = ys @ (rig.K @ motion.R_cam).T
        bk = (ys @ normal)[..., None] * (rig.K @ motion.t_cam)
        with np.errstate(divide="ignore", invalid="ignore"):
            for _ in range(_GN_ITERATIONS):
                z = ak - p[:, None, None] * bk
                z2 = z[..., 2:3]
                r = np.mean(z[..., :2] / z2 - pts, axis=1) - flows
                J = np.mean((z[..., :2] * bk[..., 2:3] - bk[..., :2] * z2) / (z2 * z2), axis=1)
                JJ = np.sum(J * J, axis=1)
                step = np.where(JJ > 0, np.sum(J * r, axis=1) / np.where(JJ > 0, JJ, 1.0), 0.0)
                p = p - step
    return p, observable


def _dynamic_rows(pts, flows, rig, motion, normal):
    """Scaled ground-plane translation from each row's flow vector.

    Returns ``(t_tilde (n, 2), well_posed)``.
    """
    x = pts.mean(axis=1)
    y = _rays(rig, x)
    a = y @ (rig.K @ motion.R_cam).T
    KG = rig.K @ rig.ground_axes
    B = (y @ normal)[:, None, None] * KG[None]
    u1, v1 = x[:, 0] + flows[:, 0], x[:, 1] + flows[:, 1]
    A = np.stack([B[:, 0] - u1[:, None] * B[:, 2], B[:, 1] - v1[:, None] * B[:, 2]], axis=1)
    rhs = np.stack([a[:, 0] - u1 * a[:, 2], a[:, 1] - v1 * a[:, 2]], axis=1)
    det = A[:, 0, 0] * A[:, 1, 1] - A[:, 0, 1] * A[:, 1, 0]
    ok = np.abs(det) >= 1e-10 * np.sum(A * A, axis=(1, 2))
    det = np.where(ok, det, 1.0)
    tt = np.stack([(rhs[:, 0] * A[:, 1, 1] - rhs[:, 1] * A[:, 0, 1]) / det,
                   (A[:, 0, 0] * rhs[:, 1] - A[:, 1, 0] * rhs[:, 0]) / det], axis=1)
    if pts.shape[1] > 1:
        ys = _rays(rig, pts)
        ak = ys @ (rig.K @ motion.R_cam).T
        Bk = (ys @ normal)[..., None, None] * KG                       # (n, m, 3, 2)
        with np.errstate(divide="ignore", invalid="ignore"):
            for _ in range(_GN_ITERATIONS):
                z = ak - np.einsum("nmij,nj->nmi", Bk, tt)
                z2 = z[..., 2]
                r = np.mean(z[..., :2] / z2[..., None] - pts, axis=1) - flows
                Jk = (z[..., :2, None] * Bk[..., 2:3, :] - Bk[..., :2, :] * z2[..., None, None])
                J = np.mean(Jk / (z2 * z2)[..., None, None], axis=1)       # (n, 2, 2)
                dJ = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
                good = np.abs(dJ) > 0
                dJ = np.where(good, dJ, 1.0)
                step = np.stack([(r[:, 0] * J[:, 1, 1] - r[:, 1] * J[:, 0, 1]) / dJ,
                                 (J[:, 0, 0] * r[:, 1] - J[:, 1, 0] * r[:, 0]) / dJ], axis=1)
                tt = tt - np.where(good[:, None], step, 0.0)
    return tt, ok


def _footprint(x, offsets):
    off = np.asarray(offsets if offsets is not None else (0.0,), dtype=float)
    return np.stack([x[0] + off, np.full(off.shape, float(x[1]))], axis=-1)[None]


def solve_static_inv_depth(f, x, var, rig: CameraRig, motion: FrameMotion, normal,
                           params: EnergyParams | None = None, offsets=None) -> float:
    """Least-squares inverse depth from one (possibly footprint-averaged) flow vector.

    ``f = H(p) x - x`` rearranges into two equations ``A p = b``, linear in p.
    The noise is isotropic, so weighting both equations by 1/var leaves the
    solution unchanged.
    """
    if not var > 0:
        raise ValueError("flow variance must be positive")
    p, observable = _static_rows(_footprint(x, offsets), np.asarray(f, float)[None],
                                 rig, motion, np.asarray(normal, float))
    if not observable[0]:
        raise DepthUnobservable("depth unobservable")
    p = float(p[0])
    if not np.isfinite(p):
        raise HypothesisError("non-finite inverse depth")
    if params is not None and not params.min_inv_depth <= p <= params.max_inv_depth:
        raise HypothesisError(f"inverse depth {p:.4g} outside the admissible range")
    return p


def solve_dynamic_t_tilde(f, x, rig: CameraRig, motion: FrameMotion, normal,
                          offsets=None) -> np.ndarray:
    tt, ok = _dynamic_rows(_footprint(x, offsets), np.asarray(f, float)[None],
                           rig, motion, np.asarray(normal, float))
    if not ok[0] or not np.all(np.isfinite(tt[0])):
        raise DegenerateDynamicGeometry("degenerate dynamic geometry")
    return tt[0]


def candidate_offsets(n_rows: int, max_samples: int) -> np.ndarray:
    """Row offsets (from the top of a segment) used to generate hypotheses."""
    if n_rows <= max_samples:
        return np.arange(n_rows)
    if max_samples == 1:
        return np.array([(n_rows - 1) // 2])
    # floor(x + 0.5) keeps the samples distinct when the spacing is >= 1
    return np.floor(np.linspace(0.0, n_rows - 1, max_samples) + 0.5).astype(int)


def segment_homography(stype, rig, motion, normal, inv_depth=None, t_tilde=None):
    stype = StixelType(stype)
    if stype == StixelType.SKY:
        return sky_homography(rig, motion)
    if stype == StixelType.DYNAMIC_OBJECT:
        return make_homography(rig, motion, StixelPlane(normal, 0.0), t_tilde)
    return make_homography(rig, motion, StixelPlane(normal, inv_depth))


def mlesac_fit(v_top, v_bottom, stype, obs: ColumnObservation, rig: CameraRig,
               motion: FrameMotion, params: EnergyParams) -> SegmentHypothesis:
    """Best single-vector homography for rows ``v_top..v_bottom`` of ``obs``.

    Ties go to the lower source row.
    """
    stype = StixelType(stype)
    if not 0 <= v_top <= v_bottom < obs.h:
        raise ValueError("invalid row range")
    rows = np.arange(v_top, v_bottom + 1)
    pts = obs.footprint(rows)

    def score(H):
        e = flow_energies(H, pts, obs.flow[rows], obs.flow_var[rows], params)
        return float(np.sum(params.delta_F * e)) if np.all(np.isfinite(e)) else np.inf

    if stype == StixelType.SKY:
        H = sky_homography(rig, motion)
        e = score(H)
        if not np.isfinite(e):
            raise NoValidHypothesis("no valid hypothesis")
        return SegmentHypothesis(H, 0.0, (0.0, 0.0), e, -1)

    normal = stixel_normal(stype, obs.u_center, rig)
    best = None
    for off in candidate_offsets(len(rows), params.mlesac_max_samples):
        v = v_top + int(off)
        x, f = (obs.u_center, float(v)), obs.flow[v]
        try:
            if stype == StixelType.DYNAMIC_OBJECT:
                tt = solve_dynamic_t_tilde(f, x, rig, motion, normal, obs.u_offsets)
                H = make_homography(rig, motion, StixelPlane(normal, 0.0), tt)
                p, tt = np.nan, (float(tt[0]), float(tt[1]))
            else:
                p = solve_static_inv_depth(f, x, obs.flow_var[v], rig, motion, normal,
                                           params, obs.u_offsets)
                H = make_homography(rig, motion, StixelPlane(normal, p))
                tt = (0.0, 0.0)
        except (HypothesisError, GeometryError):
            continue
        e = score(H)
        if np.isfinite(e) and (best is None or e < best.flow_energy):
            best = SegmentHypothesis(H, p, tt, e, v)
    if best is None:
        raise NoValidHypothesis("no valid hypothesis")
    return best


def select_class(v_top, v_bottom, stype, obs: ColumnObservation, params: EnergyParams):
    """Class of ``stype`` with the lowest capped negative log score sum.

    Returns ``(class, delta_L-weighted semantic energy)``.
    """
    best_c, best_e = None, np.inf
    for c in classes_of_type(stype):
        e = float(np.sum(capped_nll(obs.scores[v_top:v_bottom + 1, int(c)], params)))
        if best_c is None or e < best_e:
            best_c, best_e = c, e
    return SemanticClass(best_c), params.delta_L * best_e


def choose_dynamic_depth(v_bottom, u_center, ctx: PriorContext, rig: CameraRig,
                         params: EnergyParams) -> float:
    """Inverse depth of a dynamic stixel, picked to minimise its structural prior.

    After an object stixel the depth is copied; otherwise the stixel is placed
    standing on the reference ground.
    """
    prev = ctx.prev
    if prev is not None and prev.stype in OBJECT_TYPES:
        p = prev.inv_depth
    else:
        n = stixel_normal(StixelType.DYNAMIC_OBJECT, u_center, rig)
        y = pixel_ray(rig, u_center, bottom_edge(v_bottom))
        dy, ny = float(rig.down @ y), float(n @ y)
        if dy <= 1e-12 * np.linalg.norm(y) or ny <= 0:
            raise GeometryError("bottom ray does not meet the ground in front of the camera")
        p = dy / (ny * ctx.ground_height)
    return float(np.clip(p, params.min_inv_depth, params.max_inv_depth))


# ---------------------------------------------------------------------------
# vectorised per-row hypotheses, used by the column dynamic program

def row_hypotheses(stype, obs: ColumnObservation, rig: CameraRig, motion: FrameMotion,
                   params: EnergyParams):
    """Single-vector solve for every row at once.

    Returns ``(q, valid, labels)``: ``q[r]`` is the 3-vector subtracted from
    R_cam in the homography generated by row ``r`` (``p * t_cam`` or
    ``ground_axes @ t_tilde``); ``labels`` holds ``p`` (h,) for static types or
    ``t_tilde`` (h, 2) for dynamic ones.
    """
    stype = StixelType(stype)
    normal = stixel_normal(stype, obs.u_center, rig)
    pts = obs.footprint(np.arange(obs.h))
    if stype == StixelType.DYNAMIC_OBJECT:
        tt, ok = _dynamic_rows(pts, obs.flow, rig, motion, normal)
        valid = ok & np.all(np.isfinite(tt), axis=1)
        tt = np.where(valid[:, None], tt, 0.0)
        return tt @ rig.ground_axes.T, valid, tt
    p, observable = _static_rows(pts, obs.flow, rig, motion, normal)
    with np.errstate(invalid="ignore"):
        valid = (observable & np.isfinite(p) & (p >= params.min_inv_depth)
                 & (p <= params.max_inv_depth))
    p = np.where(valid, p, np.nan)
    return np.outer(np.where(valid, p, 0.0), motion.t_cam), valid, p


def hypothesis_energy_matrix(q, normal, obs: ColumnObservation, rig: CameraRig,
                             motion: FrameMotion, params: EnergyParams):
    """``E[r, v]``: flow energy of row ``v`` under the homography of hypothesis ``r``.

    ``q`` is (m, 3); returns ``(E, bad)`` with ``bad`` flagging rows whose
    footprint is sent to infinity (E is 0 there so prefix sums stay finite).
    """
    pts = obs.footprint(np.arange(obs.h))                        # (h, k, 2)
    y = _rays(rig, pts)
    Ry = y @ motion.R_cam.T                                      # (h, k, 3)
    ny = y @ np.asarray(normal, float)                           # (h, k)
    Xp = Ry[None] - q[:, None, None, :] * ny[None, ..., None]    # (m, h, k, 3)
    xh = Xp @ rig.K.T
    w = xh[..., 2]
    bad = np.abs(w) < 1e-12
    w = np.where(bad, 1.0, w)
    pred = np.mean(xh[..., :2] / w[..., None] - pts[None], axis=2)
    bad = np.any(bad, axis=2)
    r = obs.flow[None] - pred
    var = obs.flow_var[None]
    E = np.minimum(params.alpha_F, 2.0 * np.log(var) + 0.5 * np.sum(r * r, axis=-1) / var)
    return np.where(bad, 0.0, E), bad
