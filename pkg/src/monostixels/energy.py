"""Energy terms: structural priors and the semantic / optical-flow data terms."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (CameraRig, ColumnObservation, EnergyParams, OBJECT_TYPES,
                   Stixel, StixelType, bottom_edge)
from .core import FrameMotion
from .geometry import (GeometryError, StixelPlane, backproject_on_plane,
                       height_above_ground, make_homography, sky_homography,
                       stixel_normal)


@dataclass(frozen=True)
class PriorContext:
    prev: Optional[Stixel]
    ground_height: float


def reference_ground(prev: Optional[Stixel], rig: CameraRig) -> float:
    """Height datum for a stixel whose lower neighbour is ``prev``.

    A ground stixel directly below defines it; otherwise the camera mounting
    height does.
    """
    if prev is not None and prev.stype == StixelType.GROUND:
        return 1.0 / prev.inv_depth
    return float(rig.cam_height)


def prior_context(prev: Optional[Stixel], rig: CameraRig) -> PriorContext:
    return PriorContext(prev, reference_ground(prev, rig))


# heights within this band count as standing exactly on the ground
GROUND_CONTACT_TOL = 1e-9


def gravity_energy(dh, params: EnergyParams) -> float:
    if abs(dh) <= GROUND_CONTACT_TOL:
        return 0.0
    if dh < 0:
        return params.alpha_grav_neg + params.beta_grav_neg * dh
    if dh > 0:
        return params.alpha_grav_pos + params.beta_grav_pos * dh
    return 0.0


def ordering_energy(p_cur, p_prev, params: EnergyParams) -> float:
    if p_cur <= 0 or p_prev <= 0:
        raise ValueError("ordering prior needs positive inverse depths")
    if p_cur > p_prev:
        return params.alpha_ord + params.beta_ord * (1.0 / p_cur - 1.0 / p_prev)
    return 0.0


def flat_energy(dh, params: EnergyParams) -> float:
    return params.alpha_flat + params.beta_flat * dh * dh


def stixel_plane(s: Stixel, rig: CameraRig) -> StixelPlane:
    n = stixel_normal(s.stype, rig.u_center(s.column_index), rig)
    return StixelPlane(n, s.inv_depth)


def structural_prior(s: Stixel, ctx: PriorContext, rig: CameraRig,
                     params: EnergyParams) -> float:
    """Pairwise layout prior of ``s`` given the stixel below it (excludes beta_mc)."""
    if s.stype == StixelType.SKY:
        return 0.0
    if s.stype == StixelType.GROUND:
        # every point of a lying plane sits at the same height 1/p below the camera
        return flat_energy(ctx.ground_height - 1.0 / s.inv_depth, params)
    u = rig.u_center(s.column_index)
    X = backproject_on_plane((u, bottom_edge(s.v_bottom)), stixel_plane(s, rig), rig)
    grav = gravity_energy(height_above_ground(X, ctx.ground_height, rig.down), params)
    if ctx.prev is not None and ctx.prev.stype in OBJECT_TYPES:
        return min(grav, ordering_energy(s.inv_depth, ctx.prev.inv_depth, params))
    return grav


def semantic_energy(c, scores, params: EnergyParams) -> float:
    with np.errstate(divide="ignore"):
        nll = -np.log(scores[int(c)])
    return float(min(params.alpha_L, nll))


def capped_nll(scores, params: EnergyParams) -> np.ndarray:
    """Elementwise ``min(alpha_L, -log score)``; zero scores hit the cap."""
    with np.errstate(divide="ignore"):
        return np.minimum(params.alpha_L, -np.log(scores))


def flow_energy(H, x, f, var, params: EnergyParams) -> float:
    pts = np.asarray(x, float).reshape(1, 1, 2)
    e = flow_energies(H, pts, np.asarray(f, float)[None], np.asarray([var], float), params)[0]
    if not np.isfinite(e):
        raise GeometryError("point at infinity under H")
    return float(e)


def footprint_flow(H, pts):
    """Mean of ``H x - x`` over the last-but-one axis of ``pts`` (n, m, 2).

    Returns ``(flow (n, 2), bad (n,))``; ``bad`` marks rows where some pixel
    is sent to infinity.
    """
    pts = np.asarray(pts, dtype=float)
    xh = pts @ H[:2, :2].T + H[:2, 2]
    w = pts @ H[2, :2] + H[2, 2]
    bad = np.abs(w) < 1e-12
    w = np.where(bad, 1.0, w)
    pred = np.mean(xh / w[..., None] - pts, axis=-2)
    return pred, np.any(bad, axis=-1)


def flow_energies(H, pts, flows, var, params: EnergyParams) -> np.ndarray:
    """Per-row flow energy for footprints ``pts`` (n, m, 2); +inf where invalid."""
    pred, bad = footprint_flow(H, pts)
    r = flows - pred
    e = np.minimum(params.alpha_F, 2.0 * np.log(var) + 0.5 * np.sum(r * r, axis=1) / var)
    return np.where(bad, np.inf, e)


def stixel_data_energy(v_bottom, v_top, sclass, H, obs: ColumnObservation,
                       params: EnergyParams) -> float:
    rows = np.arange(v_top, v_bottom + 1)
    ef = flow_energies(H, obs.footprint(rows), obs.flow[rows], obs.flow_var[rows], params)
    if not np.all(np.isfinite(ef)):
        return np.inf
    el = capped_nll(obs.scores[rows, int(sclass)], params)
    return float(np.sum(params.delta_L * el + params.delta_F * ef))


def stixel_homography(s: Stixel, rig: CameraRig, motion: FrameMotion) -> np.ndarray:
    if s.stype == StixelType.SKY:
        return sky_homography(rig, motion)
    n = stixel_normal(s.stype, rig.u_center(s.column_index), rig)
    if s.stype == StixelType.DYNAMIC_OBJECT:
        return make_homography(rig, motion, StixelPlane(n, 0.0), s.t_tilde)
    return make_homography(rig, motion, StixelPlane(n, s.inv_depth))


def column_energy(stixels, obs: ColumnObservation, rig: CameraRig, motion: FrameMotion,
                  params: EnergyParams) -> float:
    """Total energy of a bottom-to-top stixel sequence: priors, model cost and data."""
    total, prev = 0.0, None
    for s in stixels:
        H = stixel_homography(s, rig, motion)
        total += (structural_prior(s, prior_context(prev, rig), rig, params) + params.beta_mc
                  + stixel_data_energy(s.v_bottom, s.v_top, s.sclass, H, obs, params))
        prev = s
    return float(total)
