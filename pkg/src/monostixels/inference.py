"""Column-wise minimum-path dynamic program and the whole-image driver.

Rows are processed bottom-up. A DP node is the most recent stixel, i.e. the
triple (first row, last row, type) in bottom-up row indices ``j = h-1-v``.
Ground, static-object and sky labels depend only on the node's own rows, so
transition costs are exact for those predecessors. A dynamic stixel's depth
depends on the stixel below it; see ``segment_column``.

Cost: O(h^2) nodes with O(h) predecessors each, so O(h^3) per column with
``mlesac_max_samples`` fixed and a bounded number of dynamic depth options.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .core import (CameraRig, ColumnObservation, EnergyParams, FrameMotion,
                   NUM_CLASSES, SemanticClass, Stixel, StixelColumn, StixelType,
                   bottom_edge, classes_of_type)
from .energy import GROUND_CONTACT_TOL, capped_nll
from .geometry import pixel_ray, stixel_normal
from .solver import candidate_offsets, hypothesis_energy_matrix, row_hypotheses

N_TYPES = 4
_G, _S, _D, _K = (int(StixelType.GROUND), int(StixelType.STATIC_OBJECT),
                  int(StixelType.DYNAMIC_OBJECT), int(StixelType.SKY))


class ColumnInfeasible(RuntimeError):
    pass


def _prefix(x, axis=-1):
    shape = list(x.shape)
    shape[axis] = 1
    return np.concatenate([np.zeros(shape), np.cumsum(x, axis=axis)], axis=axis)


def _gravity(dh, params):
    dh = np.where(np.abs(dh) <= GROUND_CONTACT_TOL, 0.0, dh)
    return np.where(dh < 0, params.alpha_grav_neg + params.beta_grav_neg * dh,
                    np.where(dh > 0, params.alpha_grav_pos + params.beta_grav_pos * dh, 0.0))


def _ordering(p_cur, p_prev, params):
    with np.errstate(divide="ignore", invalid="ignore"):
        e = params.alpha_ord + params.beta_ord * (1.0 / p_cur - 1.0 / p_prev)
    return np.where(p_cur > p_prev, e, 0.0)


class _SegmentTable:
    """Data energy and approximated labels for every (bottom, top, type) segment."""

    def __init__(self, obs: ColumnObservation, rig, motion, params):
        h = obs.h
        self.h = h
        self.data = np.full((N_TYPES, h, h), np.inf)
        self.src = np.full((N_TYPES, h, h), -1, dtype=int)
        self.cls = np.zeros((N_TYPES, h, h), dtype=int)
        self.row_p = {}
        self.row_tt = None
        # bottom-up order
        sem = capped_nll(obs.scores[::-1], params)
        sem_prefix = _prefix(sem, axis=0)                    # (h+1, C)
        a_idx, b_idx = np.triu_indices(h)
        for t in StixelType:
            classes = [int(c) for c in classes_of_type(t)]
            sums = sem_prefix[b_idx + 1][:, classes] - sem_prefix[a_idx][:, classes]
            k = np.argmin(sums, axis=1)
            semcost = np.full((h, h), np.inf)
            semcost[a_idx, b_idx] = params.delta_L * sums[np.arange(len(k)), k]
            self.cls[t][a_idx, b_idx] = np.asarray(classes)[k]
            flowcost = self._flow_cost(t, obs, rig, motion, params)
            self.data[t] = semcost + flowcost

    def _flow_cost(self, t, obs, rig, motion, params):
        h = self.h
        out = np.full((h, h), np.inf)
        if t == StixelType.SKY:
            # q = 0 reduces the stixel homography to K R K^-1
            q = np.zeros((1, 3))
            E, bad = hypothesis_energy_matrix(q, np.zeros(3), obs, rig, motion, params)
            E, bad = E[0, ::-1] * params.delta_F, bad[0, ::-1]
            P, B = _prefix(E), _prefix(bad.astype(float))
            a, b = np.triu_indices(h)
            seg = P[b + 1] - P[a]
            seg[B[b + 1] - B[a] > 0] = np.inf
            out[a, b] = seg
            return out
        normal = stixel_normal(t, obs.u_center, rig)
        q, valid, labels = row_hypotheses(t, obs, rig, motion, params)
        if t == StixelType.DYNAMIC_OBJECT:
            self.row_tt = labels
        else:
            self.row_p[int(t)] = labels
        E, bad = hypothesis_energy_matrix(q, normal, obs, rig, motion, params)
        # hypothesis index r is a row v; reorder both axes bottom-up
        E = E[::-1, ::-1] * params.delta_F
        bad = bad[::-1, ::-1]
        valid_j = valid[::-1]
        P = _prefix(E, axis=1)
        BP = _prefix(bad.astype(float), axis=1)
        M = params.mlesac_max_samples
        for L in range(1, h + 1):
            a = np.arange(0, h - L + 1)
            b = a + L - 1
            off = candidate_offsets(L, M)               # from the top row, v ascending
            cand = b[:, None] - off[None, :]            # bottom-up index of source rows
            seg = P[cand, (b + 1)[:, None]] - P[cand, a[:, None]]
            nbad = BP[cand, (b + 1)[:, None]] - BP[cand, a[:, None]]
            seg = np.where((nbad > 0) | ~valid_j[cand], np.inf, seg)
            k = np.argmin(seg, axis=1)
            best = seg[np.arange(len(a)), k]
            out[a, b] = best
            self.src[t][a, b] = np.where(np.isfinite(best), h - 1 - cand[np.arange(len(a)), k], -1)
        return out


class _Options:
    """Candidate (inverse depth, path cost) pairs with back-pointers."""

    __slots__ = ("p", "c", "t", "a", "k")

    def __init__(self, p, c, t, a, k):
        self.p, self.c, self.t, self.a, self.k = p, c, t, a, k

    @classmethod
    def empty(cls):
        z = np.zeros(0)
        zi = np.zeros(0, dtype=int)
        return cls(z, z, zi, zi, zi)

    @classmethod
    def concat(cls, parts):
        parts = [o for o in parts if len(o.p)]
        if not parts:
            return cls.empty()
        return cls(*(np.concatenate([getattr(o, f) for o in parts]) for f in cls.__slots__))

    def __len__(self):
        return len(self.p)

    def prune(self, beta_ord=None) -> "_Options":
        """Drop infeasible and dominated options.

        Equal depths have equal futures, so only the cheapest survives. A
        static successor at depth ``p_s`` pays either the cheapest cost with
        ``p >= p_s`` or ``alpha_ord + beta_ord / p_s`` plus the least
        ``c - beta_ord / p`` with ``p < p_s``. With ``beta_ord`` given, an
        option is kept only if it is on one of these two lower envelopes.
        """
        keep = np.isfinite(self.c) & np.isfinite(self.p)
        idx = np.flatnonzero(keep)
        if beta_ord is None:
            order = idx[np.lexsort((self.c[idx], self.p[idx]))]
            p = self.p[order]
            sel = np.ones(len(order), dtype=bool)
            sel[1:] = p[1:] != p[:-1]
            o = order[sel]
        else:
            o1 = idx[np.lexsort((self.c[idx], -self.p[idx]))]
            e = self.c - beta_ord / np.where(keep, self.p, 1.0)
            o2 = idx[np.lexsort((e[idx], self.p[idx]))]
            o = np.union1d(o1[_front(self.c[o1])], o2[_front(e[o2])])
        return _Options(self.p[o], self.c[o], self.t[o], self.a[o], self.k[o])


def _front(c):
    """Entries strictly cheaper than everything before them."""
    sel = np.ones(len(c), dtype=bool)
    if len(c) > 1:
        sel[1:] = c[1:] < np.minimum.accumulate(c)[:-1]
    return sel


def _nonnegative_gravity(params) -> bool:
    """True when the gravity prior can never go negative.

    Then a dynamic stixel on top of another one has a zero prior whatever the
    copied depth, so every option of a chain shifts by the same amount.
    """
    return (params.alpha_grav_neg >= 0 and params.beta_grav_neg <= 0
            and params.alpha_grav_pos >= 0 and params.beta_grav_pos >= 0)


def segment_column(obs: ColumnObservation, rig: CameraRig, motion: FrameMotion,
                   params: EnergyParams, column_index: int = 0) -> StixelColumn:
    """Minimum-energy stixel segmentation of one column.

    Dynamic stixels take their depth from the stixel below, so the DP keeps,
    per start row, every non-dominated (depth, cost) option of an incoming
    dynamic path instead of a single one. A depth only matters to a static
    successor (via the ordering term) or to a dynamic successor copying it,
    which keeps the result exact.
    """
    h = obs.h
    tab = _SegmentTable(obs, rig, motion, params)
    data = tab.data
    beta_ord = params.beta_ord if _nonnegative_gravity(params) else None

    p_seg = np.zeros((N_TYPES, h, h))
    for t in (_G, _S):
        src = tab.src[t]
        p_seg[t] = np.where(src >= 0, tab.row_p[t][np.clip(src, 0, None)], np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        g_height = 1.0 / p_seg[_G]

    # height below the camera of a stixel's bottom edge is c / p
    n_obj = stixel_normal(StixelType.STATIC_OBJECT, obs.u_center, rig)
    v_edge = bottom_edge(h - 1 - np.arange(h).astype(float))
    y = pixel_ray(rig, np.full(h, obs.u_center), v_edge)
    dy, ny = y @ rig.down, y @ n_obj
    with np.errstate(divide="ignore", invalid="ignore"):
        c_bottom = dy / ny
    can_stand = (dy > 1e-12 * np.linalg.norm(y, axis=1)) & (ny > 0)

    cost = np.full((N_TYPES, h, h), np.inf)
    bp_a = np.full((N_TYPES, h, h), -2, dtype=int)      # -1 = column bottom
    bp_t = np.full((N_TYPES, h, h), -1, dtype=int)
    bp_k = np.full((N_TYPES, h, h), -1, dtype=int)      # option index of a dynamic predecessor
    dyn_opts = [None] * h       # options entering a dynamic stixel that starts at a
    dyn_best = np.full(h, -1, dtype=int)
    ends = [None] * h           # options of dynamic stixels ending right below a
    cam_h = float(rig.cam_height)
    pmin, pmax = params.min_inv_depth, params.max_inv_depth
    no_obj = np.array([np.nan])
    # every dynamic option so far, flattened: depth, cost, start row, index
    all_p, all_c = np.zeros(0), np.zeros(0)
    all_a, all_j = np.zeros(0, dtype=int), np.zeros(0, dtype=int)

    for a in range(h):
        b = np.arange(a, h)
        nb = len(b)
        c = c_bottom[a]
        if a == 0:
            pc, pt, pa = np.zeros(1), np.array([-1]), np.array([-1])
            gref, p_prev = np.array([cam_h]), no_obj
        else:
            types = np.array([_G, _S, _D, _K])
            pc = cost[types, :a, a - 1].reshape(-1)
            pt = np.repeat(types, a)
            pa = np.tile(np.arange(a), len(types))
            gref = np.full(pc.shape, cam_h)
            gref[pt == _G] = g_height[:a, a - 1]
            p_prev = np.full(pc.shape, np.nan)
            p_prev[pt == _S] = p_seg[_S, :a, a - 1]
            if len(all_p):
                cc = all_c + params.beta_mc + data[_D, all_a, a - 1]
                ends[a] = _Options(all_p, cc, np.full(len(all_p), _D), all_a, all_j).prune(beta_ord)
            else:
                ends[a] = _Options.empty()
        end = ends[a] if a > 0 else _Options.empty()
        live = np.isfinite(pc)
        not_dyn = pt != _D

        for t in range(N_TYPES):
            d = data[t, a, a:]
            if not np.any(np.isfinite(d)):
                continue
            kk = np.full(nb, -1)
            if t == _K:
                total = np.broadcast_to(pc[:, None], (len(pc), nb))
            elif t == _G:
                dh = gref[:, None] - g_height[a, a:][None, :]
                total = pc[:, None] + params.alpha_flat + params.beta_flat * dh * dh
            elif t == _S:
                p_cur = p_seg[_S, a, a:]
                with np.errstate(divide="ignore", invalid="ignore"):
                    grav = _gravity(gref[:, None] - c / p_cur[None, :], params)
                    grav_cam = _gravity(cam_h - c / p_cur, params)
                ordp = _ordering(p_cur[None, :], p_prev[:, None], params)
                prior = np.where((pt == _S)[:, None], np.minimum(grav, ordp), grav)
                total = np.where(not_dyn[:, None], pc[:, None] + prior, np.inf)
                if len(end):
                    od = end.c[:, None] + np.minimum(
                        grav_cam[None, :], _ordering(p_cur[None, :], end.p[:, None], params))
                    kd = np.argmin(od, axis=0)
                    bd = od[kd, np.arange(nb)]
            else:
                # options for the depth of a dynamic stixel starting at a
                with np.errstate(divide="ignore", invalid="ignore"):
                    p_d = np.where(pt == _S, p_prev, c / gref)
                ok = live & not_dyn & ((pt == _S) | can_stand[a])
                p_d = np.clip(np.where(ok, p_d, pmin), pmin, pmax)
                with np.errstate(divide="ignore", invalid="ignore"):
                    grav = _gravity(gref - c / p_d, params)
                prior = np.where(pt == _S, np.minimum(grav, _ordering(p_d, p_d, params)), grav)
                base = _Options(p_d, np.where(ok, pc + prior, np.inf), pt, pa, np.full(len(pc), -1))
                if len(end):
                    with np.errstate(divide="ignore", invalid="ignore"):
                        gcam = _gravity(cam_h - c / end.p, params)
                    cc = end.c + np.minimum(gcam, _ordering(end.p, end.p, params))
                    chained = _Options(end.p, cc, np.full(len(end), _D), end.a,
                                       np.arange(len(end)))
                    base = _Options.concat([base, chained])
                opt = base.prune(beta_ord)
                if not len(opt):
                    continue
                dyn_opts[a] = opt
                all_p, all_c = np.concatenate([all_p, opt.p]), np.concatenate([all_c, opt.c])
                all_a = np.concatenate([all_a, np.full(len(opt), a)])
                all_j = np.concatenate([all_j, np.arange(len(opt))])
                k = int(np.argmin(opt.c))
                dyn_best[a] = k
                cost[_D, a, a:] = opt.c[k] + params.beta_mc + d
                bp_a[_D, a, a:] = opt.a[k]
                bp_t[_D, a, a:] = opt.t[k]
                bp_k[_D, a, a:] = k
                continue
            total = np.where(live[:, None] & np.isfinite(total), total, np.inf)
            k = np.argmin(total, axis=0)
            best = total[k, np.arange(nb)]
            ba, bt = pa[k], pt[k]
            if t == _S and len(end):
                use = bd < best
                best = np.where(use, bd, best)
                ba = np.where(use, end.a[kd], ba)
                bt = np.where(use, _D, bt)
                kk = np.where(use, kd, -1)
            cost[t, a, a:] = best + params.beta_mc + d
            bp_a[t, a, a:] = ba
            bp_t[t, a, a:] = bt
            bp_k[t, a, a:] = kk

    final = cost[:, :, h - 1]
    flat = int(np.argmin(final.reshape(-1)))
    t, a = divmod(flat, h)
    energy = float(final[t, a])
    if not np.isfinite(energy):
        raise ColumnInfeasible("column infeasible")

    # walk back; k is the option index of the current dynamic node
    nodes = []
    b = h - 1
    k = int(dyn_best[a]) if t == _D else -1
    while a >= 0:
        if t == _D:
            opt = dyn_opts[a]
            nodes.append((t, a, b, float(opt.p[k])))
            a_prev, t_prev, k_end = int(opt.a[k]), int(opt.t[k]), int(opt.k[k])
            k_next = int(ends[a].k[k_end]) if t_prev == _D else -1
        else:
            nodes.append((t, a, b, None))
            a_prev, t_prev = int(bp_a[t, a, b]), int(bp_t[t, a, b])
            k_next = -1
            if t_prev == _D:
                k_end = int(bp_k[t, a, b])
                k_next = int(ends[a].k[k_end]) if k_end >= 0 else int(dyn_best[a_prev])
        b = a - 1
        a, t, k = a_prev, t_prev, k_next
    nodes.reverse()

    stixels = []
    for t, a, b, p_dyn in nodes:
        st = StixelType(t)
        tt = (0.0, 0.0)
        if st == StixelType.SKY:
            p = 0.0
        elif st == StixelType.DYNAMIC_OBJECT:
            p = p_dyn
            r = tab.src[t, a, b]
            tt = (float(tab.row_tt[r, 0]), float(tab.row_tt[r, 1]))
        else:
            p = float(p_seg[t, a, b])
        stixels.append(Stixel(column_index, h - 1 - a, h - 1 - b, st,
                              SemanticClass(int(tab.cls[t, a, b])), p, tt))
    return StixelColumn(column_index, tuple(stixels), energy)


def column_observations(flow, var, scores, rig: CameraRig):
    """Aggregate dense inputs into one observation per stixel column.

    ``flow`` is (h, w, 2), ``var`` (h, w), ``scores`` (h, w, C). Trailing
    pixels that do not fill a whole column are dropped.
    """
    flow = np.asarray(flow, dtype=float)
    var = np.asarray(var, dtype=float)
    scores = np.asarray(scores, dtype=float)
    h, w = flow.shape[:2]
    if flow.shape != (h, w, 2) or var.shape != (h, w) or scores.shape != (h, w, NUM_CLASSES):
        raise ValueError("dimension mismatch between flow, variance and scores")
    ws = rig.stixel_width
    n = w // ws
    offsets = tuple(np.arange(ws) - (ws - 1) / 2.0)
    obs = []
    for c in range(n):
        sl = slice(c * ws, (c + 1) * ws)
        obs.append(ColumnObservation(flow=flow[:, sl].mean(axis=1),
                                     flow_var=var[:, sl].mean(axis=1) / ws,
                                     scores=scores[:, sl].mean(axis=1),
                                     u_center=rig.u_center(c), u_offsets=offsets))
    return obs


def segment_image(flow, var, scores, rig: CameraRig, motion: FrameMotion,
                  params: EnergyParams, threads: int = 1) -> list:
    obs = column_observations(flow, var, scores, rig)

    def run(item):
        c, o = item
        return segment_column(o, rig, motion, params, column_index=c)

    if threads <= 1:
        return [run(it) for it in enumerate(obs)]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(run, enumerate(obs)))


def complexity_probe(heights, n_columns: int = 20, params: EnergyParams | None = None,
                     seed: int = 0) -> list:
    """Median per-column wall time of ``segment_column`` for each image height."""
    from .synthworld import standard_scene, render

    params = params or EnergyParams()
    table = []
    for h in heights:
        scene = standard_scene(height=int(h), width=4 * n_columns, stixel_width=4,
                               flow_sigma=0.3, outlier_fraction=0.05, confusion=0.1)
        out = render(scene, seed)
        obs = column_observations(out.flow, out.var, out.scores, scene.rig)
        times = []
        for c, o in enumerate(obs):
            t0 = time.perf_counter()
            segment_column(o, scene.rig, scene.motion, params, column_index=c)
            times.append(time.perf_counter() - t0)
        table.append((int(h), float(np.median(times))))
    return table
