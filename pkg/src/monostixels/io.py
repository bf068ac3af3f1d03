"""File formats: optical flow, scalar maps, score volumes, stixels, configs, PPM previews.

All binary formats are little-endian. Readers raise ``FormatError`` on
malformed input and never return partially parsed data.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .core import (CLASS_NAMES, NUM_CLASSES, TYPE_NAMES, CameraRig, EnergyParams,
                   SemanticClass, Stixel, StixelColumn, StixelType, validate_column)

FLO_MAGIC = 202021.25
_FLO_HEADER = struct.Struct("<fii")


class FormatError(ValueError):
    pass


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read {path}: {e.strerror}") from None


# --- optical flow -----------------------------------------------------------

def write_flow(path, flow) -> None:
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise FormatError("flow must have shape (h, w, 2)")
    h, w = flow.shape[:2]
    with open(path, "wb") as fh:
        fh.write(_FLO_HEADER.pack(FLO_MAGIC, w, h))
        fh.write(flow.astype("<f4").tobytes())


def read_flow(path) -> np.ndarray:
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise FormatError("unexpected EOF")
    if struct.unpack("<f", raw[:4])[0] != np.float32(FLO_MAGIC):
        raise FormatError("not a .flo file")
    if len(raw) < _FLO_HEADER.size:
        raise FormatError("unexpected EOF")
    _, w, h = _FLO_HEADER.unpack(raw[:_FLO_HEADER.size])
    if w < 0 or h < 0:
        raise FormatError("negative flow dimensions")
    n = w * h * 2 * 4
    body = raw[_FLO_HEADER.size:]
    if len(body) < n:
        raise FormatError("unexpected EOF")
    if len(body) > n:
        raise FormatError("trailing data after flow field")
    return np.frombuffer(body, dtype="<f4").reshape(h, w, 2).copy()


# --- PFM scalar maps ------------------------------------------------------------

def write_scalar_map(path, data) -> None:
    data = np.asarray(data)
    if data.ndim != 2:
        raise FormatError("scalar map must be 2-D")
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(data[::-1]).astype("<f4").tobytes())


def read_scalar_map(path) -> np.ndarray:
    raw = _read_bytes(path)
    parts, pos = [], 0
    # three whitespace-terminated header tokens groups: id, "w h", scale
    for _ in range(3):
        end = raw.find(b"\n", pos)
        if end < 0:
            raise FormatError("unexpected EOF")
        parts.append(raw[pos:end].decode("ascii", errors="replace").strip())
        pos = end + 1
    ident, dims, scale = parts
    if ident == "PF":
        raise FormatError("colour PFM not supported")
    if ident != "Pf":
        raise FormatError("not a PFM file")
    try:
        w, h = (int(x) for x in dims.split())
        scale = float(scale)
    except ValueError:
        raise FormatError("malformed PFM header") from None
    if w < 0 or h < 0 or scale == 0:
        raise FormatError("malformed PFM header")
    dtype = "<f4" if scale < 0 else ">f4"
    body = raw[pos:]
    n = w * h * 4
    if len(body) < n:
        raise FormatError("unexpected EOF")
    if len(body) > n:
        raise FormatError("trailing data after PFM image")
    return np.frombuffer(body, dtype=dtype).reshape(h, w)[::-1].astype(np.float32)


# --- semantic scores --------------------------------------------------------------

def scores_sidecar(path) -> Path:
    return Path(path).with_suffix(".json")


def write_scores(path, scores) -> None:
    """Class-major float32 volume plus a JSON sidecar next to it (``.json`` suffix)."""
    scores = np.asarray(scores)
    if scores.ndim != 3 or scores.shape[2] != NUM_CLASSES:
        raise FormatError(f"scores must have shape (h, w, {NUM_CLASSES})")
    h, w = scores.shape[:2]
    Path(path).write_bytes(np.moveaxis(scores, 2, 0).astype("<f4").tobytes())
    scores_sidecar(path).write_text(json.dumps(
        {"width": w, "height": h, "classes": CLASS_NAMES}, indent=2))


def read_scores(path, sum_tol: float = 1e-3) -> np.ndarray:
    try:
        meta = json.loads(scores_sidecar(path).read_text())
        w, h, classes = int(meta["width"]), int(meta["height"]), list(meta["classes"])
    except OSError as e:
        raise FormatError(f"cannot read score sidecar: {e.strerror}") from None
    except (ValueError, KeyError, TypeError):
        raise FormatError("malformed score sidecar") from None
    if classes != CLASS_NAMES:
        raise FormatError("score classes do not match the expected class order")
    raw = _read_bytes(path)
    n = NUM_CLASSES * w * h * 4
    if len(raw) < n:
        raise FormatError("unexpected EOF")
    if len(raw) > n:
        raise FormatError("trailing data after score volume")
    vol = np.moveaxis(np.frombuffer(raw, dtype="<f4").reshape(NUM_CLASSES, h, w), 0, 2)
    if np.any(~np.isfinite(vol)) or np.any(vol < 0) or np.any(vol > 1):
        raise FormatError("scores must lie in [0, 1]")
    if np.any(np.abs(vol.sum(axis=2, dtype=np.float64) - 1.0) > sum_tol):
        raise FormatError("per-pixel scores do not sum to 1")
    return vol.copy()


# --- stixels ------------------------------------------------------------------------

def stixels_to_dict(columns, rig: CameraRig) -> dict:
    return {
        "image": {"w": int(rig.width), "h": int(rig.height), "w_s": int(rig.stixel_width)},
        "columns": [{
            "column_index": int(col.column_index),
            "stixels": [{"v_bottom": int(s.v_bottom), "v_top": int(s.v_top),
                         "type": TYPE_NAMES[int(s.stype)],
                         "class": CLASS_NAMES[int(s.sclass)],
                         "inv_depth": float(s.inv_depth),
                         "t_tilde": [float(s.t_tilde[0]), float(s.t_tilde[1])]}
                        for s in col.stixels],
        } for col in columns],
    }


def write_stixels(path, columns, rig: CameraRig) -> None:
    # json writes floats with repr, the shortest string that reads back exactly
    Path(path).write_text(json.dumps(stixels_to_dict(columns, rig), indent=1))


def stixels_from_dict(d: dict):
    """Returns ``(columns, (w, h, w_s))``; every column is validated."""
    try:
        img = d["image"]
        w, h, ws = int(img["w"]), int(img["h"]), int(img["w_s"])
        columns = []
        for c in d["columns"]:
            ci = int(c["column_index"])
            stx = []
            for s in c["stixels"]:
                if s["type"] not in TYPE_NAMES:
                    raise FormatError(f"unknown stixel type {s['type']!r}")
                if s["class"] not in CLASS_NAMES:
                    raise FormatError(f"unknown semantic class {s['class']!r}")
                tt = s.get("t_tilde", [0.0, 0.0])
                stx.append(Stixel(ci, int(s["v_bottom"]), int(s["v_top"]),
                                  StixelType(TYPE_NAMES.index(s["type"])),
                                  SemanticClass(CLASS_NAMES.index(s["class"])),
                                  float(s["inv_depth"]), (float(tt[0]), float(tt[1]))))
            columns.append(StixelColumn(ci, tuple(stx)))
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as e:
        raise FormatError(f"malformed stixel document: {e}") from None
    for col in columns:
        if not validate_column(col, h):
            raise FormatError(f"column {col.column_index} is not a valid stixel tiling")
    return columns, (w, h, ws)


def read_stixels(path):
    try:
        d = json.loads(Path(path).read_text())
    except OSError as e:
        raise FormatError(f"cannot read {path}: {e.strerror}") from None
    except ValueError:
        raise FormatError("stixel file is not valid JSON") from None
    return stixels_from_dict(d)


# --- JSON configs -------------------------------------------------------------------

def _read_json(path) -> dict:
    try:
        d = json.loads(Path(path).read_text())
    except OSError as e:
        raise FormatError(f"cannot read {path}: {e.strerror}") from None
    except ValueError:
        raise FormatError(f"{path} is not valid JSON") from None
    if not isinstance(d, dict):
        raise FormatError(f"{path} must hold a JSON object")
    return d


def write_camera(path, rig: CameraRig) -> None:
    Path(path).write_text(json.dumps(rig.to_dict(), indent=2))


def read_camera(path) -> CameraRig:
    try:
        return CameraRig.from_dict(_read_json(path))
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"invalid camera description: {e}") from None


def write_config(path, params: EnergyParams, stixel_width=None) -> None:
    d = {"energy": params.to_dict()}
    if stixel_width is not None:
        d["stixel_width"] = int(stixel_width)
    Path(path).write_text(json.dumps(d, indent=2))


def read_config(path):
    """``{"energy": {...}, "stixel_width": n}``, both optional.

    Returns ``(EnergyParams, stixel_width or None)``.
    """
    d = _read_json(path)
    unknown = set(d) - {"energy", "stixel_width"}
    if unknown:
        raise FormatError(f"unknown config keys: {sorted(unknown)}")
    try:
        params = EnergyParams.from_dict(d.get("energy", {}))
        ws = d.get("stixel_width")
        return params, (None if ws is None else int(ws))
    except (TypeError, ValueError) as e:
        raise FormatError(f"invalid config: {e}") from None


# --- visualisation --------------------------------------------------------------------

# inverse-depth lookup table, far (dark blue) to near (red)
DEPTH_LUT = np.array([
    [0, 0, 96], [0, 0, 160], [0, 48, 224], [0, 128, 255], [0, 200, 255],
    [64, 255, 192], [160, 255, 96], [255, 224, 0], [255, 128, 0], [224, 0, 0],
], dtype=float)

# one colour per semantic class, in class order
SEMANTIC_PALETTE = np.array([
    [128, 64, 128],    # road
    [244, 35, 232],    # sidewalk
    [152, 251, 152],   # terrain
    [70, 70, 70],      # building
    [220, 220, 0],     # poles_signage
    [107, 142, 35],    # vegetation
    [0, 0, 142],       # vehicle
    [119, 11, 32],     # two_wheeler
    [220, 20, 60],     # person
    [70, 130, 180],    # sky
], dtype=np.uint8)


def colorize_inv_depth(depth, max_inv_depth: float) -> np.ndarray:
    """RGB image of ``1/depth`` on [0, max_inv_depth]; +inf is the far end, invalid is black."""
    depth = np.asarray(depth, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(np.isposinf(depth), 0.0, 1.0 / depth)
    valid = np.isfinite(p) & (p >= 0) & ~np.isnan(depth) & ~(depth <= 0)
    t = np.clip(np.where(valid, p, 0.0) / max_inv_depth, 0.0, 1.0) * (len(DEPTH_LUT) - 1)
    i0 = np.floor(t).astype(int)
    i1 = np.minimum(i0 + 1, len(DEPTH_LUT) - 1)
    frac = (t - i0)[..., None]
    rgb = (1 - frac) * DEPTH_LUT[i0] + frac * DEPTH_LUT[i1]
    rgb[~valid] = 0
    return np.rint(rgb).astype(np.uint8)


def colorize_labels(labels) -> np.ndarray:
    labels = np.asarray(labels)
    out = np.zeros(labels.shape + (3,), dtype=np.uint8)
    ok = (labels >= 0) & (labels < NUM_CLASSES)
    out[ok] = SEMANTIC_PALETTE[labels[ok]]
    return out


def stixel_label_map(columns, rig: CameraRig) -> np.ndarray:
    labels = np.full((rig.height, rig.width), -1, dtype=int)
    ws = rig.stixel_width
    for col in columns:
        c = col.column_index
        for s in col.stixels:
            labels[s.v_top:s.v_bottom + 1, c * ws:(c + 1) * ws] = int(s.sclass)
    return labels


def write_ppm(path, rgb) -> None:
    rgb = np.asarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise FormatError("PPM image must have shape (h, w, 3)")
    h, w = rgb.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def read_ppm(path) -> np.ndarray:
    raw = _read_bytes(path)
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while end < len(raw) and not raw[end:end + 1].isspace():
            end += 1
        if end == pos:
            raise FormatError("unexpected EOF")
        tokens.append(raw[pos:end].decode("ascii", errors="replace"))
        pos = end
    if tokens[0] != "P6" or tokens[3] != "255":
        raise FormatError("not an 8-bit P6 PPM file")
    try:
        w, h = int(tokens[1]), int(tokens[2])
    except ValueError:
        raise FormatError("malformed PPM header") from None
    body = raw[pos + 1:]
    if len(body) != w * h * 3:
        raise FormatError("unexpected EOF" if len(body) < w * h * 3 else "trailing data")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).copy()


def render_visualization(source, mode: str, rig: CameraRig | None = None,
                         max_inv_depth: float | None = None) -> np.ndarray:
    """RGB preview of stixel columns (needs ``rig``), a depth map or a label map.

    ``mode`` is ``"depth"`` or ``"semantic"``.
    """
    from .metrics import stixel_depth_map

    is_stixels = isinstance(source, (list, tuple))
    if is_stixels and rig is None:
        raise ValueError("rendering stixels needs the camera rig")
    if mode == "depth":
        pmax = max_inv_depth if max_inv_depth is not None else EnergyParams().max_inv_depth
        depth = stixel_depth_map(source, rig) if is_stixels else source
        return colorize_inv_depth(depth, pmax)
    if mode == "semantic":
        labels = stixel_label_map(source, rig) if is_stixels else source
        return colorize_labels(labels)
    raise ValueError(f"unknown visualisation mode {mode!r}")


# --- input bundles ----------------------------------------------------------------------

def read_estimation_inputs(flow_path, var_path, scores_path, camera_path):
    """Flow, variance, scores and camera, checked against each other.

    Returns ``(flow, var, scores, rig)``.
    """
    flow = read_flow(flow_path)
    var = read_scalar_map(var_path)
    scores = read_scores(scores_path)
    rig = read_camera(camera_path)
    h, w = flow.shape[:2]
    if var.shape != (h, w) or scores.shape[:2] != (h, w):
        raise FormatError("flow, variance and score dimensions disagree")
    if (rig.height, rig.width) != (h, w):
        raise FormatError("camera image size does not match the inputs")
    if np.any(~(var > 0)):
        raise FormatError("flow variance must be positive everywhere")
    return flow, var, scores, rig
