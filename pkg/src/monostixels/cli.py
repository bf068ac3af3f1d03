"""Command-line driver: synth, estimate, baseline-sfm, render, eval, probe."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .core import CameraRig, EnergyParams, FrameMotion, NUM_CLASSES
from .inference import complexity_probe, segment_image
from .metrics import compactness, evaluate, sfm_baseline, stixel_depth_map
from .synthworld import SceneSpec, oncoming_scene, render, standard_scene

log = logging.getLogger("monostixels")

PRESETS = {"standard": standard_scene, "oncoming": oncoming_scene}


class CliError(Exception):
    pass


def _write_camera(path, rig: CameraRig, motion: FrameMotion) -> None:
    d = rig.to_dict()
    d["motion"] = motion.to_dict()
    Path(path).write_text(json.dumps(d, indent=2))


def _read_camera(path):
    rig = io.read_camera(path)
    d = json.loads(Path(path).read_text())
    if "motion" not in d:
        raise CliError(f"{path} has no 'motion' entry")
    try:
        motion = FrameMotion.from_dict(d["motion"])
    except (KeyError, TypeError, ValueError) as e:
        raise CliError(f"invalid motion in {path}: {e}") from None
    return rig, motion


def cmd_synth(args) -> None:
    if args.preset:
        scene = PRESETS[args.preset]()
    else:
        try:
            scene = SceneSpec.from_dict(json.loads(Path(args.scene).read_text()))
        except OSError as e:
            raise CliError(f"cannot read scene {args.scene}: {e.strerror}") from None
        except (KeyError, TypeError, ValueError) as e:
            raise CliError(f"invalid scene {args.scene}: {e}") from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    r = render(scene, args.seed)
    io.write_flow(out / "flow.flo", r.flow)
    io.write_scalar_map(out / "var.pfm", r.var)
    io.write_scores(out / "scores.raw", r.scores)
    _write_camera(out / "camera.json", scene.rig, scene.motion)
    io.write_scalar_map(out / "gt_depth.pfm", r.depth)
    io.write_scores(out / "gt_labels.raw", np.eye(NUM_CLASSES)[r.labels])
    io.write_scalar_map(out / "moving.pfm", r.moving.astype(np.float32))
    io.write_stixels(out / "gt_stixels.json", r.stixels, scene.rig)
    (out / "scene.json").write_text(json.dumps(scene.to_dict(), indent=2))
    log.info("wrote synthetic bundle to %s", out)


def cmd_estimate(args) -> None:
    flow, var, scores, _ = io.read_estimation_inputs(args.flow, args.var, args.scores,
                                                     args.camera)
    rig, motion = _read_camera(args.camera)
    params = EnergyParams()
    if args.config:
        params, ws = io.read_config(args.config)
        if ws is not None:
            rig = rig.with_size(rig.width, rig.height, ws)
    columns = segment_image(flow, var, scores, rig, motion, params, threads=args.threads)
    io.write_stixels(args.out, columns, rig)
    n = sum(len(c.stixels) for c in columns)
    log.info("columns=%d mean_stixels=%.3f total_energy=%.6f", len(columns),
             n / max(len(columns), 1), float(sum(c.energy for c in columns)))


def cmd_baseline_sfm(args) -> None:
    flow = io.read_flow(args.flow)
    rig, motion = _read_camera(args.camera)
    if flow.shape[:2] != (rig.height, rig.width):
        raise CliError("flow size does not match the camera")
    try:
        depth = sfm_baseline(flow, rig, motion)
    except ValueError as e:
        raise CliError(str(e)) from None
    io.write_scalar_map(args.out, depth)


def _load_depth(path, camera):
    """Depth map from a PFM or from a stixel file (needs the camera); also the stixels."""
    if str(path).endswith(".json"):
        columns, _ = io.read_stixels(path)
        if camera is None:
            raise CliError("--camera is required to turn stixels into depth")
        rig, _ = _read_camera(camera)
        return stixel_depth_map(columns, rig), columns
    return io.read_scalar_map(path).astype(float), None


def cmd_render(args) -> None:
    src = str(args.input)
    if args.mode == "semantic":
        if src.endswith(".json"):
            columns, (w, h, ws) = io.read_stixels(src)
            rig = CameraRig.simple(1.0, 0.0, 0.0, w, h, stixel_width=ws)
            labels = io.stixel_label_map(columns, rig)
        elif src.endswith(".raw"):
            labels = np.argmax(io.read_scores(src), axis=2)
        else:
            labels = io.read_scalar_map(src).astype(int)
        rgb = io.colorize_labels(labels)
    else:
        depth, _ = _load_depth(src, args.camera)
        rgb = io.colorize_inv_depth(depth, args.max_inv_depth)
    io.write_ppm(args.out, rgb)


def cmd_eval(args) -> None:
    pred, columns = _load_depth(args.pred, args.camera)
    gt = io.read_scalar_map(args.gt).astype(float)
    if pred.shape != gt.shape:
        raise CliError("prediction and ground truth differ in size")
    moving = None
    if args.masks:
        moving = io.read_scalar_map(args.masks) > 0.5
    try:
        report = evaluate(pred, gt, moving,
                          compactness(columns) if columns is not None else None)
    except ValueError as e:
        raise CliError(str(e)) from None
    Path(args.out).write_text(report.to_json())


def cmd_probe(args) -> None:
    try:
        heights = [int(x) for x in args.heights.split(",") if x.strip()]
    except ValueError:
        raise CliError("--heights must be a comma-separated list of integers") from None
    if not heights or min(heights) < 1:
        raise CliError("heights must be positive")
    table = complexity_probe(heights, n_columns=args.columns, seed=args.seed)
    Path(args.out).write_text(json.dumps(
        [{"h": h, "seconds_per_column": t} for h, t in table], indent=2))
    for h, t in table:
        log.info("h=%d median_seconds_per_column=%.6f", h, t)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="monostixels",
                                description="Stixel estimation from monocular optical flow.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="render a synthetic scene into an input bundle")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--scene", help="scene JSON")
    g.add_argument("--preset", choices=sorted(PRESETS))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("estimate", help="segment every column into stixels")
    s.add_argument("--flow", required=True)
    s.add_argument("--var", required=True)
    s.add_argument("--scores", required=True)
    s.add_argument("--camera", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("baseline-sfm", help="two-view triangulation depth")
    s.add_argument("--flow", required=True)
    s.add_argument("--camera", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_baseline_sfm)

    s = sub.add_parser("render", help="PPM preview of depth or semantics")
    s.add_argument("--in", dest="input", required=True,
                   help="stixels .json, depth/label .pfm or scores .raw")
    s.add_argument("--mode", choices=("depth", "semantic"), default="depth")
    s.add_argument("--camera", help="needed for depth from stixels")
    s.add_argument("--max-inv-depth", type=float, default=EnergyParams().max_inv_depth)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("eval", help="depth metrics against ground truth")
    s.add_argument("--pred", required=True, help="stixels .json or depth .pfm")
    s.add_argument("--gt", required=True)
    s.add_argument("--masks", help="moving-object mask .pfm")
    s.add_argument("--camera", help="needed when --pred is a stixel file")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("probe", help="per-column run time against image height")
    s.add_argument("--heights", default="64,128,256")
    s.add_argument("--columns", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_probe)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (CliError, io.FormatError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
