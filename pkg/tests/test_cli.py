import json
import logging
import subprocess
import sys

import numpy as np
import pytest

from monostixels import io
from monostixels.cli import main
from monostixels.synthworld import standard_scene

FILES = ["flow.flo", "var.pfm", "scores.raw", "scores.json", "camera.json", "gt_depth.pfm",
         "gt_labels.raw", "gt_labels.json", "moving.pfm", "gt_stixels.json", "scene.json"]


@pytest.fixture
def scene_file(tmp_path):
    sc = standard_scene(height=40, width=48, flow_sigma=0.3, outlier_fraction=0.1,
                        confusion=0.2)
    path = tmp_path / "scene.json"
    path.write_text(json.dumps(sc.to_dict()))
    return path


def _synth(scene_file, out, seed=0):
    assert main(["synth", "--scene", str(scene_file), "--seed", str(seed), "--out", str(out)]) == 0


def _estimate(d, out, *extra):
    return main(["estimate", "--flow", str(d / "flow.flo"), "--var", str(d / "var.pfm"),
                 "--scores", str(d / "scores.raw"), "--camera", str(d / "camera.json"),
                 "--out", str(out), *extra])


def test_synth_is_deterministic(tmp_path, scene_file):
    _synth(scene_file, tmp_path / "a")
    _synth(scene_file, tmp_path / "b")
    for name in FILES:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_seed_changes_only_noisy_files(tmp_path, scene_file):
    _synth(scene_file, tmp_path / "a", seed=1)
    _synth(scene_file, tmp_path / "b", seed=2)
    differ = {n for n in FILES
              if (tmp_path / "a" / n).read_bytes() != (tmp_path / "b" / n).read_bytes()}
    assert differ == {"flow.flo"}


def test_synth_errors(tmp_path, capsys):
    assert main(["synth", "--scene", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) != 0
    assert "error:" in capsys.readouterr().err
    (tmp_path / "bad.json").write_text('{"camera": {}}')
    assert main(["synth", "--scene", str(tmp_path / "bad.json"), "--out", str(tmp_path)]) != 0


def test_estimate_thread_independent(tmp_path, scene_file, caplog):
    caplog.set_level(logging.INFO, logger="monostixels")
    _synth(scene_file, tmp_path / "d")
    assert _estimate(tmp_path / "d", tmp_path / "t1.json", "--threads", "1") == 0
    assert _estimate(tmp_path / "d", tmp_path / "t4.json", "--threads", "4") == 0
    assert (tmp_path / "t1.json").read_bytes() == (tmp_path / "t4.json").read_bytes()
    assert any("columns=12" in r.getMessage() and "total_energy=" in r.getMessage()
               for r in caplog.records)


def test_estimate_dimension_mismatch(tmp_path, scene_file, capsys):
    _synth(scene_file, tmp_path / "d")
    io.write_scalar_map(tmp_path / "d" / "var.pfm", np.ones((40, 47)))
    assert _estimate(tmp_path / "d", tmp_path / "o.json") != 0
    assert "dimensions disagree" in capsys.readouterr().err


def test_stixel_width_from_config(tmp_path):
    sc = standard_scene(height=32, width=40, stixel_width=5)
    (tmp_path / "scene.json").write_text(json.dumps(sc.to_dict()))
    _synth(tmp_path / "scene.json", tmp_path / "d")
    counts = {}
    for ws in (1, 5):
        cfg = tmp_path / f"cfg{ws}.json"
        cfg.write_text(json.dumps({"energy": {}, "stixel_width": ws}))
        out = tmp_path / f"s{ws}.json"
        assert _estimate(tmp_path / "d", out, "--config", str(cfg)) == 0
        cols, (_, _, got) = io.read_stixels(out)
        assert got == ws and len(cols) == 40 // ws
        counts[ws] = sum(len(c.stixels) for c in cols)
    assert 2.5 <= counts[1] / counts[5] <= 10


def test_eval_render_and_baseline(tmp_path, scene_file):
    d = tmp_path / "d"
    _synth(scene_file, d)
    assert main(["eval", "--pred", str(d / "gt_depth.pfm"), "--gt", str(d / "gt_depth.pfm"),
                 "--masks", str(d / "moving.pfm"), "--out", str(tmp_path / "r.json")]) == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["overall"]["rmse"] == 0.0 and rep["overall"]["rel_error"] == 0.0
    assert rep["overall"]["thresholds"] == [1.0] * 4

    assert main(["render", "--in", str(d / "gt_depth.pfm"), "--out",
                 str(tmp_path / "depth.ppm")]) == 0
    rgb = io.read_ppm(tmp_path / "depth.ppm").astype(int)
    redness = rgb[..., 0] - rgb[..., 2]
    col = 47           # right image border: ground only below the horizon
    assert redness[-1, col] > redness[25, col]
    assert rgb[0, col].tolist() == io.DEPTH_LUT[0].astype(int).tolist() or rgb[0, col].sum() == 0

    assert main(["render", "--in", str(d / "gt_stixels.json"), "--mode", "semantic",
                 "--out", str(tmp_path / "sem.ppm")]) == 0
    assert io.read_ppm(tmp_path / "sem.ppm").shape == (40, 48, 3)

    assert main(["baseline-sfm", "--flow", str(d / "flow.flo"), "--camera",
                 str(d / "camera.json"), "--out", str(tmp_path / "sfm.pfm")]) == 0
    assert io.read_scalar_map(tmp_path / "sfm.pfm").shape == (40, 48)


def test_eval_needs_camera_for_stixels(tmp_path, scene_file):
    d = tmp_path / "d"
    _synth(scene_file, d)
    args = ["eval", "--pred", str(d / "gt_stixels.json"), "--gt", str(d / "gt_depth.pfm"),
            "--out", str(tmp_path / "r.json")]
    assert main(args) != 0
    assert main(args + ["--camera", str(d / "camera.json")]) == 0
    assert json.loads((tmp_path / "r.json").read_text())["compactness"] > 0


def test_probe_timings_monotone(tmp_path):
    out = tmp_path / "t.json"
    assert main(["probe", "--heights", "8,48,160", "--columns", "3", "--out", str(out)]) == 0
    rows = json.loads(out.read_text())
    times = [r["seconds_per_column"] for r in rows]
    assert [r["h"] for r in rows] == [8, 48, 160]
    assert times == sorted(times)
    assert main(["probe", "--heights", "a,b", "--out", str(out)]) != 0


def test_end_to_end_report_deterministic(tmp_path, scene_file):
    reports = []
    for run in ("x", "y"):
        d = tmp_path / run
        _synth(scene_file, d, seed=3)
        assert _estimate(d, d / "stixels.json", "--threads", "2") == 0
        assert main(["eval", "--pred", str(d / "stixels.json"), "--gt", str(d / "gt_depth.pfm"),
                     "--masks", str(d / "moving.pfm"), "--camera", str(d / "camera.json"),
                     "--out", str(d / "report.json")]) == 0
        reports.append((d / "report.json").read_bytes())
    assert reports[0] == reports[1]


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "monostixels", "--help"], capture_output=True,
                       text=True)
    assert r.returncode == 0 and "estimate" in r.stdout
