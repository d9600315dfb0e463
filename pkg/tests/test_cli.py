import csv
import json

import pytest

from artpose.cli import main
from artpose.observation import load_ground_truth, load_scene
from artpose.results import EstimationResult

FAST = ["--particles", "10", "--iterations", "2"]


@pytest.fixture(scope="module")
def scenes(tmp_path_factory):
    out = tmp_path_factory.mktemp("scenes")
    assert main(["synth", "--scenes", "2", "--seed", "7", "--out", str(out)]) == 0
    return out


def _tree(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_print_config_round_trip(tmp_path, capsys):
    assert main(["estimate", "--method", "parts-pf", "--seed", "3", "--particles", "50", "--print-config"]) == 0
    text = capsys.readouterr().out
    doc = json.loads(text)
    assert doc["method"] == "parts-pf" and doc["seed"] == 3 and doc["inference"]["n_particles"] == 50
    (tmp_path / "run.json").write_text(text)
    assert main(["estimate", "--config", str(tmp_path / "run.json"), "--print-config"]) == 0
    assert capsys.readouterr().out == text


def test_synth_is_deterministic(scenes, tmp_path):
    manifests = sorted(scenes.glob("*/manifest.json"))
    assert len(manifests) == 2
    assert main(["synth", "--scenes", "2", "--seed", "7", "--out", str(tmp_path)]) == 0
    a, b = _tree(tmp_path), _tree(scenes)
    # the recorded config differs only in its output path
    ca, cb = (json.loads(t.pop(next(k for k in t if k.name == "synth_config.json"))) for t in (a, b))
    assert a == b
    ca["paths"].pop("out"), cb["paths"].pop("out")
    assert ca == cb


def test_synth_cluttered_applies_preset(tmp_path):
    assert main(["synth", "--scenes", "1", "--seed", "1", "--regime", "cluttered", "--out", str(tmp_path)]) == 0
    man = json.loads(next(tmp_path.glob("*/manifest.json")).read_text())
    assert man["regime"] == "cluttered"
    assert man["corruption"]["occlusion_rects"] and man["corruption"]["blur_radius"] > 0


def test_synth_missing_urdf(tmp_path, capsys):
    assert main(["synth", "--urdf", str(tmp_path / "none.urdf"), "--out", str(tmp_path / "o")]) == 1
    assert "URDF not found" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_bad_config_values(tmp_path):
    (tmp_path / "c.json").write_text('{"inference": {"n_particles": 0}}')
    assert main(["estimate", "--config", str(tmp_path / "c.json")]) == 1
    (tmp_path / "c.json").write_text('{"nonsense": 1}')
    assert main(["estimate", "--config", str(tmp_path / "c.json")]) == 1
    (tmp_path / "c.json").write_text("{")
    assert main(["estimate", "--config", str(tmp_path / "c.json")]) == 1


def test_estimate_writes_results_and_is_deterministic(scenes, tmp_path):
    args = ["estimate", "--scenes", str(scenes), "--method", "mp-rgbd", *FAST]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b"), "--threads", "2"]) == 0
    a, b = _tree(tmp_path / "a"), _tree(tmp_path / "b")
    assert a == b and len(a) == 4
    res = EstimationResult.load(tmp_path / "a" / "scene_0000__mp-rgbd__seed0.json")
    assert len(res.poses) == 4 and res.header["scene_id"] == "scene_0000"


def test_estimate_headers(scenes, tmp_path):
    one = str(scenes / "scene_0000")
    assert main(["estimate", "--scenes", one, "--method", "parts-pf", "--iterations", "1", "--out", str(tmp_path)]) == 0
    head = EstimationResult.load(tmp_path / "scene_0000__parts-pf__seed0.json").header
    assert head["inference"]["n_particles"] == 300 and head["inference"]["use_messages"] is False
    assert main(["estimate", "--scenes", one, "--method", "mp-rgbd-aug", "--particles", "10", "--iterations", "30", "--out", str(tmp_path)]) == 0
    head = EstimationResult.load(tmp_path / "scene_0000__mp-rgbd-aug__seed0.json").header
    sched = head["augment_schedule"]
    assert sched["alpha"] == 1.5 and sched["pool_size"] == 15
    assert sched["fractions"][0] == [0.05, 0.95, 0.0] and sched["fractions"][25] == [0.05, 0.45, 0.5]
    with open(tmp_path / "scene_0000__mp-rgbd-aug__seed0.diag.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["pool_size"] for r in rows} == {"15"}


def test_parts_pf_default_budget(scenes, tmp_path, capsys):
    assert main(["estimate", "--scenes", str(scenes), "--method", "parts-pf", "--print-config"]) == 0
    assert json.loads(capsys.readouterr().out)["inference"]["n_iterations"] is None
    from artpose.methods import inference_config

    cfg = inference_config("parts-pf")
    assert (cfg.n_particles, cfg.n_iterations, cfg.use_messages) == (300, 85, False)


def test_estimate_missing_manifest(tmp_path, capsys):
    (tmp_path / "scene_0000").mkdir()
    assert main(["estimate", "--scenes", str(tmp_path), "--out", str(tmp_path / "o")]) == 3
    assert "scene_0000/manifest.json" in capsys.readouterr().err
    assert main(["estimate", "--scenes", str(tmp_path / "absent")]) == 3


def test_estimate_nothing_visible_exit_code(scenes, tmp_path):
    import shutil

    import numpy as np

    from artpose.observation import save_heatmap

    d = tmp_path / "blind"
    shutil.copytree(scenes / "scene_0000", d)
    for f in d.glob("heat_*.hmap"):
        save_heatmap(np.zeros((240, 320), dtype=np.float32), f)
    assert main(["estimate", "--scenes", str(d), *FAST, "--out", str(tmp_path / "o")]) == 2


def _perfect_results(scenes, out):
    out.mkdir()
    for sdir in sorted(p for p in scenes.iterdir() if p.is_dir()):
        scene = load_scene(sdir)
        res = EstimationResult(
            poses=scene.gt,
            method="mp-rgbd",
            part_names=[p.name for p in scene.model.parts],
            header={"scene_id": scene.scene_id},
        )
        res.save(out / f"{scene.scene_id}__mp-rgbd__seed0.json")


def test_eval_perfect_results(scenes, tmp_path, capsys):
    _perfect_results(scenes, tmp_path / "res")
    args = ["eval", "--scenes", str(scenes), "--results", str(tmp_path / "res"), "--out", str(tmp_path / "ev")]
    assert main(args) == 0
    with open(tmp_path / "ev" / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 * 5
    assert all(float(r["m_cm"]) == 0.0 and r["pass4"] == "1" for r in rows)
    curve = (tmp_path / "ev" / "curve_mp-rgbd.csv").read_text().splitlines()
    assert len(curve) == 22 and curve[-1] == "10.0,1.000000"
    assert "pass@4cm" in capsys.readouterr().out
    assert (tmp_path / "ev" / "summary.txt").exists()


def test_eval_missing_ground_truth(scenes, tmp_path, capsys):
    import shutil

    root = tmp_path / "scenes"
    shutil.copytree(scenes, root)
    _perfect_results(root, tmp_path / "res")
    (root / "scene_0001" / "gt.json").unlink()
    args = ["eval", "--scenes", str(root), "--results", str(tmp_path / "res"), "--out", str(tmp_path / "ev")]
    assert main(args) == 3
    assert "scene_0001" in capsys.readouterr().err


def test_eval_part_mismatch_names_scene(scenes, tmp_path, capsys):
    _perfect_results(scenes, tmp_path / "res")
    f = tmp_path / "res" / "scene_0001__mp-rgbd__seed0.json"
    doc = json.loads(f.read_text())
    doc["parts"] = doc["parts"][:3]
    f.write_text(json.dumps(doc))
    args = ["eval", "--scenes", str(scenes), "--results", str(tmp_path / "res"), "--out", str(tmp_path / "ev")]
    assert main(args) == 1
    assert "scene_0001" in capsys.readouterr().err


def test_ground_truth_file_lists_joints(scenes, clamp):
    doc = json.loads((scenes / "scene_0000" / "gt.json").read_text())
    assert set(doc["joints"]) == {"jaw_mount", "slide", "handle_mount"}
    assert len(load_ground_truth(scenes / "scene_0000" / "gt.json", clamp)) == 4
