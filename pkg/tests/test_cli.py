import json

import numpy as np
import pytest

from phacoar.cli import main
from phacoar.io import read_results

SMALL = ["--set", "kappa=4", "--set", "tau=4", "--set", "n_self=1", "--set", "n_cross=1",
         "--set", "heads=2", "--set", "epochs=3", "--set", "lr=0.005"]


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def scene(tmp_path_factory):
    out = tmp_path_factory.mktemp("scene")
    assert main(["synth", "--out", str(out), "--seed", "7", "--frames", "24", "--phases", "3",
                 "--with-features", "--dim", "32", "--spikes", "1"]) == 0
    return out


def test_synth_is_byte_identical(tmp_path, scene):
    again = tmp_path / "again"
    main(["synth", "--out", str(again), "--seed", "7", "--frames", "24", "--phases", "3",
          "--with-features", "--dim", "32", "--spikes", "1"])
    assert tree_bytes(again) == tree_bytes(scene)
    doc = json.loads((scene / "manifest.json").read_text())
    assert len(doc["frames"]) == 24 and doc["meta"]["K_s"] == 3


def test_run_eval_geometry_only(tmp_path, scene, capsys):
    run = tmp_path / "run"
    assert main(["run", "--manifest", str(scene / "manifest.json"), "--out", str(run),
                 "--geometry-only", "--svg"]) == 0
    recs = read_results(run / "results.jsonl")
    assert [r["index"] for r in recs] == list(range(24))
    assert len(list((run / "overlays").glob("*.svg"))) == 24
    assert (run / "timings.csv").read_text().startswith("index,phase_ms")
    ev = tmp_path / "eval"
    assert main(["eval", "--results", str(run / "results.jsonl"),
                 "--manifest", str(scene / "manifest.json"), "--out", str(ev)]) == 0
    report = json.loads((ev / "metrics.json").read_text())
    assert report["phase"]["acc"] == 100.0
    assert report["rotation"]["mean_deg"] < 0.5
    assert report["ellipse"]["center_error_mean_px"] < 1.0
    for name in ("confusion.csv", "ribbons.svg", "ribbons.csv", "ribbons.png", "confusion.png",
                 "rotation.csv", "rotation.png"):
        assert (ev / name).stat().st_size > 0
    assert "phase" in capsys.readouterr().out


def test_train_and_run_with_weights(tmp_path, scene):
    data = tmp_path / "data"
    assert main(["synth", "--features", "--out", str(data), "--seed", "7", "--phases", "3",
                 "--dim", "32", "--sequences", "2", "--duration", "6", "10"]) == 0
    weights = tmp_path / "model.lssat"
    assert main(["train", "--dataset", str(data / "dataset.json"), "--out", str(weights)] + SMALL) == 0
    curve = (tmp_path / "model.loss.csv").read_text().splitlines()
    assert curve[0] == "epoch,loss" and len(curve) == 4
    assert (tmp_path / "model.loss.png").stat().st_size > 0
    run = tmp_path / "run"
    assert main(["run", "--manifest", str(scene / "manifest.json"), "--out", str(run),
                 "--weights", str(weights), "--set", "hysteresis=1"]) == 0
    recs = read_results(run / "results.jsonl")
    assert all(len(r["probs"]) == 3 and abs(sum(r["probs"]) - 1) < 1e-9 for r in recs)
    assert all(r["phase"] == int(np.argmax(r["probs"])) for r in recs)


def test_render_png(tmp_path, scene):
    run = tmp_path / "run"
    main(["run", "--manifest", str(scene / "manifest.json"), "--out", str(run)])
    out = tmp_path / "render"
    assert main(["render", "--results", str(run / "results.jsonl"), "--manifest",
                 str(scene / "manifest.json"), "--out", str(out), "--frames", "0", "5", "--png"]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["frame_00000.png", "frame_00000.svg",
                                                     "frame_00005.png", "frame_00005.svg"]


def test_missing_mask_is_reported(tmp_path, scene, capsys):
    doc = json.loads((scene / "manifest.json").read_text())
    doc["frames"][3]["mask"] = "frames/gone.pgm"
    for f in doc["frames"]:
        for key in ("mask", "gray", "feature"):
            f[key] = str(scene / f[key])
    (tmp_path / "manifest.json").write_text(json.dumps(doc))
    code = main(["run", "--manifest", str(tmp_path / "manifest.json"), "--out", str(tmp_path / "run")])
    assert code == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "MissingInput" and "gone.pgm" in err["message"]
    assert not (tmp_path / "run" / "results.jsonl").exists()


def test_bad_config_key(tmp_path, scene, capsys):
    code = main(["run", "--manifest", str(scene / "manifest.json"), "--out", str(tmp_path),
                 "--set", "mu_curve=0.5"])
    assert code == 1
    assert "mu_curve" in capsys.readouterr().err
