import csv
import json
import subprocess
import sys

import pytest

from glimpsekit.cli import main
from glimpsekit.experiment import derive_seed
from glimpsekit.geometry import BBox, Scene, SceneObject
from glimpsekit.io import DETECTIONS_FIELDS, METRICS_FIELDS, TRAJECTORY_FIELDS, save_scene, write_csv


def _write_config(path, d):
    path.write_text(json.dumps(d))
    return path


def _rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def _tile_scenes(tmp_path):
    """Scenes whose objects each sit inside one 256 px tile of a 1024 px raster."""
    sdir = tmp_path / "scenes"
    sdir.mkdir()
    save_scene(
        Scene(1024, 1024, [SceneObject(0, 0, BBox(10, 10, 30, 30)), SceneObject(1, 1, BBox(600, 300, 40, 20))]),
        sdir / "alpha.json",
    )
    save_scene(
        Scene(1024, 1024, [SceneObject(0, 1, BBox(800, 800, 50, 50)), SceneObject(5, 0, BBox(260, 520, 16, 16))]),
        sdir / "beta.json",
    )
    return sdir


def test_empty_policies_fail(tmp_path, capsys):
    cfg = _write_config(tmp_path / "c.json", {"mode": "closedset", "scenes": {"generator": {}}, "policies": []})
    assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path / "out")]) != 0
    assert "no policies configured" in capsys.readouterr().err


def test_missing_config_fails(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "nope.json")]) == 1
    assert "cannot read config" in capsys.readouterr().err


def test_full_tiling_oracle_recall_one(tmp_path):
    _tile_scenes(tmp_path)
    cfg = _write_config(
        tmp_path / "c.json",
        {
            "mode": "closedset",
            "seed": 5,
            "scenes": {"dir": "scenes"},
            "objectness": {"source": "groundtruth"},
            "geometry": {"d_gist": 128, "d_glimpse": 256},
            "policies": [{"kind": "grid_fixed", "n_glimpse": 16, "coverage_threshold": 1.0}],
        },
    )
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out-dir", str(out)]) == 0
    metrics = _rows(out / "metrics.csv")
    assert list(metrics[0]) == METRICS_FIELDS
    for sid in ("alpha", "beta"):
        final = [r for r in metrics if r["scene_id"] == sid and r["k"] == "16" and r["class_id"] == "-1"]
        assert len(final) == 1 and float(final[0]["recall"]) == 1.0
    log = _rows(out / "glimpses_grid_fixed.csv")
    assert len(log) == 32
    assert log[-1]["stop_reason"] == "full_image"


def test_run_twice_identical_bytes(tmp_path):
    d = {
        "mode": "closedset",
        "seed": 42,
        "scenes": {"generator": {"width": 1024, "height": 1024}, "count": 3},
        "objectness": {"source": "groundtruth_degraded"},
        "geometry": {"d_gist": 64, "d_glimpse": 256},
        "policies": [{"kind": "unet", "n_glimpse": 4}, {"kind": "random", "n_glimpse": 4}, {"kind": "entropy", "n_glimpse": 4}],
    }
    cfg = _write_config(tmp_path / "c.json", d)
    assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path / "a")]) == 0
    assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path / "b")]) == 0
    for name in ("metrics.csv", "glimpses_unet.csv", "glimpses_random.csv", "glimpses_entropy.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path / "c"), "--seed", "43"]) == 0
    assert (tmp_path / "a" / "metrics.csv").read_bytes() != (tmp_path / "c" / "metrics.csv").read_bytes()


def test_openset_run(tmp_path):
    cfg = _write_config(
        tmp_path / "c.json",
        {
            "mode": "openset",
            "seed": 3,
            "scenes": {"generator": {"width": 1024, "height": 1024}, "count": 2},
            "geometry": {"d_gist": 64, "tile_size": 256},
            "policies": [{"kind": "g_ml_mstr"}, {"kind": "g_map_mstr"}, {"kind": "local_current"}],
            "openset": {"target_class": 0, "embedding_dim": 16, "noise_std": 0.5},
        },
    )
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out-dir", str(out)]) == 0
    traj = _rows(out / "trajectories.csv")
    assert list(traj[0]) == TRAJECTORY_FIELDS
    assert len(traj) == 2 * 3 * 16
    for r in traj:
        assert float(r["posterior"]) == float(r["likelihood"]) * float(r["prior"])
    aurc = {r["policy"]: float(r["mean_aurc"]) for r in _rows(out / "openset_aurc.csv")}
    assert set(aurc) == {"g_ml_mstr", "g_map_mstr", "local_current"}
    summary = _rows(out / "openset_summary.csv")
    assert float(summary[-1]["normalized_looks"]) == 1.0 and float(summary[-1]["mean_recall"]) == 1.0


def test_gen_scenes_then_file_sources(tmp_path):
    gen = _write_config(
        tmp_path / "g.json", {"generator": {"width": 512, "height": 512}, "count": 2, "seed": 9, "d_gist": 32}
    )
    sdir = tmp_path / "gen"
    assert main(["gen-scenes", "--config", str(gen), "--out-dir", str(sdir)]) == 0
    names = sorted(p.name for p in sdir.iterdir())
    assert names == [
        "scene_0000.json", "scene_0000.objmap", "scene_0000_gist.objmap",
        "scene_0001.json", "scene_0001.objmap", "scene_0001_gist.objmap",
    ]
    cfg = _write_config(
        tmp_path / "c.json",
        {
            "mode": "closedset",
            "scenes": {"dir": "gen"},
            "objectness": {"source": "file", "dir": "gen"},
            "gist_images": {"dir": "gen"},
            "geometry": {"d_gist": 32, "d_glimpse": 128},
            "policies": [{"kind": "unet_fixed", "n_glimpse": 3}, {"kind": "entropy", "n_glimpse": 3}],
        },
    )
    assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path / "out")]) == 0
    assert {r["scene_id"] for r in _rows(tmp_path / "out" / "metrics.csv")} == {"scene_0000", "scene_0001"}


def test_external_detections(tmp_path):
    sdir = _tile_scenes(tmp_path)
    dets = tmp_path / "dets.csv"
    write_csv(
        dets,
        DETECTIONS_FIELDS,
        [
            ["alpha", 0, 0, 10, 10, 30, 30, 0.9],
            ["alpha", 1, 1, 600, 300, 40, 20, 0.3],
            ["beta", 0, 1, 0, 0, 10, 10, 0.8],
        ],
    )
    out = tmp_path / "eval.csv"
    assert main(["eval", "--detections", str(dets), "--scenes", str(sdir), "--out", str(out)]) == 0
    rows = _rows(out)
    alpha = [r for r in rows if r["scene_id"] == "alpha" and r["class_id"] == "-1" and r["k"] == "2"]
    assert float(alpha[0]["recall"]) == 1.0
    beta = [r for r in rows if r["scene_id"] == "beta" and r["class_id"] == "1" and r["k"] == "1"]
    assert float(beta[0]["precision"]) == 0.0

    out2 = tmp_path / "eval2.csv"
    args = ["eval", "--detections", str(dets), "--scenes", str(sdir), "--out", str(out2), "--score-threshold", "0.5"]
    assert main(args) == 0
    alpha = [r for r in _rows(out2) if r["scene_id"] == "alpha" and r["class_id"] == "-1"]
    assert float(alpha[-1]["recall"]) == 0.5


def test_external_detector_in_run(tmp_path):
    _tile_scenes(tmp_path)
    dets = tmp_path / "dets.csv"
    write_csv(dets, DETECTIONS_FIELDS, [["alpha", 0, 0, 10, 10, 30, 30, 0.9]])
    cfg = _write_config(
        tmp_path / "c.json",
        {
            "mode": "closedset",
            "scenes": {"dir": "scenes"},
            "detector": {"kind": "external", "path": "dets.csv"},
            "geometry": {"d_gist": 128, "d_glimpse": 256},
            "policies": [{"kind": "unet", "n_glimpse": 2}],
        },
    )
    assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path / "out")]) == 0
    rows = _rows(tmp_path / "out" / "metrics.csv")
    alpha0 = [r for r in rows if r["scene_id"] == "alpha" and r["class_id"] == "0"]
    assert float(alpha0[-1]["recall"]) == 1.0


def test_missing_detections_file(tmp_path, capsys):
    _tile_scenes(tmp_path)
    cfg = _write_config(
        tmp_path / "c.json",
        {
            "mode": "closedset",
            "scenes": {"dir": "scenes"},
            "detector": {"kind": "external", "path": "missing.csv"},
            "policies": [{"kind": "unet"}],
        },
    )
    assert main(["run", "--config", str(cfg)]) == 1
    assert "detections file not found" in capsys.readouterr().err


def test_derive_seed_is_role_separated():
    assert derive_seed(7, 0x01) != derive_seed(7, 0x02)
    assert derive_seed(7, 0x01, 0) == 7 ^ 0x01
    assert 0 <= derive_seed(2**64 - 1, 5, 10**6) < 2**64


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "glimpsekit", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "gen-scenes" in r.stdout


@pytest.mark.parametrize("threads", ["1", "3"])
def test_thread_setting_does_not_change_output(tmp_path, monkeypatch, threads):
    cfg = _write_config(
        tmp_path / "c.json",
        {
            "mode": "closedset",
            "seed": 1,
            "scenes": {"generator": {"width": 1024, "height": 1024}, "count": 4},
            "geometry": {"d_gist": 64, "d_glimpse": 256},
            "policies": [{"kind": "grid", "n_glimpse": 4}],
        },
    )
    monkeypatch.setenv("GLIMPSEKIT_THREADS", "0")
    assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path / "auto")]) == 0
    monkeypatch.setenv("GLIMPSEKIT_THREADS", threads)
    assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path / "n")]) == 0
    assert (tmp_path / "auto" / "metrics.csv").read_bytes() == (tmp_path / "n" / "metrics.csv").read_bytes()
