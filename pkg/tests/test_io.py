import json

import numpy as np
import pytest

from glimpsekit.geometry import BBox, Scene, SceneObject
from glimpsekit.io import (
    DETECTIONS_FIELDS,
    FormatError,
    dump_scene,
    load_detections,
    load_map,
    load_scene,
    save_map,
    save_scene,
    scene_to_dict,
    write_csv,
)
from glimpsekit.scenegen import GeneratorConfig, generate_scene


def test_scene_round_trip(tmp_path):
    scene = generate_scene(GeneratorConfig(seed=4))
    p = tmp_path / "s.json"
    save_scene(scene, p)
    back = load_scene(p)
    assert back == scene
    save_scene(back, tmp_path / "t.json")
    assert p.read_bytes() == (tmp_path / "t.json").read_bytes()


def _write(tmp_path, d):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(d))
    return p


def _base():
    return scene_to_dict(Scene(100, 80, [SceneObject(0, 0, BBox(1, 1, 5, 5)), SceneObject(1, 2, BBox(10, 10, 5, 5))]))


def test_zero_width_names_field(tmp_path):
    d = _base()
    d["objects"][1]["w"] = 0
    with pytest.raises(FormatError) as err:
        load_scene(_write(tmp_path, d))
    assert err.value.field == "objects[1].w"


def test_out_of_bounds_rejected(tmp_path):
    d = _base()
    d["objects"][0]["y"] = 78
    with pytest.raises(FormatError, match="objects\\[0\\].h"):
        load_scene(_write(tmp_path, d))


def test_duplicate_id_rejected(tmp_path):
    d = _base()
    d["objects"][1]["id"] = 0
    with pytest.raises(FormatError, match="duplicate"):
        load_scene(_write(tmp_path, d))


def test_malformed_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{nope")
    with pytest.raises(FormatError):
        load_scene(p)


def test_dump_is_stable():
    s = Scene(10, 10, [SceneObject(0, 0, BBox(1, 2, 3, 4))])
    assert dump_scene(s).endswith("}\n")
    assert json.loads(dump_scene(s))["objects"][0] == {"id": 0, "class_id": 0, "x": 1, "y": 2, "w": 3, "h": 4}


def test_map_round_trip(tmp_path):
    m = np.random.default_rng(0).random((5, 7))
    save_map(m, tmp_path / "m.objmap")
    back = load_map(tmp_path / "m.objmap")
    assert back.shape == (5, 7)
    assert np.abs(back - m).max() <= 1e-9
    assert (tmp_path / "m.objmap").read_text().startswith("OBJMAP v1 7 5\n")


def test_map_row_count_mismatch(tmp_path):
    p = tmp_path / "m.objmap"
    p.write_text("OBJMAP v1 4 4\n" + "0 0 0 0\n" * 3)
    with pytest.raises(FormatError, match="4 rows, found 3"):
        load_map(p)


def test_map_column_count_mismatch(tmp_path):
    p = tmp_path / "m.objmap"
    p.write_text("OBJMAP v1 3 2\n0 0 0\n0 0\n")
    with pytest.raises(FormatError, match="row\\[1\\]"):
        load_map(p)


def test_map_value_range(tmp_path):
    p = tmp_path / "m.objmap"
    p.write_text("OBJMAP v1 2 1\n0.5 1.5\n")
    with pytest.raises(FormatError, match="\\[0, 1\\]"):
        load_map(p)
    assert load_map(p, objectness=False)[0, 1] == 1.5


def test_map_bad_header(tmp_path):
    p = tmp_path / "m.objmap"
    p.write_text("OBJMAP v2 1 1\n0\n")
    with pytest.raises(FormatError):
        load_map(p)


def test_load_detections(tmp_path):
    p = tmp_path / "d.csv"
    write_csv(
        p,
        DETECTIONS_FIELDS,
        [["a", 0, 1, 0, 0, 5, 5, 0.9], ["a", 2, 0, 10, 10, 5, 5, 0.2], ["b", 1, 0, 1, 1, 2, 2, 0.5]],
    )
    dets = load_detections(p)
    assert sorted(dets) == ["a", "b"]
    assert sorted(dets["a"]) == [0, 2]
    assert dets["a"][0][0].box == BBox(0, 0, 5, 5) and dets["a"][0][0].class_id == 1
    assert 2 not in load_detections(p, score_threshold=0.5)["a"]


def test_load_detections_bad_row(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("scene_id,glimpse_step,class_id,x,y,w,h,score\na,0,0,0,0,0,5,1.0\n")
    with pytest.raises(FormatError, match="row\\[0\\]"):
        load_detections(p)


def test_load_detections_missing_column(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("scene_id,class_id\n")
    with pytest.raises(FormatError, match="missing columns"):
        load_detections(p)
