"""Readers and writers for scenes (JSON), maps (OBJMAP v1) and result CSVs."""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Union

import numpy as np

from .detection import Detection
from .geometry import BBox, GeometryError, Scene, SceneObject

PathLike = Union[str, Path]

OBJMAP_MAGIC = "OBJMAP v1"

GLIMPSE_LOG_FIELDS = [
    "scene_id", "step", "row_gist", "col_gist", "row_vhr", "col_vhr",
    "d_glimpse", "cum_coverage", "stop_reason",
]
METRICS_FIELDS = ["policy", "scene_id", "k", "class_id", "precision", "recall", "f1"]
DETECTIONS_FIELDS = ["scene_id", "glimpse_step", "class_id", "x", "y", "w", "h", "score"]
TRAJECTORY_FIELDS = [
    "scene_id", "policy", "step", "tile_i", "tile_j", "likelihood", "prior",
    "posterior", "recall", "normalized_looks",
]


class FormatError(ValueError):
    """Malformed input file. ``field`` names the offending location when known."""

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


# ---------------------------------------------------------------- scenes


def scene_to_dict(scene: Scene) -> dict:
    return {
        "width": scene.width,
        "height": scene.height,
        "objects": [
            {"id": o.id, "class_id": o.class_id, "x": o.box.x, "y": o.box.y, "w": o.box.w, "h": o.box.h}
            for o in scene.objects
        ],
    }


def _int_field(d: dict, key: str, path: str) -> int:
    if key not in d:
        raise FormatError("missing", f"{path}{key}")
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise FormatError(f"expected integer, got {v!r}", f"{path}{key}")
    return v


def scene_from_dict(d: dict) -> Scene:
    if not isinstance(d, dict):
        raise FormatError("scene must be a JSON object")
    width = _int_field(d, "width", "")
    height = _int_field(d, "height", "")
    if width <= 0:
        raise FormatError("must be positive", "width")
    if height <= 0:
        raise FormatError("must be positive", "height")
    raw = d.get("objects")
    if not isinstance(raw, list):
        raise FormatError("expected a list", "objects")
    objects = []
    seen = set()
    for k, o in enumerate(raw):
        p = f"objects[{k}]."
        if not isinstance(o, dict):
            raise FormatError("expected an object", f"objects[{k}]")
        vals = {key: _int_field(o, key, p) for key in ("id", "class_id", "x", "y", "w", "h")}
        for key in ("w", "h"):
            if vals[key] <= 0:
                raise FormatError("must be positive", p + key)
        for key in ("x", "y", "class_id"):
            if vals[key] < 0:
                raise FormatError("must be non-negative", p + key)
        if vals["x"] + vals["w"] > width:
            raise FormatError(f"box extends past width {width}", p + "w")
        if vals["y"] + vals["h"] > height:
            raise FormatError(f"box extends past height {height}", p + "h")
        if vals["id"] in seen:
            raise FormatError(f"duplicate id {vals['id']}", p + "id")
        seen.add(vals["id"])
        objects.append(SceneObject(vals["id"], vals["class_id"], BBox(vals["x"], vals["y"], vals["w"], vals["h"])))
    try:
        return Scene(width, height, objects)
    except GeometryError as exc:
        raise FormatError(str(exc)) from exc


def dump_scene(scene: Scene) -> str:
    return json.dumps(scene_to_dict(scene), indent=2) + "\n"


def save_scene(scene: Scene, path: PathLike) -> None:
    Path(path).write_text(dump_scene(scene), encoding="utf-8")


def load_scene(path: PathLike) -> Scene:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed JSON in {path}: {exc}") from exc
    return scene_from_dict(d)


# ---------------------------------------------------------------- maps


def save_map(grid: np.ndarray, path: PathLike) -> None:
    grid = np.asarray(grid, dtype=np.float64)
    h, w = grid.shape
    lines = [f"{OBJMAP_MAGIC} {w} {h}"]
    lines.extend(" ".join(repr(float(v)) for v in row) for row in grid)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def load_map(path: PathLike, objectness: bool = True) -> np.ndarray:
    """Read an OBJMAP v1 grid. With ``objectness`` values must lie in [0, 1]."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise FormatError(f"{path}: empty file", "header")
    head = lines[0].split()
    if len(head) != 4 or " ".join(head[:2]) != OBJMAP_MAGIC:
        raise FormatError(f"{path}: expected '{OBJMAP_MAGIC} <width> <height>'", "header")
    try:
        w, h = int(head[2]), int(head[3])
    except ValueError as exc:
        raise FormatError(f"{path}: bad dimensions", "header") from exc
    rows = lines[1:]
    if len(rows) != h:
        raise FormatError(f"{path}: header says {h} rows, found {len(rows)}", "rows")
    grid = np.empty((h, w))
    for r, line in enumerate(rows):
        toks = line.split()
        if len(toks) != w:
            raise FormatError(f"{path}: header says {w} columns, found {len(toks)}", f"row[{r}]")
        try:
            grid[r] = [float(t) for t in toks]
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}", f"row[{r}]") from exc
    if not np.all(np.isfinite(grid)):
        raise FormatError(f"{path}: non-finite value", "values")
    if objectness and (grid.min() < 0 or grid.max() > 1):
        raise FormatError(f"{path}: objectness values must lie in [0, 1]", "values")
    return grid


# ---------------------------------------------------------------- CSV


def fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return ""
        return repr(v)
    return str(v)


def write_csv(path: PathLike, fields: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(fields)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_csv(path: PathLike, fields: Sequence[str]) -> List[dict]:
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        missing = [c for c in fields if c not in (reader.fieldnames or [])]
        if missing:
            raise FormatError(f"{path}: missing columns {missing}", "header")
        return list(reader)


def load_detections(path: PathLike, score_threshold: float = 0.0) -> Dict[str, Dict[int, List[Detection]]]:
    """External detections grouped as ``{scene_id: {glimpse_step: [Detection]}}``."""
    out: Dict[str, Dict[int, List[Detection]]] = defaultdict(lambda: defaultdict(list))
    for n, row in enumerate(read_csv(path, DETECTIONS_FIELDS)):
        try:
            step = int(row["glimpse_step"])
            det = Detection(
                BBox(int(row["x"]), int(row["y"]), int(row["w"]), int(row["h"])),
                int(row["class_id"]),
                float(row["score"]),
                step,
            )
        except (ValueError, GeometryError) as exc:
            raise FormatError(f"{path}: {exc}", f"row[{n}]") from exc
        if det.score >= score_threshold:
            out[row["scene_id"]][step].append(det)
    return out


def group_steps(by_step: Dict[int, List[Detection]], n_steps: int) -> List[List[Detection]]:
    return [list(by_step.get(s, [])) for s in range(n_steps)]
