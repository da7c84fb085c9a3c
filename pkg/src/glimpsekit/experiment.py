"""Experiment configuration and orchestration.

Every random stream is derived from one master seed. A sub-seed is the
master seed XOR a fixed constant for its role, offset by the scene index
times a 64-bit odd constant so scenes draw independent streams::

    sub_seed = ((master ^ ROLE) + index * 0x9E3779B97F4A7C15) mod 2**64

Policy roles are keyed by policy kind, so adding a policy never perturbs the
randomness of another.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import io
from .detection import metric_curve, oracle_detect
from .geometry import BBox, GistGeometry, Scene, gist_to_vhr
from .objectness import degrade, downsample_mask, gaussian_bbox_density, rasterize_binary_mask
from .openset import (
    SEARCH_KINDS,
    SearchScores,
    SyntheticEmbedder,
    TargetSpec,
    cosine_rows,
    embed_tiles,
    exemplar_embedding,
    make_prototypes,
    recall_vs_looks,
    run_search,
    tile_image,
    tile_prior,
)
from .policies import POLICY_KINDS, PolicyConfig, run_policy
from .scenegen import GeneratorConfig, generate_scene, render_gist_image

log = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
GOLDEN64 = 0x9E3779B97F4A7C15

ROLE_SCENES = 0x5CE4E5
ROLE_DEGRADE = 0xDE9A4DE
ROLE_GIST_TEXTURE = 0x7E8714E
ROLE_PROTOTYPES = 0x9407070
ROLE_EMBED_NOISE = 0xE3BED
ROLE_EXEMPLAR = 0xE8E3
ROLE_POLICY = {
    "unet": 0x01,
    "unet_fixed": 0x02,
    "grid": 0x03,
    "grid_fixed": 0x04,
    "random": 0x05,
    "entropy": 0x06,
}
POLICY_ROLE_BASE = 0xB0_1C1E5 << 8

OBJECTNESS_SOURCES = ("groundtruth", "groundtruth_degraded", "gaussian_bbox", "file")
SUMMARY_POINTS = 100

DEFAULT_OUTPUTS = {
    "glimpse_log": "glimpses_{policy}.csv",
    "metrics": "metrics.csv",
    "trajectories": "trajectories.csv",
    "summary": "openset_summary.csv",
    "aurc": "openset_aurc.csv",
}


class ExperimentError(RuntimeError):
    pass


def derive_seed(master: int, role: int, index: int = 0) -> int:
    return ((master ^ role) + index * GOLDEN64) & MASK64


# ---------------------------------------------------------------- config


@dataclass
class PolicySpec:
    kind: str
    name: str
    n_glimpse: int = 10
    beta: float = 0.0
    coverage_threshold: float = 0.95
    seed: Optional[int] = None


@dataclass
class ExperimentConfig:
    mode: str
    seed: int
    policies: List[PolicySpec]
    scene_files: List[Path] = field(default_factory=list)
    generator: Optional[GeneratorConfig] = None
    scene_count: int = 0
    objectness: Dict[str, Any] = field(default_factory=lambda: {"source": "groundtruth"})
    gist_dir: Optional[Path] = None
    gist_texture_std: float = 0.05
    detector: Dict[str, Any] = field(default_factory=lambda: {"kind": "oracle"})
    d_gist: int = 128
    d_glimpse: int = 512
    tile_size: int = 512
    iou_threshold: float = 0.5
    outputs: Dict[str, str] = field(default_factory=lambda: dict(DEFAULT_OUTPUTS))
    openset: Dict[str, Any] = field(default_factory=dict)


def _require(d: dict, key: str, ctx: str):
    if key not in d:
        raise ExperimentError(f"{ctx}: missing '{key}'")
    return d[key]


def generator_from_dict(d: dict) -> GeneratorConfig:
    known = GeneratorConfig.__dataclass_fields__
    unknown = set(d) - set(known)
    if unknown:
        raise ExperimentError(f"generator: unknown fields {sorted(unknown)}")
    kw = dict(d)
    for k in ("objects_per_cluster", "object_size"):
        if k in kw:
            kw[k] = tuple(kw[k])
    try:
        return GeneratorConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ExperimentError(f"generator: {exc}") from exc


def parse_config(d: dict, base_dir: Path = Path(".")) -> ExperimentConfig:
    """Validate a JSON config. Relative paths resolve against ``base_dir``."""
    mode = _require(d, "mode", "config")
    if mode not in ("closedset", "openset"):
        raise ExperimentError(f"config: unknown mode {mode!r}")
    seed = int(d.get("seed", 0))

    raw_policies = d.get("policies") or []
    if not raw_policies:
        raise ExperimentError("no policies configured")
    kinds = POLICY_KINDS if mode == "closedset" else SEARCH_KINDS
    policies = []
    for k, p in enumerate(raw_policies):
        kind = _require(p, "kind", f"policies[{k}]")
        if kind not in kinds:
            raise ExperimentError(f"policies[{k}]: unknown {mode} policy {kind!r}")
        policies.append(
            PolicySpec(
                kind=kind,
                name=p.get("name", kind),
                n_glimpse=int(p.get("n_glimpse", 10)),
                beta=float(p.get("beta", 0.0)),
                coverage_threshold=float(p.get("coverage_threshold", 0.95)),
                seed=p.get("seed"),
            )
        )
    names = [p.name for p in policies]
    if len(set(names)) != len(names):
        raise ExperimentError(f"policy names must be unique, got {names}")

    scenes = _require(d, "scenes", "config")
    cfg = ExperimentConfig(mode=mode, seed=seed, policies=policies)
    if "generator" in scenes:
        cfg.generator = generator_from_dict(scenes["generator"])
        cfg.scene_count = int(scenes.get("count", 1))
    elif "files" in scenes:
        cfg.scene_files = [base_dir / f for f in scenes["files"]]
    elif "dir" in scenes:
        sdir = base_dir / scenes["dir"]
        if not sdir.is_dir():
            raise ExperimentError(f"scenes.dir: {sdir} is not a directory")
        cfg.scene_files = sorted(sdir.glob("*.json"))
    else:
        raise ExperimentError("scenes: need one of 'generator', 'files', 'dir'")
    for f in cfg.scene_files:
        if not f.is_file():
            raise ExperimentError(f"scene file not found: {f}")

    obj = dict(d.get("objectness", {"source": "groundtruth"}))
    if obj.get("source") not in OBJECTNESS_SOURCES:
        raise ExperimentError(f"objectness.source must be one of {OBJECTNESS_SOURCES}")
    if obj["source"] == "file":
        mdir = base_dir / _require(obj, "dir", "objectness")
        if not mdir.is_dir():
            raise ExperimentError(f"objectness.dir: {mdir} is not a directory")
        obj["dir"] = mdir
    cfg.objectness = obj
    if "gist_images" in d:
        cfg.gist_dir = base_dir / d["gist_images"]["dir"]
    cfg.gist_texture_std = float(d.get("gist_texture_std", 0.05))

    det = dict(d.get("detector", {"kind": "oracle"}))
    if det.get("kind") == "external":
        path = base_dir / _require(det, "path", "detector")
        if not path.is_file():
            raise ExperimentError(f"detections file not found: {path}")
        det["path"] = path
    elif det.get("kind") != "oracle":
        raise ExperimentError("detector.kind must be 'oracle' or 'external'")
    cfg.detector = det

    geom = d.get("geometry", {})
    cfg.d_gist = int(geom.get("d_gist", 128))
    cfg.d_glimpse = int(geom.get("d_glimpse", 512))
    cfg.tile_size = int(geom.get("tile_size", 512))
    cfg.iou_threshold = float(d.get("iou_threshold", 0.5))
    cfg.outputs = {**DEFAULT_OUTPUTS, **d.get("outputs", {})}
    cfg.openset = dict(d.get("openset", {}))
    return cfg


def load_config(path: Path) -> ExperimentConfig:
    path = Path(path)
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ExperimentError(f"cannot read config {path}: {exc}") from exc
    return parse_config(d, path.parent)


# ---------------------------------------------------------------- inputs


def scene_ids_and_loaders(cfg: ExperimentConfig) -> List[Tuple[str, Callable[[], Scene]]]:
    if cfg.generator is not None:
        out = []
        for idx in range(cfg.scene_count):
            gen = replace(cfg.generator, seed=derive_seed(cfg.seed, ROLE_SCENES, idx))
            out.append((f"scene_{idx:04d}", lambda g=gen: generate_scene(g)))
        return out
    return [(f.stem, lambda f=f: io.load_scene(f)) for f in cfg.scene_files]


def build_objectness(cfg: ExperimentConfig, scene: Scene, scene_id: str, idx: int, geom: GistGeometry) -> np.ndarray:
    src = cfg.objectness["source"]
    shape = geom.gist_shape(scene.height, scene.width)
    if src == "file":
        pi = io.load_map(Path(cfg.objectness["dir"]) / f"{scene_id}.objmap")
        if pi.shape != shape:
            raise ExperimentError(f"{scene_id}: objectness map is {pi.shape}, expected {shape}")
        return pi
    if src == "gaussian_bbox":
        return gaussian_bbox_density(scene, shape)
    gt = downsample_mask(rasterize_binary_mask(scene), shape)
    if src == "groundtruth":
        return gt
    o = cfg.objectness
    return degrade(
        gt,
        float(o.get("blur_sigma", 1.0)),
        float(o.get("noise_std", 0.05)),
        float(o.get("fp_rate", 0.02)),
        derive_seed(cfg.seed, ROLE_DEGRADE, idx),
    )


def build_gist_image(cfg: ExperimentConfig, scene: Scene, scene_id: str, idx: int, geom: GistGeometry) -> np.ndarray:
    if cfg.gist_dir is not None:
        return io.load_map(cfg.gist_dir / f"{scene_id}_gist.objmap")
    render_cfg = GeneratorConfig(
        width=scene.width,
        height=scene.height,
        background_texture_std=cfg.gist_texture_std,
        seed=derive_seed(cfg.seed, ROLE_GIST_TEXTURE, idx),
    )
    return render_gist_image(scene, geom.gist_shape(scene.height, scene.width), render_cfg)


def policy_config(cfg: ExperimentConfig, spec: PolicySpec, idx: int) -> PolicyConfig:
    seed = spec.seed if spec.seed is not None else derive_seed(cfg.seed, POLICY_ROLE_BASE | ROLE_POLICY[spec.kind], idx)
    return PolicyConfig(spec.kind, spec.n_glimpse, spec.beta, spec.coverage_threshold, int(seed))


# ---------------------------------------------------------------- closed set


def glimpse_windows(positions, geom: GistGeometry, scene: Scene) -> List[BBox]:
    d = geom.d_glimpse
    return [
        BBox(gist_to_vhr(c, geom, scene.width), gist_to_vhr(r, geom, scene.height), d, d)
        for r, c in positions
    ]


def run_closedset_scene(cfg: ExperimentConfig, idx: int, scene_id: str, scene: Scene, external=None):
    geom = GistGeometry(cfg.d_gist, max(scene.width, scene.height), cfg.d_glimpse)
    if cfg.d_glimpse > min(scene.width, scene.height):
        raise ExperimentError(f"{scene_id}: glimpse larger than scene")
    pi = build_objectness(cfg, scene, scene_id, idx, geom)
    needs_image = any(p.kind == "entropy" for p in cfg.policies)
    image = build_gist_image(cfg, scene, scene_id, idx, geom) if needs_image else None

    glimpse_rows: Dict[str, list] = {}
    metric_rows = []
    for spec in cfg.policies:
        try:
            gs = run_policy(pi, image, geom, policy_config(cfg, spec, idx))
        except Exception as exc:
            raise ExperimentError(f"{scene_id}/{spec.name}: {exc}") from exc
        windows = glimpse_windows(gs.positions, geom, scene)
        if external is None:
            dets = [oracle_detect(scene, w, s) for s, w in enumerate(windows)]
        else:
            by_step = external.get(scene_id, {})
            dets = io.group_steps(by_step, len(windows))
            for step_dets in dets:
                for det in step_dets:
                    if not det.box.inside(scene.width, scene.height):
                        raise ExperimentError(f"{scene_id}: detection {det.box} outside the scene")
        curve = metric_curve(scene, windows, dets, cfg.iou_threshold)

        rows = []
        for s, ((r, c), w) in enumerate(zip(gs.positions, windows)):
            reason = gs.stop_reason.value if s == len(windows) - 1 else "none"
            rows.append([scene_id, s, r, c, w.y, w.x, cfg.d_glimpse, gs.coverage[s], reason])
        glimpse_rows[spec.name] = rows
        for pt in curve.points:
            metric_rows.append([spec.name, scene_id, pt.k, -1, pt.mean.precision, pt.mean.recall, pt.mean.f1])
            for cls in sorted(pt.per_class):
                m = pt.per_class[cls]
                metric_rows.append([spec.name, scene_id, pt.k, cls, m.precision, m.recall, m.f1])
    return glimpse_rows, metric_rows


# ---------------------------------------------------------------- open set


def run_openset_scene(cfg: ExperimentConfig, idx: int, scene_id: str, scene: Scene, bank):
    o = cfg.openset
    target_class = int(o.get("target_class", 0))
    noise_std = float(o.get("noise_std", 0.5))
    geom = GistGeometry(cfg.d_gist, max(scene.width, scene.height), min(cfg.tile_size, scene.width, scene.height))
    grid = tile_image(scene.width, scene.height, cfg.tile_size)
    pi = build_objectness(cfg, scene, scene_id, idx, geom)

    embedder = SyntheticEmbedder(
        scene, bank, noise_std, derive_seed(cfg.seed, ROLE_EMBED_NOISE, idx), float(o.get("background_weight", 1.0))
    )
    target = TargetSpec(
        target_class,
        exemplar_embedding(bank, target_class, noise_std, derive_seed(cfg.seed, ROLE_EXEMPLAR, idx)),
    )
    emb = embed_tiles(embedder, grid)
    like = cosine_rows(emb, target.embedding)
    scores = SearchScores(like, tile_prior(pi, grid), emb, target.embedding)
    post = scores.posterior

    rows = []
    curves = {}
    for spec in cfg.policies:
        traj = run_search(spec.kind, grid, scores)
        curve = recall_vs_looks(traj, scene, grid, target_class)
        if len(curve.recall):
            curves[spec.name] = curve
        for s, t in enumerate(traj.order):
            tile = grid.tiles[t]
            rec = traj.recall[s] if traj.recall else float("nan")
            rows.append([
                scene_id, spec.name, s, tile.i, tile.j, like[t], scores.prior[t], post[t], rec,
                (s + 1) / traj.total_tiles,
            ])
    return rows, curves


def _step_recall(curve, xs: np.ndarray) -> np.ndarray:
    """Recall reached by normalized-look budget ``x`` (right-continuous step function)."""
    idx = np.searchsorted(curve.looks, xs + 1e-12, side="right") - 1
    return curve.recall[idx]


def summarize_openset(names: Sequence[str], per_scene: List[Dict[str, Any]]):
    xs = np.arange(1, SUMMARY_POINTS + 1) / SUMMARY_POINTS
    summary, aurc = [], []
    for name in names:
        curves = [c[name] for c in per_scene if name in c]
        if not curves:
            continue
        mean = np.mean([_step_recall(c, xs) for c in curves], axis=0)
        summary.extend([name, x, r] for x, r in zip(xs, mean))
        aurc.append([name, len(curves), float(np.mean([c.aurc() for c in curves]))])
    return summary, aurc


# ---------------------------------------------------------------- driver


def worker_count() -> int:
    raw = os.environ.get("GLIMPSEKIT_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise ExperimentError(f"GLIMPSEKIT_THREADS must be an integer, got {raw!r}")
    if n < 0:
        raise ExperimentError("GLIMPSEKIT_THREADS must be >= 0")
    return n or (os.cpu_count() or 1)


def _map_scenes(fn, items, workers):
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def run_experiment(cfg: ExperimentConfig, out_dir: Path) -> Dict[str, Path]:
    """Run every scene and policy, write result CSVs under ``out_dir``.

    Returns the written files keyed by output role. Rows are sorted by
    (scene_id, policy, step) whatever the completion order.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    items = list(enumerate(scene_ids_and_loaders(cfg)))
    workers = worker_count()
    written: Dict[str, Path] = {}

    if cfg.mode == "closedset":
        external = None
        if cfg.detector["kind"] == "external":
            external = io.load_detections(cfg.detector["path"], float(cfg.detector.get("score_threshold", 0.0)))

        def one(item):
            idx, (sid, load) = item
            return run_closedset_scene(cfg, idx, sid, load(), external)

        results = _map_scenes(one, items, workers)
        for spec in cfg.policies:
            rows = [r for g, _ in results for r in g[spec.name]]
            rows.sort(key=lambda r: (r[0], r[1]))
            path = out_dir / cfg.outputs["glimpse_log"].format(policy=spec.name)
            io.write_csv(path, io.GLIMPSE_LOG_FIELDS, rows)
            written[f"glimpse_log:{spec.name}"] = path
        metrics = [r for _, m in results for r in m]
        metrics.sort(key=lambda r: (r[1], r[0], r[2], r[3]))
        path = out_dir / cfg.outputs["metrics"]
        io.write_csv(path, io.METRICS_FIELDS, metrics)
        written["metrics"] = path
        return written

    o = cfg.openset
    n_classes = o.get("classes")
    loaded = [(idx, sid, load()) for idx, (sid, load) in items]
    if n_classes is None:
        n_classes = max([ob.class_id for _, _, s in loaded for ob in s.objects] + [int(o.get("target_class", 0))]) + 1
    bank = make_prototypes(int(n_classes), int(o.get("embedding_dim", 32)), derive_seed(cfg.seed, ROLE_PROTOTYPES))

    def one_open(item):
        idx, sid, scene = item
        try:
            return run_openset_scene(cfg, idx, sid, scene, bank)
        except Exception as exc:
            raise ExperimentError(f"{sid}: {exc}") from exc

    results = _map_scenes(one_open, loaded, workers)
    traj_rows = [r for rows, _ in results for r in rows]
    traj_rows.sort(key=lambda r: (r[0], r[1], r[2]))
    names = [p.name for p in cfg.policies]
    summary, aurc = summarize_openset(names, [c for _, c in results])
    for key, fields, rows in (
        ("trajectories", io.TRAJECTORY_FIELDS, traj_rows),
        ("summary", ["policy", "normalized_looks", "mean_recall"], summary),
        ("aurc", ["policy", "n_scenes", "mean_aurc"], aurc),
    ):
        path = out_dir / cfg.outputs[key]
        io.write_csv(path, fields, rows)
        written[key] = path
    return written


def generate_scene_files(d: dict, out_dir: Path, seed_override: Optional[int] = None) -> List[Path]:
    """Write generated scenes plus their ground-truth objectness and gist images."""
    gen = generator_from_dict(_require(d, "generator", "config"))
    count = int(d.get("count", 1))
    seed = int(seed_override if seed_override is not None else d.get("seed", 0))
    d_gist = int(d.get("d_gist", 128))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for idx in range(count):
        g = replace(gen, seed=derive_seed(seed, ROLE_SCENES, idx))
        scene = generate_scene(g)
        sid = f"scene_{idx:04d}"
        geom = GistGeometry(d_gist, max(scene.width, scene.height), 1)
        shape = geom.gist_shape(scene.height, scene.width)
        io.save_scene(scene, out_dir / f"{sid}.json")
        io.save_map(downsample_mask(rasterize_binary_mask(scene), shape), out_dir / f"{sid}.objmap")
        io.save_map(render_gist_image(scene, shape, replace(g, seed=derive_seed(seed, ROLE_GIST_TEXTURE, idx))), out_dir / f"{sid}_gist.objmap")
        written.append(out_dir / f"{sid}.json")
    return written


def evaluate_detections(detections: Path, scenes_dir: Path, out: Path, iou_threshold: float = 0.5,
                        score_threshold: float = 0.0) -> Path:
    """Score an external detections CSV against the scenes in ``scenes_dir``."""
    dets = io.load_detections(detections, score_threshold)
    rows = []
    for f in sorted(Path(scenes_dir).glob("*.json")):
        sid = f.stem
        scene = io.load_scene(f)
        by_step = dets.get(sid, {})
        n = max(by_step) + 1 if by_step else 0
        curve = metric_curve(scene, range(n), io.group_steps(by_step, n), iou_threshold)
        for pt in curve.points:
            rows.append(["external", sid, pt.k, -1, pt.mean.precision, pt.mean.recall, pt.mean.f1])
            for cls in sorted(pt.per_class):
                m = pt.per_class[cls]
                rows.append(["external", sid, pt.k, cls, m.precision, m.recall, m.f1])
    unknown = sorted(set(dets) - {f.stem for f in Path(scenes_dir).glob("*.json")})
    if unknown:
        log.warning("detections reference unknown scenes: %s", ", ".join(unknown))
    io.write_csv(out, io.METRICS_FIELDS, rows)
    return Path(out)
