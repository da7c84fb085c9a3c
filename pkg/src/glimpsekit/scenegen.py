"""Seeded synthetic overhead scenes: small objects scattered in clusters."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Tuple

import numpy as np

from .geometry import BBox, Scene, SceneObject
from .objectness import ShapeLike, area_resize

log = logging.getLogger(__name__)

MAX_PLACEMENT_TRIES = 1000
BACKGROUND_LEVEL = 0.3
OBJECT_LEVEL = 0.8


@dataclass(frozen=True)
class GeneratorConfig:
    width: int = 2048
    height: int = 2048
    classes: int = 3
    clusters: int = 5
    objects_per_cluster: Tuple[int, int] = (4, 12)
    object_size: Tuple[int, int] = (16, 48)
    cluster_radius: float = 96.0
    background_texture_std: float = 0.05
    seed: int = 0
    placement: str = "clustered"

    def __post_init__(self):
        for name in ("objects_per_cluster", "object_size"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise ValueError(f"{name}: empty range ({lo}, {hi})")
            object.__setattr__(self, name, (int(lo), int(hi)))
        if self.object_size[0] < 1:
            raise ValueError("object_size must be >= 1")
        if self.width < 1 or self.height < 1 or self.classes < 1 or self.clusters < 0:
            raise ValueError("invalid generator dimensions")
        if self.placement not in ("clustered", "uniform"):
            raise ValueError(f"unknown placement {self.placement!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["objects_per_cluster"] = list(self.objects_per_cluster)
        d["object_size"] = list(self.object_size)
        return d


def generate_scene(cfg: GeneratorConfig) -> Scene:
    """Drop ``clusters`` centers uniformly and scatter objects around each.

    Object centers are Gaussian about their cluster center with standard
    deviation ``cluster_radius`` (uniform over the raster in ``uniform``
    placement mode). Boxes falling outside the raster are redrawn.
    """
    rng = np.random.default_rng(cfg.seed)
    objects = []
    next_id = 0
    for _ in range(cfg.clusters):
        center = rng.uniform((0, 0), (cfg.width, cfg.height))
        n = int(rng.integers(cfg.objects_per_cluster[0], cfg.objects_per_cluster[1] + 1))
        for _ in range(n):
            box = _place(rng, cfg, center)
            if box is None:
                log.warning("skipping object after %d failed placements", MAX_PLACEMENT_TRIES)
                continue
            class_id = int(rng.integers(0, cfg.classes))
            objects.append(SceneObject(next_id, class_id, box))
            next_id += 1
    return Scene(cfg.width, cfg.height, objects)


def _place(rng, cfg, center):
    lo, hi = cfg.object_size
    for _ in range(MAX_PLACEMENT_TRIES):
        w, h = (int(v) for v in rng.integers(lo, hi + 1, size=2))
        if cfg.placement == "clustered":
            cx, cy = rng.normal(center, cfg.cluster_radius)
        else:
            cx, cy = rng.uniform((0, 0), (cfg.width, cfg.height))
        x = int(np.floor(cx - w / 2 + 0.5))
        y = int(np.floor(cy - h / 2 + 0.5))
        if x >= 0 and y >= 0 and x + w <= cfg.width and y + h <= cfg.height:
            return BBox(x, y, w, h)
    return None


def rasterize_class_mask(scene: Scene) -> np.ndarray:
    """``class_id + 1`` on object pixels, 0 on background; higher ids paint last."""
    mask = np.zeros((scene.height, scene.width), dtype=np.int32)
    for obj in sorted(scene.objects, key=lambda o: o.id):
        b = obj.box
        mask[b.y:b.y2, b.x:b.x2] = obj.class_id + 1
    return mask


def render_gist_image(scene: Scene, d_gist: ShapeLike, cfg: GeneratorConfig) -> np.ndarray:
    """Grayscale gist: textured background at 0.3, objects at 0.8, area-pooled."""
    img = np.full((scene.height, scene.width), BACKGROUND_LEVEL)
    if cfg.background_texture_std > 0:
        rng = np.random.default_rng([cfg.seed, 0x6715])
        img += rng.normal(0.0, cfg.background_texture_std, size=img.shape)
    for obj in scene.objects:
        b = obj.box
        img[b.y:b.y2, b.x:b.x2] = OBJECT_LEVEL
    return np.clip(area_resize(img, d_gist), 0.0, 1.0)
