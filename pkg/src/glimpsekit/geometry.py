"""Geometric primitives shared across the package.

Rasters are indexed (row, col) with the origin at the top-left. Boxes are
half-open integer rectangles ``[x, x + w) x [y, y + h)`` where ``x`` is the
column and ``y`` the row of the top-left corner.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Tuple


class GeometryError(ValueError):
    """Raised when a geometric quantity violates its invariants."""


@dataclass(frozen=True)
class BBox:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise GeometryError(f"box extents must be positive, got w={self.w} h={self.h}")

    @property
    def area(self) -> int:
        return self.w * self.h

    @property
    def x2(self) -> int:
        return self.x + self.w

    @property
    def y2(self) -> int:
        return self.y + self.h

    @property
    def center(self) -> Tuple[float, float]:
        """(x, y) center in continuous pixel coordinates."""
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def intersection(self, other: "BBox") -> "BBox | None":
        x1 = max(self.x, other.x)
        y1 = max(self.y, other.y)
        x2 = min(self.x2, other.x2)
        y2 = min(self.y2, other.y2)
        if x2 <= x1 or y2 <= y1:
            return None
        return BBox(x1, y1, x2 - x1, y2 - y1)

    def inside(self, width: int, height: int) -> bool:
        return self.x >= 0 and self.y >= 0 and self.x2 <= width and self.y2 <= height


@dataclass(frozen=True)
class SceneObject:
    id: int
    class_id: int
    box: BBox


@dataclass(frozen=True)
class Scene:
    width: int
    height: int
    objects: Tuple[SceneObject, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise GeometryError("scene dimensions must be positive")
        # lists are accepted for convenience but stored as a tuple
        object.__setattr__(self, "objects", tuple(self.objects))
        seen = set()
        for k, obj in enumerate(self.objects):
            if obj.id in seen:
                raise GeometryError(f"objects[{k}].id: duplicate id {obj.id}")
            seen.add(obj.id)
            if not obj.box.inside(self.width, self.height):
                raise GeometryError(f"objects[{k}]: box {obj.box} outside {self.width}x{self.height} raster")

    @property
    def class_ids(self) -> List[int]:
        return sorted({o.class_id for o in self.objects})


def scale_factor(d_gist: int, d_vhr: int) -> float:
    """Ratio of gist size to native size, in (0, 1]."""
    if d_gist < 1 or d_vhr < 1:
        raise GeometryError("dimensions must be at least one pixel")
    if d_gist > d_vhr:
        raise GeometryError(f"gist ({d_gist}) larger than native raster ({d_vhr})")
    return d_gist / d_vhr


def glimpse_gist_dim(alpha: float, d_glimpse: int) -> int:
    if not 0 < alpha <= 1:
        raise GeometryError(f"alpha must lie in (0, 1], got {alpha}")
    if d_glimpse < 1:
        raise GeometryError("d_glimpse must be >= 1")
    return max(1, math.ceil(alpha * d_glimpse))


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


@dataclass(frozen=True)
class GistGeometry:
    """Scale bookkeeping between the gist raster and the native raster.

    ``alpha`` is derived from ``d_gist / d_vhr``; rectangular rasters reuse
    the same scale along both axes.
    """

    d_gist: int
    d_vhr: int
    d_glimpse: int

    def __post_init__(self):
        if self.d_glimpse > self.d_vhr:
            raise GeometryError(f"glimpse ({self.d_glimpse}) larger than raster ({self.d_vhr})")
        if self.d_glimpse_gist > self.d_gist:
            raise GeometryError("gist-space glimpse exceeds the gist raster")

    @property
    def alpha(self) -> float:
        return scale_factor(self.d_gist, self.d_vhr)

    @property
    def d_glimpse_gist(self) -> int:
        return glimpse_gist_dim(self.alpha, self.d_glimpse)

    def gist_shape(self, height: int, width: int) -> Tuple[int, int]:
        """Gist raster (rows, cols) for a native raster of the given size."""
        a = self.alpha
        return (max(1, _round_half_up(height * a)), max(1, _round_half_up(width * a)))


def gist_to_vhr(pos: int, geom: GistGeometry, extent: int | None = None) -> int:
    """Map one gist-space glimpse coordinate to the native raster.

    ``extent`` is the native raster length along that axis (defaults to
    ``geom.d_vhr``); the result is clamped so the glimpse stays inside it.
    """
    extent = geom.d_vhr if extent is None else extent
    v = _round_half_up(pos / geom.alpha)
    return max(0, min(v, extent - geom.d_glimpse))


def iou(a: BBox, b: BBox) -> float:
    inter = a.intersection(b)
    if inter is None:
        return 0.0
    ia = inter.area
    return ia / (a.area + b.area - ia)
