"""Glimpse selection policies and the stopping protocol.

The objectness-guided policy (``unet``) smooths the prior with a Gaussian of
the glimpse size, then greedily takes the window with the largest remaining
mass, overwriting each chosen window with a penalty ``beta``. The baseline
kinds (``unet_fixed``, ``grid``, ``grid_fixed``, ``random``, ``entropy``)
share the same output type so they can be evaluated side by side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, List, Optional, Tuple

import numpy as np

from .geometry import GistGeometry
from .objectness import convolve, gaussian_kernel, integral_image, window_sums

Position = Tuple[int, int]

POLICY_KINDS = ("unet", "unet_fixed", "grid", "grid_fixed", "random", "entropy")
ENTROPY_BINS = 16


class PolicyError(ValueError):
    pass


class StopReason(str, Enum):
    FULL_IMAGE = "full_image"
    COVERAGE_REACHED = "coverage_reached"
    BUDGET_EXHAUSTED = "budget_exhausted"
    NONE = "none"


@dataclass(frozen=True)
class PolicyConfig:
    kind: str
    n_glimpse: int
    beta: float = 0.0
    coverage_threshold: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise PolicyError(f"unknown policy kind {self.kind!r}")
        if self.n_glimpse < 0:
            raise PolicyError("n_glimpse must be >= 0")
        if not 0 < self.coverage_threshold <= 1:
            raise PolicyError("coverage_threshold must lie in (0, 1]")


@dataclass(frozen=True)
class StopDecision:
    stop: bool
    reason: StopReason = StopReason.NONE


@dataclass
class GlimpseSet:
    """Selected gist-space glimpse corners with running coverage."""

    positions: List[Position]
    geom: GistGeometry
    coverage: List[float] = field(default_factory=list)
    stop_reason: StopReason = StopReason.NONE

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def d(self) -> int:
        return self.geom.d_glimpse_gist


def select_max_objectness(s: np.ndarray, d: int) -> Position:
    """Top-left corner of the ``d x d`` window with the largest sum.

    ``np.argmax`` returns the first maximum in row-major order, which is
    the lexicographic (row, col) tie-break.
    """
    sums = window_sums(s, d)
    r, c = np.unravel_index(int(np.argmax(sums)), sums.shape)
    return int(r), int(c)


def iter_unet_steps(pi: np.ndarray, geom: GistGeometry, cfg: PolicyConfig) -> Iterator[Tuple[Position, np.ndarray]]:
    """Run the greedy loop, yielding each choice with the working map it was made on.

    The yielded array is the live buffer; copy it if it must outlive the step.
    """
    d = geom.d_glimpse_gist
    if d > min(pi.shape):
        raise PolicyError(f"glimpse ({d}) larger than gist raster {pi.shape}")
    work = convolve(pi, gaussian_kernel(d))
    for _ in range(cfg.n_glimpse):
        pos = select_max_objectness(integral_image(work), d)
        yield pos, work
        r, c = pos
        work[r:r + d, c:c + d] = cfg.beta


def unet_policy(pi: np.ndarray, geom: GistGeometry, cfg: PolicyConfig) -> GlimpseSet:
    positions = [pos for pos, _ in iter_unet_steps(pi, geom, cfg)]
    return GlimpseSet(positions, geom)


def fixed_tiles(h: int, w: int, d: int) -> List[Position]:
    """Row-major grid of ``d``-sized tiles; a trailing partial tile is clamped flush to the edge."""
    return [(r, c) for r in _axis_starts(h, d) for c in _axis_starts(w, d)]


def _axis_starts(n: int, d: int) -> List[int]:
    if d >= n:
        return [0]
    starts = list(range(0, n - d + 1, d))
    if starts[-1] + d < n:
        starts.append(n - d)
    return starts


def _unet_fixed(pi, d, cfg):
    tiles = fixed_tiles(*pi.shape, d)
    sums = window_sums(integral_image(pi), d)
    scores = np.array([sums[r, c] for r, c in tiles])
    order = np.argsort(-scores, kind="stable")
    return [tiles[i] for i in order[: cfg.n_glimpse]]


def _grid(shape, d, cfg):
    if cfg.n_glimpse == 0:
        return []
    n = math.ceil(math.sqrt(cfg.n_glimpse))
    rows = _spaced(shape[0] - d, n)
    cols = _spaced(shape[1] - d, n)
    return [(r, c) for r in rows for c in cols][: cfg.n_glimpse]


def _spaced(span: int, n: int) -> List[int]:
    return [int(math.floor(v + 0.5)) for v in np.linspace(0, span, n)]


def _grid_fixed(shape, d, cfg):
    tiles = fixed_tiles(*shape, d)
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(tiles))
    return [tiles[i] for i in order[: cfg.n_glimpse]]


def _random(shape, d, cfg):
    rng = np.random.default_rng(cfg.seed)
    rows = rng.integers(0, shape[0] - d + 1, size=cfg.n_glimpse)
    cols = rng.integers(0, shape[1] - d + 1, size=cfg.n_glimpse)
    return [(int(r), int(c)) for r, c in zip(rows, cols)]


def window_entropy(patch: np.ndarray, bins: int = ENTROPY_BINS) -> float:
    """Shannon entropy (bits) of a histogram of intensities in [0, 1]."""
    counts, _ = np.histogram(patch, bins=bins, range=(0.0, 1.0))
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log2(p)).sum())


def _entropy(image, d, cfg):
    stride = max(1, d // 2)
    h, w = image.shape
    lattice = [(r, c) for r in _lattice(h - d, stride) for c in _lattice(w - d, stride)]
    scores = np.array([window_entropy(image[r:r + d, c:c + d]) for r, c in lattice])
    order = np.argsort(-scores, kind="stable")
    return [lattice[i] for i in order[: cfg.n_glimpse]]


def _lattice(span: int, stride: int) -> List[int]:
    pts = list(range(0, span + 1, stride))
    if pts[-1] != span:
        pts.append(span)
    return pts


def run_policy(
    pi: Optional[np.ndarray],
    gist_image: Optional[np.ndarray],
    geom: GistGeometry,
    cfg: PolicyConfig,
    stopping: bool = True,
) -> GlimpseSet:
    """Select glimpses with the policy named by ``cfg.kind``.

    With ``stopping`` the sequence is cut at the first step where
    :func:`check_stop` fires. Coverage is always measured on ``pi`` when it
    is available. Cutting after the fact is equivalent to stopping online
    because no policy conditions its choices on coverage.
    """
    d = geom.d_glimpse_gist
    if cfg.kind == "entropy":
        if gist_image is None:
            raise PolicyError("entropy policy requires a gist image")
        shape = gist_image.shape
    else:
        if pi is None and cfg.kind in ("unet", "unet_fixed"):
            raise PolicyError(f"{cfg.kind} policy requires an objectness map")
        ref = pi if pi is not None else gist_image
        if ref is None:
            raise PolicyError(f"{cfg.kind} policy needs a raster to size its glimpses")
        shape = ref.shape
    if d > min(shape):
        raise PolicyError(f"glimpse ({d}) larger than gist raster {shape}")

    if cfg.kind == "unet":
        positions = unet_policy(pi, geom, cfg).positions
    elif cfg.kind == "unet_fixed":
        positions = _unet_fixed(pi, d, cfg)
    elif cfg.kind == "grid":
        positions = _grid(shape, d, cfg)
    elif cfg.kind == "grid_fixed":
        positions = _grid_fixed(shape, d, cfg)
    elif cfg.kind == "random":
        positions = _random(shape, d, cfg)
    else:
        positions = _entropy(np.asarray(gist_image, dtype=np.float64), d, cfg)

    cover_map = pi if pi is not None else np.ones(shape)
    gs = GlimpseSet(positions, geom, coverage_curve(positions, d, cover_map))
    if stopping:
        gs = apply_stopping(gs, cover_map, cfg)
    return gs


def _footprint(positions, d, shape) -> np.ndarray:
    fp = np.zeros(shape, dtype=bool)
    for r, c in positions:
        fp[r:r + d, c:c + d] = True
    return fp


def coverage_fraction(glimpses: GlimpseSet, pi: np.ndarray) -> float:
    """Share of the prior's mass under the union of glimpse footprints."""
    total = float(pi.sum())
    if total == 0:
        return 1.0
    fp = _footprint(glimpses.positions, glimpses.d, pi.shape)
    return float(pi[fp].sum()) / total


def coverage_curve(positions: List[Position], d: int, pi: np.ndarray) -> List[float]:
    total = float(pi.sum())
    fp = np.zeros(pi.shape, dtype=bool)
    covered = 0.0
    curve = []
    for r, c in positions:
        new = ~fp[r:r + d, c:c + d]
        covered += float(pi[r:r + d, c:c + d][new].sum())
        fp[r:r + d, c:c + d] = True
        curve.append(1.0 if total == 0 else min(covered / total, 1.0))
    return curve


def check_stop(
    covered: float,
    n_done: int,
    union_area: int,
    cfg: PolicyConfig,
    raster_area: int,
) -> StopDecision:
    if union_area >= raster_area:
        return StopDecision(True, StopReason.FULL_IMAGE)
    if covered > cfg.coverage_threshold:
        return StopDecision(True, StopReason.COVERAGE_REACHED)
    if n_done >= cfg.n_glimpse:
        return StopDecision(True, StopReason.BUDGET_EXHAUSTED)
    return StopDecision(False)


def apply_stopping(gs: GlimpseSet, pi: np.ndarray, cfg: PolicyConfig) -> GlimpseSet:
    """Truncate ``gs`` at the first glimpse after which a stop condition holds."""
    d = gs.d
    raster_area = pi.size
    fp = np.zeros(pi.shape, dtype=bool)
    decision = check_stop(0.0 if pi.sum() > 0 else 1.0, 0, 0, cfg, raster_area)
    if decision.stop:
        return GlimpseSet([], gs.geom, [], decision.reason)
    for k, (r, c) in enumerate(gs.positions, start=1):
        fp[r:r + d, c:c + d] = True
        decision = check_stop(gs.coverage[k - 1], k, int(fp.sum()), cfg, raster_area)
        if decision.stop:
            return GlimpseSet(gs.positions[:k], gs.geom, gs.coverage[:k], decision.reason)
    # ran out of proposals before the budget (only possible for kinds with a finite candidate set)
    return GlimpseSet(list(gs.positions), gs.geom, list(gs.coverage), StopReason.NONE)
