"""Open-set target search over a tiling of the scene.

Each tile gets a likelihood (cosine similarity between its embedding and the
exemplar's), a prior (mean objectness over its footprint) and a posterior
(their product). Global searches visit tiles in decreasing likelihood
(``g_ml_mstr``) or decreasing posterior (``g_map_mstr``); the remaining kinds
are the baselines they are compared against.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Protocol, Sequence, Tuple

import numpy as np

from .geometry import BBox, Scene
from .objectness import axis_overlap_weights

log = logging.getLogger(__name__)

SEARCH_KINDS = (
    "g_ml_mstr",
    "g_map_mstr",
    "sliding_window",
    "local_target",
    "local_initial",
    "local_current",
)


class SearchError(ValueError):
    pass


@dataclass(frozen=True)
class Tile:
    i: int
    j: int
    box: BBox


@dataclass(frozen=True)
class TileGrid:
    width: int
    height: int
    tile_size: int
    n_rows: int
    n_cols: int
    tiles: Tuple[Tile, ...]

    def __len__(self) -> int:
        return len(self.tiles)

    def index(self, i: int, j: int) -> int:
        return i * self.n_cols + j

    def neighbors(self, idx: int) -> List[int]:
        """8-connected neighbours in row-major order."""
        t = self.tiles[idx]
        out = []
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                if di == dj == 0:
                    continue
                i, j = t.i + di, t.j + dj
                if 0 <= i < self.n_rows and 0 <= j < self.n_cols:
                    out.append(self.index(i, j))
        return out


def _starts(n: int, d: int) -> List[int]:
    if d >= n:
        return [0]
    s = list(range(0, n - d + 1, d))
    if s[-1] + d < n:
        s.append(n - d)
    return s


def tile_image(width: int, height: int, tile_size: int) -> TileGrid:
    """Row-major tiling; a trailing partial tile is clamped flush to the edge."""
    if tile_size < 1:
        raise SearchError("tile_size must be >= 1")
    rows = _starts(height, tile_size)
    cols = _starts(width, tile_size)
    tiles = tuple(
        Tile(i, j, BBox(x, y, min(tile_size, width), min(tile_size, height)))
        for i, y in enumerate(rows)
        for j, x in enumerate(cols)
    )
    return TileGrid(width, height, tile_size, len(rows), len(cols), tiles)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise SearchError(f"dimension mismatch {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise SearchError("cosine of a zero vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


class EmbeddingProvider(Protocol):
    dim: int

    def embed(self, tile: BBox) -> np.ndarray: ...


# ---------------------------------------------------------------- synthetic embedder


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class PrototypeBank:
    """One unit direction per class plus a background direction."""

    classes: np.ndarray
    background: np.ndarray

    @property
    def dim(self) -> int:
        return self.classes.shape[1]


def make_prototypes(n_classes: int, dim: int, seed: int) -> PrototypeBank:
    """Random unit vectors; in 32+ dimensions these are nearly orthogonal."""
    if dim < 2:
        raise SearchError("embedding dimension must be >= 2")
    rng = np.random.default_rng([seed, 0x9E37])
    v = rng.normal(size=(n_classes + 1, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return PrototypeBank(v[:n_classes], v[n_classes])


def gaussian_noise(dim: int, seed: int, key: Sequence[int]) -> np.ndarray:
    """Standard normal vector keyed by ``(seed, *key)``."""
    rng = np.random.default_rng([seed, *key])
    return rng.normal(0.0, 1.0, size=dim)


def synthetic_embed(
    scene: Scene,
    tile: BBox,
    bank: PrototypeBank,
    noise_std: float,
    seed: int,
    background_weight: float = 1.0,
) -> np.ndarray:
    """Unit embedding of a tile built from the objects it contains.

    Each object adds its class prototype weighted by the fraction of its
    area inside the tile; a fixed background direction and keyed Gaussian
    noise are added before normalizing.
    """
    v = background_weight * bank.background
    for obj in scene.objects:
        inter = obj.box.intersection(tile)
        if inter is not None:
            v = v + (inter.area / obj.box.area) * bank.classes[obj.class_id]
    if noise_std > 0:
        v = v + noise_std * gaussian_noise(bank.dim, seed, (tile.x, tile.y, tile.w, tile.h))
    n = np.linalg.norm(v)
    return v / n if n > 0 else bank.background.copy()


def exemplar_embedding(bank: PrototypeBank, target_class: int, noise_std: float, seed: int) -> np.ndarray:
    """Target exemplar: its class prototype under the tile noise model."""
    v = bank.classes[target_class].copy()
    if noise_std > 0:
        v = v + noise_std * gaussian_noise(bank.dim, seed, (0xE7E, target_class))
    return _unit(v)


@dataclass
class SyntheticEmbedder:
    scene: Scene
    bank: PrototypeBank
    noise_std: float
    seed: int
    background_weight: float = 1.0

    @property
    def dim(self) -> int:
        return self.bank.dim

    def embed(self, tile: BBox) -> np.ndarray:
        return synthetic_embed(self.scene, tile, self.bank, self.noise_std, self.seed, self.background_weight)


@dataclass(frozen=True)
class TargetSpec:
    target_class: int
    embedding: np.ndarray

    def __post_init__(self):
        if not np.isclose(np.linalg.norm(self.embedding), 1.0, atol=1e-9):
            raise SearchError("target embedding must have unit norm")


# ---------------------------------------------------------------- scoring


def embed_tiles(provider: EmbeddingProvider, grid: TileGrid) -> np.ndarray:
    rows = []
    for t in grid.tiles:
        try:
            e = np.asarray(provider.embed(t.box), dtype=np.float64)
        except Exception as exc:
            raise SearchError(f"embedding failed on tile ({t.i}, {t.j}): {exc}") from exc
        if e.shape != (provider.dim,):
            raise SearchError(f"tile ({t.i}, {t.j}): embedding shape {e.shape}, expected ({provider.dim},)")
        rows.append(e)
    return np.vstack(rows)


def likelihood_map(provider: EmbeddingProvider, grid: TileGrid, target: TargetSpec) -> np.ndarray:
    if provider.dim != target.embedding.shape[0]:
        raise SearchError("provider and target dimensions differ")
    return cosine_rows(embed_tiles(provider, grid), target.embedding)


def cosine_rows(emb: np.ndarray, ref: np.ndarray) -> np.ndarray:
    return np.array([cosine(e, ref) for e in emb])


def tile_prior(pi: np.ndarray, grid: TileGrid) -> np.ndarray:
    """Area-weighted mean objectness over each tile's gist-space footprint."""
    gh, gw = pi.shape
    sr, sc = gh / grid.height, gw / grid.width
    out = np.empty(len(grid))
    for k, t in enumerate(grid.tiles):
        b = t.box
        wr = axis_overlap_weights(b.y * sr, b.y2 * sr, gh)
        wc = axis_overlap_weights(b.x * sc, b.x2 * sc, gw)
        out[k] = (wr @ pi @ wc) / (wr.sum() * wc.sum())
    return np.clip(out, 0.0, 1.0)


def posterior_map(likelihood: np.ndarray, prior: np.ndarray) -> np.ndarray:
    likelihood = np.asarray(likelihood, dtype=np.float64)
    prior = np.asarray(prior, dtype=np.float64)
    if likelihood.shape != prior.shape:
        raise SearchError("likelihood and prior cover different tiles")
    return likelihood * prior


@dataclass
class SearchScores:
    """Per-tile quantities in ``grid.tiles`` order."""

    likelihood: np.ndarray
    prior: Optional[np.ndarray] = None
    embeddings: Optional[np.ndarray] = None
    target: Optional[np.ndarray] = None

    @property
    def posterior(self) -> np.ndarray:
        if self.prior is None:
            raise SearchError("posterior needs a prior")
        return posterior_map(self.likelihood, self.prior)


@dataclass
class SearchTrajectory:
    order: List[int]
    total_tiles: int
    recall: List[float] = field(default_factory=list)


def _descending(values: np.ndarray) -> List[int]:
    return [int(i) for i in np.argsort(-np.asarray(values), kind="stable")]


def _best(candidates: Sequence[int], values) -> int:
    # strict > keeps the lowest index on ties
    best = candidates[0]
    for c in candidates[1:]:
        if values[c] > values[best]:
            best = c
    return best


def run_search(kind: str, grid: TileGrid, scores: SearchScores) -> SearchTrajectory:
    n = len(grid)
    if kind == "g_ml_mstr":
        order = _descending(scores.likelihood)
    elif kind == "g_map_mstr":
        order = _descending(scores.posterior)
    elif kind == "sliding_window":
        order = list(range(n))
    elif kind in ("local_target", "local_initial", "local_current"):
        order = _local_search(kind, grid, scores)
    else:
        raise SearchError(f"unknown search kind {kind!r}")
    return SearchTrajectory(order, n)


def _local_search(kind, grid, scores):
    like = np.asarray(scores.likelihood)
    emb = scores.embeddings
    if kind != "local_target" and emb is None:
        raise SearchError(f"{kind} needs tile embeddings")
    n = len(grid)
    visited = np.zeros(n, dtype=bool)
    start = _best(list(range(n)), like)
    order = [start]
    visited[start] = True
    current = start
    while len(order) < n:
        nbrs = [k for k in grid.neighbors(current) if not visited[k]]
        if nbrs:
            if kind == "local_target":
                sim = like
            else:
                ref = emb[start] if kind == "local_initial" else emb[current]
                sim = {k: cosine(emb[k], ref) for k in nbrs}
            nxt = _best(nbrs, sim)
        else:
            nxt = _best([k for k in range(n) if not visited[k]], like)
        order.append(nxt)
        visited[nxt] = True
        current = nxt
    return order


@dataclass
class RecallCurve:
    looks: np.ndarray
    recall: np.ndarray

    def aurc(self) -> float:
        """Trapezoidal area under recall vs normalized looks, from the origin."""
        return float(np.trapezoid(self.recall, self.looks))


def recall_vs_looks(traj: SearchTrajectory, scene: Scene, grid: TileGrid, target_class: int) -> RecallCurve:
    """Recall after each look; an object is found once a visited tile holds its box center.

    The curve starts at (0, 0). Scenes without the target class give an
    empty curve and a logged warning.
    """
    targets = [o for o in scene.objects if o.class_id == target_class]
    if not targets:
        log.warning("no objects of class %d; recall undefined", target_class)
        return RecallCurve(np.empty(0), np.empty(0))
    centers = np.array([o.box.center for o in targets])
    found = np.zeros(len(targets), dtype=bool)
    looks = [0.0]
    recall = [0.0]
    for k, idx in enumerate(traj.order, start=1):
        b = grid.tiles[idx].box
        inside = (centers[:, 0] >= b.x) & (centers[:, 0] < b.x2) & (centers[:, 1] >= b.y) & (centers[:, 1] < b.y2)
        found |= inside
        looks.append(k / traj.total_tiles)
        recall.append(found.sum() / len(targets))
    traj.recall = recall[1:]
    return RecallCurve(np.array(looks), np.array(recall))
