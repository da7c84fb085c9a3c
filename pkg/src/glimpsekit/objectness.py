"""Objectness maps: construction, degradation, scoring and the numerical
kernels (summed-area tables, Gaussian smoothing) behind glimpse selection.

Maps are plain 2-D ``numpy`` float64 arrays indexed ``[row, col]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
from scipy import ndimage

from .geometry import Scene

BCE_EPS = 1e-7

ShapeLike = Union[int, Tuple[int, int]]


def _as_shape(d: ShapeLike) -> Tuple[int, int]:
    if isinstance(d, (int, np.integer)):
        return int(d), int(d)
    rows, cols = d
    return int(rows), int(cols)


def rasterize_binary_mask(scene: Scene) -> np.ndarray:
    """1 where at least one object box covers the pixel, else 0 (uint8)."""
    mask = np.zeros((scene.height, scene.width), dtype=np.uint8)
    for obj in scene.objects:
        b = obj.box
        mask[b.y:b.y2, b.x:b.x2] = 1
    return mask


def axis_overlap_weights(lo: float, hi: float, n: int) -> np.ndarray:
    """Length of overlap between ``[lo, hi)`` and each unit cell ``[k, k+1)``."""
    k = np.arange(n, dtype=np.float64)
    return np.clip(np.minimum(hi, k + 1.0) - np.maximum(lo, k), 0.0, None)


def _pooling_matrix(n_src: int, n_out: int) -> np.ndarray:
    step = n_src / n_out
    rows = [axis_overlap_weights(k * step, (k + 1) * step, n_src) / step for k in range(n_out)]
    return np.vstack(rows)


def area_resize(grid: np.ndarray, shape: ShapeLike) -> np.ndarray:
    """Area-average ``grid`` onto a coarser raster.

    Cell boundaries are real valued, so source pixels straddling a boundary
    contribute to both neighbours in proportion to their overlap.
    """
    grid = np.asarray(grid, dtype=np.float64)
    out_h, out_w = _as_shape(shape)
    h, w = grid.shape
    if out_h > h or out_w > w:
        raise ValueError(f"cannot pool {h}x{w} up to {out_h}x{out_w}")
    if h % out_h == 0 and w % out_w == 0:
        bh, bw = h // out_h, w // out_w
        return grid.reshape(out_h, bh, out_w, bw).sum(axis=(1, 3)) / (bh * bw)
    return _pooling_matrix(h, out_h) @ grid @ _pooling_matrix(w, out_w).T


def downsample_mask(mask: np.ndarray, d_gist: ShapeLike) -> np.ndarray:
    """Gist objectness target: fraction of covered pixels per gist cell."""
    return area_resize(mask, d_gist)


def gaussian_bbox_density(scene: Scene, d_gist: ShapeLike) -> np.ndarray:
    """Objectness from boxes alone.

    Each box becomes an axis-aligned Gaussian with per-axis sigma equal to a
    quarter of its gist-space extent, peaking at exactly 1 on the gist pixel
    holding the box center. Overlaps combine by elementwise maximum.
    """
    out_h, out_w = _as_shape(d_gist)
    sy, sx = out_h / scene.height, out_w / scene.width
    out = np.zeros((out_h, out_w))
    rows = np.arange(out_h, dtype=np.float64)
    cols = np.arange(out_w, dtype=np.float64)
    for obj in scene.objects:
        b = obj.box
        cx, cy = b.center
        r0 = min(int(math.floor(cy * sy)), out_h - 1)
        c0 = min(int(math.floor(cx * sx)), out_w - 1)
        sig_r = b.h * sy / 4.0
        sig_c = b.w * sx / 4.0
        gr = np.exp(-((rows - r0) ** 2) / (2 * sig_r**2))
        gc = np.exp(-((cols - c0) ** 2) / (2 * sig_c**2))
        np.maximum(out, np.outer(gr, gc), out=out)
    return out


# false-positive blob shape used by degrade()
_FP_SIGMA = 0.75
_FP_RADIUS = 2
_FP_PEAK = (0.3, 0.8)


def degrade(
    pi: np.ndarray,
    blur_sigma: float = 0.0,
    noise_std: float = 0.0,
    fp_rate: float = 0.0,
    seed: int = 0,
) -> np.ndarray:
    """Imitate an imperfect objectness predictor.

    Blur, additive Gaussian noise, then small false-positive blobs seeded
    at each pixel with probability ``fp_rate``; the result is clipped to
    [0, 1]. All randomness comes from ``seed``.
    """
    if blur_sigma < 0 or noise_std < 0 or not 0 <= fp_rate <= 1:
        raise ValueError("degradation parameters out of range")
    rng = np.random.default_rng(seed)
    out = np.array(pi, dtype=np.float64, copy=True)
    if blur_sigma > 0:
        out = ndimage.gaussian_filter(out, blur_sigma, mode="nearest")
    if noise_std > 0:
        out += rng.normal(0.0, noise_std, size=out.shape)
    if fp_rate > 0:
        centers = np.argwhere(rng.random(out.shape) < fp_rate)
        peaks = rng.uniform(*_FP_PEAK, size=len(centers))
        off = np.arange(-_FP_RADIUS, _FP_RADIUS + 1)
        patch = np.exp(-(off[:, None] ** 2 + off[None, :] ** 2) / (2 * _FP_SIGMA**2))
        h, w = out.shape
        for (r, c), peak in zip(centers, peaks):
            r0, r1 = max(r - _FP_RADIUS, 0), min(r + _FP_RADIUS + 1, h)
            c0, c1 = max(c - _FP_RADIUS, 0), min(c + _FP_RADIUS + 1, w)
            pr, pc = r0 - (r - _FP_RADIUS), c0 - (c - _FP_RADIUS)
            blob = peak * patch[pr:pr + (r1 - r0), pc:pc + (c1 - c0)]
            np.maximum(out[r0:r1, c0:c1], blob, out=out[r0:r1, c0:c1])
    return np.clip(out, 0.0, 1.0)


def integral_image(grid: np.ndarray) -> np.ndarray:
    """Summed-area table: ``S[i, j] = sum(grid[:i+1, :j+1])``."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size == 0:
        raise ValueError("empty grid")
    return grid.cumsum(axis=0).cumsum(axis=1)


def window_sum(s: np.ndarray, r: int, c: int, d: int) -> float:
    """Sum of the source grid over ``[r, r+d) x [c, c+d)`` from its table."""
    h, w = s.shape
    if d < 1 or r < 0 or c < 0 or r + d > h or c + d > w:
        raise IndexError(f"window ({r}, {c}, {d}) outside {h}x{w} raster")
    r2, c2 = r + d - 1, c + d - 1
    total = s[r2, c2]
    if r > 0:
        total -= s[r - 1, c2]
    if c > 0:
        total -= s[r2, c - 1]
    if r > 0 and c > 0:
        total += s[r - 1, c - 1]
    return float(total)


def window_sums(s: np.ndarray, d: int) -> np.ndarray:
    """All ``d x d`` window sums at once; entry ``[r, c]`` is the window at (r, c).

    Four shifted views of the zero-bordered table, so every entry is
    bit-identical to :func:`window_sum` at the same position.
    """
    h, w = s.shape
    if d < 1 or d > h or d > w:
        raise ValueError(f"window {d} does not fit in {h}x{w} raster")
    p = np.zeros((h + 1, w + 1))
    p[1:, 1:] = s
    return ((p[d:, d:] - p[:-d, d:]) - p[d:, :-d]) + p[:-d, :-d]


@dataclass(frozen=True)
class GaussianKernel:
    dim: int
    sigma: float
    weights: np.ndarray


def gaussian_kernel(d: int) -> GaussianKernel:
    """Normalized ``d x d`` Gaussian with sigma ``d / 4``."""
    if d < 1:
        raise ValueError("kernel dimension must be >= 1")
    sigma = d / 4.0
    if d == 1:
        return GaussianKernel(1, sigma, np.ones((1, 1)))
    c = (d - 1) / 2.0
    t = np.arange(d, dtype=np.float64) - c
    g = np.exp(-(t[:, None] ** 2 + t[None, :] ** 2) / (2 * sigma**2))
    return GaussianKernel(d, sigma, g / g.sum())


def convolve(pi: np.ndarray, k: GaussianKernel) -> np.ndarray:
    """Same-size smoothing with zero padding.

    The kernel is symmetric, so correlation and convolution coincide. For an
    even ``dim`` the kernel center sits at index ``dim // 2``.
    """
    pi = np.asarray(pi, dtype=np.float64)
    if k.dim > min(pi.shape):
        raise ValueError("kernel larger than map")
    return ndimage.correlate(pi, k.weights, mode="constant", cval=0.0)


def bce(pred: np.ndarray, target: np.ndarray, eps: float = BCE_EPS) -> float:
    """Unreduced binary cross-entropy summed over all pixels."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    p = np.clip(pred, eps, 1.0 - eps)
    return float(-np.sum(target * np.log(p) + (1.0 - target) * np.log1p(-p)))
