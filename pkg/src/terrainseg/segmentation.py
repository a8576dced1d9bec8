"""Sparse-to-dense segmentation: splat per-feature class scores, then take the per-pixel argmax."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels

UNKNOWN = 255
PALETTE = np.array(
    [
        (0, 200, 0),  # grass: green
        (255, 140, 0),  # gravel: orange
        (0, 0, 255),  # trees: blue
        (139, 69, 19),  # dirt/mud: brown
        (0, 255, 255),  # sky: cyan
    ],
    dtype=np.uint8,
)
UNKNOWN_COLOR = np.array((128, 128, 128), dtype=np.uint8)


@dataclass
class LikelihoodMap:
    scores: np.ndarray  # (h, w, m)
    weight: np.ndarray  # (h, w)

    @property
    def shape(self):
        return self.weight.shape

    def __add__(self, other: "LikelihoodMap") -> "LikelihoodMap":
        return LikelihoodMap(self.scores + other.scores, self.weight + other.weight)


def splat(points, scores, dims, radius_factor: float = 1.0) -> LikelihoodMap:
    """Deposit each feature's score vector with a Gaussian of sigma = radius_factor * scale.

    ``points`` needs columns x, y, scale; ``dims`` is (width, height).
    Contributions stop at three sigma.
    """
    w, h = dims
    points = np.asarray(points, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    if points.size == 0:
        m = scores.shape[-1] if scores.ndim == 2 else 0
        return LikelihoodMap(np.zeros((h, w, m)), np.zeros((h, w)))
    points = np.atleast_2d(points)
    scores = scores.reshape(points.shape[0], -1)
    if np.any(scores < 0):
        raise ValueError("score vectors must be non-negative (clamp classifier outputs first)")
    sig = radius_factor * points[:, 2]
    acc, weight = kernels.splat(
        np.ascontiguousarray(points[:, 0]),
        np.ascontiguousarray(points[:, 1]),
        np.ascontiguousarray(sig),
        np.ascontiguousarray(scores),
        int(h),
        int(w),
    )
    return LikelihoodMap(acc, weight)


def to_labels(lmap: LikelihoodMap, min_weight: float = 1e-3) -> np.ndarray:
    """Per-pixel argmax (ties to the lowest class) or UNKNOWN where the weight is too small."""
    if lmap.scores.shape[-1] == 0:
        return np.full(lmap.shape, UNKNOWN, dtype=np.uint8)
    lab = np.argmax(lmap.scores, axis=-1).astype(np.uint8)
    lab[lmap.weight < min_weight] = UNKNOWN
    return lab


def render_overlay(image, seg, palette=PALETTE, alpha: float = 0.5) -> np.ndarray:
    """Blend class colours (grey for UNKNOWN) over an RGB or [0, 1] grayscale image."""
    img = np.asarray(image)
    seg = np.asarray(seg)
    if img.shape[:2] != seg.shape:
        raise ValueError(f"image {img.shape[:2]} and segmentation {seg.shape} differ in size")
    if img.ndim == 2:
        g = img * 255.0 if img.dtype.kind == "f" else img.astype(np.float64)
        img = np.repeat(g[..., None], 3, axis=2)
    src = img.astype(np.float64)
    lut = np.vstack([np.asarray(palette, dtype=np.uint8), np.repeat(UNKNOWN_COLOR[None], 256 - len(palette), axis=0)])
    colors = lut[seg].astype(np.float64)
    out = np.floor((1.0 - alpha) * src + alpha * colors + 0.5)
    return np.clip(out, 0, 255).astype(np.uint8)
