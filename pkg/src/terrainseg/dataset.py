"""Training-set construction: thinning, labelling, outlier removal, splits."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .featureset import UNLABELED, FeatureSet
from .imaging import read_pnm
from .neighbors import distances, nearest

IGNORE = 255


class DatasetError(ValueError):
    pass


@dataclass
class OutlierConfig:
    k: int = 5
    sigma: float | None = None  # None: median nearest-neighbour distance of the class
    drop_fraction: float = 0.10

    def __post_init__(self):
        if self.k < 1:
            raise DatasetError("k must be >= 1")
        if self.sigma is not None and self.sigma <= 0:
            raise DatasetError("sigma must be > 0")
        if not 0.05 <= self.drop_fraction <= 0.20:
            raise DatasetError("drop_fraction must lie in [0.05, 0.20]")


# ---------------------------------------------------------------------------
# thinning and labelling


def grid_thin_indices(x, y, strength, box: int) -> np.ndarray:
    """Indices (ascending) of the strongest feature in every ``box`` x ``box`` cell.

    Ties on strength go to the lowest y, then the lowest x.
    """
    if box < 1:
        raise DatasetError("box must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size == 0:
        return np.zeros(0, dtype=np.int64)
    cx = np.floor(x / box).astype(np.int64)
    cy = np.floor(y / box).astype(np.int64)
    cell = cy * (int(cx.max()) + 1) + cx
    order = np.lexsort((x, y, -np.asarray(strength, dtype=np.float64), cell))
    first = np.ones(order.size, dtype=bool)
    first[1:] = cell[order[1:]] != cell[order[:-1]]
    return np.sort(order[first])


def grid_thin(fs: FeatureSet, box: int = 20, image_dims=None) -> FeatureSet:
    """Keep at most one feature per grid cell.  ``image_dims`` is (width, height)."""
    keep = np.ones(len(fs), dtype=bool)
    if image_dims is not None:
        w, h = image_dims
        keep = (fs.x >= 0) & (fs.x < w) & (fs.y >= 0) & (fs.y < h)
    base = np.flatnonzero(keep)
    sel = grid_thin_indices(fs.x[base], fs.y[base], fs.strength[base], box)
    return fs.subset(base[sel])


def label_features(fs: FeatureSet, mask) -> FeatureSet:
    """Attach the mask label at each feature's rounded position; drop IGNORE pixels."""
    mask = np.asarray(mask)
    h, w = mask.shape
    col = np.clip(np.floor(fs.x + 0.5).astype(np.int64), 0, w - 1)
    row = np.clip(np.floor(fs.y + 0.5).astype(np.int64), 0, h - 1)
    lab = mask[row, col].astype(np.int64)
    keep = lab < fs.class_count
    out = fs.subset(np.flatnonzero(keep))
    out.labels = lab[keep]
    return out


def load_mask(path) -> np.ndarray:
    m = read_pnm(path)
    if m.ndim != 2:
        raise DatasetError(f"{path}: label mask must be a PGM")
    return m


def read_manifest(path):
    """Pairs ``(image_path, mask_path)``; relative paths resolve against the manifest's folder."""
    path = os.fspath(path)
    base = os.path.dirname(os.path.abspath(path))
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n\r")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DatasetError(f"{path}:{lineno}: expected 'image<TAB>mask'")
            pairs.append(tuple(p if os.path.isabs(p) else os.path.join(base, p) for p in parts))
    if not pairs:
        raise DatasetError(f"{path}: empty manifest")
    return pairs


# ---------------------------------------------------------------------------
# outliers


def distance_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise DatasetError("need at least one descriptor")
    D = distances(X, X)
    np.fill_diagonal(D, 0.0)
    return D


def default_sigma(D) -> float:
    """Median non-self nearest-neighbour distance; 1.0 when that is zero."""
    if D.shape[0] < 2:
        return 1.0
    off = D + np.diag(np.full(D.shape[0], np.inf))
    s = float(np.median(off.min(axis=1)))
    return s if s > 0 else 1.0


def outlier_scores(D, k: int, sigma: float | None = None) -> np.ndarray:
    """Sum of ``exp(-d / sigma)`` over each row's k smallest non-self distances."""
    D = np.asarray(D, dtype=np.float64)
    n = D.shape[0]
    if k >= n:
        raise DatasetError("k too large for class")
    if sigma is None:
        sigma = default_sigma(D)
    off = D + np.diag(np.full(n, np.inf))
    near = np.sort(off, axis=1)[:, :k]
    return np.exp(-near / sigma).sum(axis=1)


def eliminate_outliers(fs: FeatureSet, cfg: OutlierConfig | None = None) -> FeatureSet:
    """Per class, remove the ``floor(drop_fraction * size)`` features with the smallest score.

    Classes too small for ``cfg.k`` use ``k = size - 1``; singleton classes are kept.
    """
    cfg = cfg or OutlierConfig()
    drop = np.zeros(len(fs), dtype=bool)
    for c in range(fs.class_count):
        idx = np.flatnonzero(fs.labels == c)
        n_drop = math.floor(cfg.drop_fraction * idx.size)
        if n_drop == 0 or idx.size < 2:
            continue
        D = distance_matrix(fs.descriptors[idx])
        mu = outlier_scores(D, min(cfg.k, idx.size - 1), cfg.sigma)
        worst = np.lexsort((idx, mu))[:n_drop]
        drop[idx[worst]] = True
    return fs.subset(np.flatnonzero(~drop))


def dense_split(fs: FeatureSet, n_neighbors: int = 5):
    """Split into (dense, non-dense): dense when all N nearest neighbours share the label."""
    if n_neighbors < 1:
        raise DatasetError("N must be >= 1")
    if len(fs) <= n_neighbors:
        raise DatasetError("set must be larger than N")
    idx, _ = nearest(fs.descriptors, fs.descriptors, n_neighbors, exclude_self=True)
    dense = np.all(fs.labels[idx] == fs.labels[:, None], axis=1)
    return fs.subset(np.flatnonzero(dense)), fs.subset(np.flatnonzero(~dense))


# ---------------------------------------------------------------------------
# partitions


def stratified_partition(labels, fractions, seed) -> list[np.ndarray]:
    """Split indices class by class in the given proportions (sorted index arrays).

    Each class is shuffled with a generator seeded from ``seed``; part sizes are
    floors of the running cumulative fraction, so the last part absorbs rounding.
    """
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    cum = np.cumsum(fractions) / np.sum(fractions)
    parts = [[] for _ in fractions]
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        cuts = [0] + [int(math.floor(f * idx.size + 1e-9)) for f in cum[:-1]] + [idx.size]
        for p in range(len(fractions)):
            parts[p].append(idx[cuts[p] : cuts[p + 1]])
    return [np.sort(np.concatenate(p)) if p else np.zeros(0, dtype=np.int64) for p in parts]


def split_train_val_test(fs: FeatureSet, seed: int = 0):
    """Stratified 2:1:1 split into (train, validation, test)."""
    if len(fs) < 4:
        raise DatasetError("need at least 4 features to split")
    tr, va, te = stratified_partition(fs.labels, (2, 1, 1), seed)
    return fs.subset(tr), fs.subset(va), fs.subset(te)


def labeled_only(fs: FeatureSet) -> FeatureSet:
    return fs.subset(np.flatnonzero(fs.labels != UNLABELED))
