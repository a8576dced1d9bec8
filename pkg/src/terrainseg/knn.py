"""Lazy classifiers: k-NN voting, Parzen windows and the k-nearest Parzen hybrid.

Class-conditional Parzen densities are evaluated in the log domain so that
high-dimensional kernels with small ``h`` do not underflow; posteriors are the
normalised densities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .featureset import CLASS_NAMES, FeatureSet, format_csv, parse_csv
from .neighbors import nearest, sq_distances

FORMAT_TAG = "terrainseg-knn v1"
H_SUBSAMPLE = 200


class KnnError(ValueError):
    pass


def gaussian_kernel(z) -> np.ndarray | float:
    """Multivariate standard normal density; ``z`` is a vector or a stack of vectors."""
    z = np.asarray(z, dtype=np.float64)
    p = z.shape[-1] if z.ndim else 1
    q = np.sum(z * z, axis=-1) if z.ndim else z * z
    val = (2.0 * math.pi) ** (-p / 2.0) * np.exp(-q / 2.0)
    return float(val) if np.ndim(val) == 0 else val


def _log_kernel_sq(d2, h, p):
    return -(p / 2.0) * math.log(2.0 * math.pi) - d2 / (2.0 * h * h)


@dataclass
class KnnModel:
    X: np.ndarray
    labels: np.ndarray
    class_count: int
    k: int = 3
    h: float | None = None
    mode: str = "hybrid"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.X.shape[0] == 0:
            raise KnnError("empty model")
        if self.k < 1:
            raise KnnError("k must be >= 1")
        if self.mode not in ("hybrid", "knn", "parzen"):
            raise KnnError(f"unknown mode {self.mode!r}")
        if self.h is None:
            self.h = default_bandwidth(self.X, self.k)
        if self.h <= 0:
            raise KnnError("h must be positive")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def class_sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)

    def priors(self) -> np.ndarray:
        return self.class_sizes / self.n

    def predict(self, X):
        return classify(self, X)


def default_bandwidth(X, k: int, seed: int = 0) -> float:
    """Mean distance to the k-th nearest neighbour over a subsample of at most 200 points."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < 2:
        return 1.0
    kk = min(k, n - 1)
    rng = np.random.default_rng(seed)
    sub = np.sort(rng.choice(n, size=min(H_SUBSAMPLE, n), replace=False))
    d2 = sq_distances(X[sub], X)
    d2[np.arange(sub.size), sub] = np.inf
    kth = np.sqrt(np.partition(d2, kk - 1, axis=1)[:, kk - 1])
    h = float(np.mean(kth))
    return h if h > 0 else 1.0


def fit(fs_or_X, labels=None, k: int = 3, h: float | None = None, mode: str = "hybrid", class_count=None) -> KnnModel:
    """Lazy learning: store the labelled set."""
    if isinstance(fs_or_X, FeatureSet):
        fs = fs_or_X
        model = KnnModel(fs.descriptors, fs.labels, fs.class_count, k, h, mode)
        model.meta["variant"] = fs.variant
        return model
    labels = np.asarray(labels, dtype=np.int64)
    m = class_count if class_count is not None else int(labels.max()) + 1
    return KnnModel(fs_or_X, labels, m, k, h, mode)


def _check_k(model, k):
    k = model.k if k is None else int(k)
    if k < 1 or k > model.n:
        raise KnnError(f"k={k} must lie in [1, {model.n}]")
    return k


def knn_classify(model: KnnModel, X, k: int | None = None):
    """Majority vote among the k nearest; ties go to the class with the closest member."""
    single = np.ndim(X) == 1
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    k = _check_k(model, k)
    idx, _ = nearest(X, model.X, k)
    lab = model.labels[idx]
    m = model.class_count
    counts = np.zeros((X.shape[0], m))
    first = np.full((X.shape[0], m), k)
    rows = np.arange(X.shape[0])
    for r in range(k - 1, -1, -1):
        counts[rows, lab[:, r]] += 1
        first[rows, lab[:, r]] = r
    # larger count wins; among equal counts, the earliest (closest) member wins
    key = counts * (k + 1) - first
    cls = np.argmax(key, axis=1)
    post = counts / k
    if single:
        return int(cls[0]), post[0]
    return cls, post


def _log_class_scores(model: KnnModel, d2, lab, h):
    """Log of ``1/(n_m h^p) * sum K`` per class from neighbour distances ``d2`` and labels ``lab``."""
    p = model.dim
    sizes = model.class_sizes
    logk = _log_kernel_sq(d2, h, p)
    out = np.full((d2.shape[0], model.class_count), -np.inf)
    for c in range(model.class_count):
        if sizes[c] == 0:
            continue
        lk = np.where(lab == c, logk, -np.inf)
        mx = lk.max(axis=1)
        ok = np.isfinite(mx)
        s = np.full(d2.shape[0], -np.inf)
        s[ok] = mx[ok] + np.log(np.exp(lk[ok] - mx[ok, None]).sum(axis=1))
        out[:, c] = s - math.log(sizes[c]) - p * math.log(h)
    return out


def _posterior(logs):
    mx = logs.max(axis=1, keepdims=True)
    post = np.zeros_like(logs)
    ok = np.isfinite(mx[:, 0])
    post[ok] = np.exp(logs[ok] - mx[ok])
    tot = post.sum(axis=1, keepdims=True)
    post = np.divide(post, tot, out=np.full_like(post, 1.0 / logs.shape[1]), where=tot > 0)
    return post


def log_parzen_density(model: KnnModel, X, c: int, h: float | None = None) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    members = model.X[model.labels == c]
    if members.shape[0] == 0:
        raise KnnError(f"class {c} is empty")
    h = model.h if h is None else h
    p = model.dim
    logk = _log_kernel_sq(sq_distances(X, members), h, p)
    mx = logk.max(axis=1, keepdims=True)
    return (mx[:, 0] + np.log(np.exp(logk - mx).sum(axis=1))) - math.log(members.shape[0]) - p * math.log(h)


def parzen_density(model: KnnModel, x, c: int, h: float | None = None):
    """Parzen estimate of p(x | class c) with a Gaussian kernel of width ``h``."""
    single = np.ndim(x) == 1
    dens = np.exp(log_parzen_density(model, x, c, h))
    return float(dens[0]) if single else dens


def hybrid_classify(model: KnnModel, X, k: int | None = None, h: float | None = None):
    """Parzen class scores restricted to the k global nearest neighbours; argmax and posterior."""
    single = np.ndim(X) == 1
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    k = _check_k(model, k)
    h = model.h if h is None else h
    idx, d2 = nearest(X, model.X, k)
    logs = _log_class_scores(model, d2, model.labels[idx], h)
    post = _posterior(logs)
    cls = np.argmax(post, axis=1)
    if single:
        return int(cls[0]), post[0]
    return cls, post


def parzen_classify(model: KnnModel, X, h: float | None = None):
    """Full Parzen classification: the hybrid rule with every training point as a neighbour."""
    return hybrid_classify(model, X, k=model.n, h=h)


def classify(model: KnnModel, X):
    if model.mode == "knn":
        return knn_classify(model, X)
    if model.mode == "parzen":
        return parzen_classify(model, X)
    return hybrid_classify(model, X)


# ---------------------------------------------------------------------------
# persistence: '#' header lines followed by the feature-set CSV


def format_model(model: KnnModel, fs: FeatureSet | None = None) -> str:
    if fs is None:
        fs = FeatureSet(np.zeros((model.n, 5)), model.X, model.labels, class_count=model.class_count)
    names = model.meta.get("class_names") or list(CLASS_NAMES[: model.class_count])
    head = [
        f"# {FORMAT_TAG}",
        f"# k={model.k}",
        f"# h={model.h!r}",
        f"# mode={model.mode}",
        f"# class_count={model.class_count}",
        f"# classes={','.join(names)}",
        f"# variant={model.meta.get('variant') or ''}",
    ]
    return "\n".join(head) + "\n" + format_csv(fs)


def parse_model(text: str) -> KnnModel:
    lines = text.splitlines()
    if not lines or lines[0].strip() != f"# {FORMAT_TAG}":
        raise ValueError("not a k-NN model file")
    hdr = {}
    body = []
    for ln in lines:
        if ln.startswith("#"):
            key, _, val = ln[1:].strip().partition("=")
            if _:
                hdr[key.strip()] = val.strip()
        else:
            body.append(ln)
    m = int(hdr["class_count"])
    fs = parse_csv("\n".join(body), class_count=m)
    model = KnnModel(fs.descriptors, fs.labels, m, int(hdr["k"]), float(hdr["h"]), hdr.get("mode", "hybrid"))
    model.meta["class_names"] = hdr.get("classes", "").split(",")
    model.meta["variant"] = hdr.get("variant") or None
    return model


def save(model: KnnModel, path, fs: FeatureSet | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_model(model, fs))


def load(path) -> KnnModel:
    with open(path, encoding="utf-8") as fh:
        return parse_model(fh.read())
