"""Feature containers and the feature-set CSV interchange format."""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

UNLABELED = -1
CLASS_NAMES = ("grass", "gravel", "trees", "dirt", "sky")
POINT_COLUMNS = ("x", "y", "scale", "strength", "orientation")


class InterestPoint(NamedTuple):
    x: float
    y: float
    scale: float
    strength: float
    orientation: float = 0.0


@dataclass
class FeatureSet:
    """Interest points, their descriptors and (optionally) class labels.

    ``points`` has one row per feature with the columns of ``POINT_COLUMNS``.
    Unlabelled features carry ``UNLABELED``.
    """

    points: np.ndarray
    descriptors: np.ndarray
    labels: np.ndarray = None
    variant: str | None = None
    class_count: int = len(CLASS_NAMES)
    class_names: tuple = field(default=CLASS_NAMES)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 5)
        n = self.points.shape[0]
        self.descriptors = np.asarray(self.descriptors, dtype=np.float64)
        if self.descriptors.ndim == 1:
            self.descriptors = self.descriptors.reshape(n, -1) if n else self.descriptors.reshape(0, 0)
        if self.labels is None:
            self.labels = np.full(n, UNLABELED, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.descriptors.shape[0] != n or self.labels.shape[0] != n:
            raise ValueError("points, descriptors and labels must have equal lengths")
        if np.any(self.labels >= self.class_count):
            raise ValueError(f"label out of range for {self.class_count} classes")

    def __len__(self):
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.descriptors.shape[1]

    @property
    def x(self):
        return self.points[:, 0]

    @property
    def y(self):
        return self.points[:, 1]

    @property
    def scale(self):
        return self.points[:, 2]

    @property
    def strength(self):
        return self.points[:, 3]

    def subset(self, idx) -> "FeatureSet":
        idx = np.asarray(idx)
        return FeatureSet(
            self.points[idx],
            self.descriptors[idx],
            self.labels[idx],
            self.variant,
            self.class_count,
            self.class_names,
        )

    def with_labels(self, labels) -> "FeatureSet":
        return FeatureSet(self.points, self.descriptors, labels, self.variant, self.class_count, self.class_names)

    def class_sizes(self) -> np.ndarray:
        lab = self.labels[self.labels >= 0]
        return np.bincount(lab, minlength=self.class_count)

    def point(self, i) -> InterestPoint:
        return InterestPoint(*map(float, self.points[i]))

    @classmethod
    def empty(cls, dim: int, variant=None) -> "FeatureSet":
        return cls(np.zeros((0, 5)), np.zeros((0, dim)), variant=variant)

    @classmethod
    def concat(cls, sets: Sequence["FeatureSet"]) -> "FeatureSet":
        if not sets:
            raise ValueError("nothing to concatenate")
        dims = {s.dim for s in sets if len(s)}
        if len(dims) > 1:
            raise ValueError(f"mixed descriptor dimensions {sorted(dims)}")
        dim = dims.pop() if dims else sets[0].dim
        return cls(
            np.concatenate([s.points for s in sets]) if sets else np.zeros((0, 5)),
            np.concatenate([s.descriptors.reshape(-1, dim) for s in sets]),
            np.concatenate([s.labels for s in sets]),
            sets[0].variant,
            sets[0].class_count,
            sets[0].class_names,
        )


# ---------------------------------------------------------------------------
# CSV


def csv_header(dim: int) -> str:
    return ",".join(list(POINT_COLUMNS) + ["label"] + [f"d{i}" for i in range(dim)])


def _fmt(v: float) -> str:
    s = "%.9g" % v
    return "0" if s == "-0" else s


def format_csv(fs: FeatureSet) -> str:
    out = io.StringIO()
    out.write(csv_header(fs.dim) + "\n")
    for p, lab, d in zip(fs.points, fs.labels, fs.descriptors):
        row = [_fmt(v) for v in p] + [str(int(lab))] + [_fmt(v) for v in d]
        out.write(",".join(row) + "\n")
    return out.getvalue()


def write_csv(path, fs: FeatureSet) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_csv(fs))


def parse_csv(text: str, variant=None, class_count=len(CLASS_NAMES)) -> FeatureSet:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty feature file")
    header = lines[0].strip().split(",")
    if tuple(header[:6]) != POINT_COLUMNS + ("label",):
        raise ValueError("unexpected feature-file header")
    dim = len(header) - 6
    if len(lines) == 1:
        return FeatureSet(np.zeros((0, 5)), np.zeros((0, dim)), variant=variant, class_count=class_count)
    data = np.loadtxt(io.StringIO("\n".join(lines[1:])), delimiter=",", ndmin=2)
    if data.shape[1] != dim + 6:
        raise ValueError("ragged feature file")
    return FeatureSet(data[:, :5], data[:, 6:], data[:, 5].astype(np.int64), variant, class_count)


def read_csv(path, variant=None, class_count=len(CLASS_NAMES)) -> FeatureSet:
    path = os.fspath(path)
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        return parse_csv(text, variant, class_count)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from exc
