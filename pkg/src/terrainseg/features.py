"""Fast-Hessian interest points, orientation and (U-)SURF descriptors."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .featureset import FeatureSet, InterestPoint
from .imaging import IntegralImage, box_sum, haar_responses

# variant -> (grid size n, rotated, kept sums)
VARIANTS = {
    "SURF64": (4, True, "all"),
    "USURF64": (4, False, "all"),
    "USURF36": (3, False, "all"),
    "USURF32": (4, False, "signed"),
    "USURF32ABS": (4, False, "abs"),
}
DIMENSIONS = {"SURF64": 64, "USURF64": 64, "USURF36": 36, "USURF32": 32, "USURF32ABS": 32}

HESSIAN_XY_WEIGHT = 0.9
ORIENTATION_RADIUS = 6  # in units of scale
ORIENTATION_SIGMA = 2.5
DESCRIPTOR_SIGMA = 3.3
ORIENTATION_WINDOW = math.pi / 3
ORIENTATION_STEP = 0.15
SAMPLES_PER_SUBREGION = 5


class FeatureError(ValueError):
    pass


@dataclass
class DetectorConfig:
    blob_threshold: float = 0.0002
    octaves: int = 4
    intervals: int = 4
    init_step: int = 2

    def __post_init__(self):
        if self.blob_threshold < 0:
            raise FeatureError("blob_threshold must be >= 0")
        if self.octaves < 1:
            raise FeatureError("octaves must be >= 1")
        if self.intervals < 3:
            raise FeatureError("intervals must be >= 3")
        if self.init_step < 1:
            raise FeatureError("init_step must be >= 1")


def check_variant(variant: str) -> str:
    v = variant.upper()
    if v not in VARIANTS:
        raise FeatureError(f"unknown descriptor variant {variant!r}; choose from {sorted(VARIANTS)}")
    return v


def is_upright(variant: str) -> bool:
    return not VARIANTS[check_variant(variant)][1]


def filter_sizes(octave: int, intervals: int):
    """Box-filter side lengths for one octave: 9, 15, 21, 27 then 15, 27, 39, 51, ..."""
    return [3 * (2 ** (octave + 1) * (i + 1) + 1) for i in range(intervals)]


def hessian_response(ii: IntegralImage, x: int, y: int, filter_size: int) -> float:
    """Determinant of the box-filter Hessian at pixel (x, y), area normalised."""
    if filter_size < 9 or (filter_size - 9) % 6:
        raise FeatureError(f"unsupported filter size {filter_size}; expected 9 + 6k")
    lobe = filter_size // 3
    border = (filter_size - 1) // 2

    def box(r0, c0, nr, nc):
        return box_sum(ii, c0, r0, c0 + nc, r0 + nr)

    r, c = int(y), int(x)
    dxx = box(r - lobe + 1, c - border, 2 * lobe - 1, filter_size) - 3.0 * box(
        r - lobe + 1, c - lobe // 2, 2 * lobe - 1, lobe
    )
    dyy = box(r - border, c - lobe + 1, filter_size, 2 * lobe - 1) - 3.0 * box(
        r - lobe // 2, c - lobe + 1, lobe, 2 * lobe - 1
    )
    dxy = (
        box(r - lobe, c + 1, lobe, lobe)
        + box(r + 1, c - lobe, lobe, lobe)
        - box(r - lobe, c - lobe, lobe, lobe)
        - box(r + 1, c + 1, lobe, lobe)
    )
    area = float(filter_size * filter_size)
    dxx, dyy, dxy = dxx / area, dyy / area, dxy / area
    return dxx * dyy - (HESSIAN_XY_WEIGHT * dxy) ** 2


def response_layers(ii: IntegralImage, octave: int, cfg: DetectorConfig):
    step = cfg.init_step * 2**octave
    out_h, out_w = ii.height // step, ii.width // step
    sizes = filter_sizes(octave, cfg.intervals)
    if out_h < 3 or out_w < 3:
        return step, sizes, None
    stack = np.stack([kernels.hessian_layer(ii.padded, L, step, out_h, out_w) for L in sizes])
    return step, sizes, stack


def _local_maxima(stack, mid, border):
    """Indices (r, c) in layer ``mid`` that beat all 26 neighbours."""
    _, h, w = stack.shape
    lo, hi_r, hi_c = border + 1, h - border - 1, w - border - 1
    lo = max(lo, 1)
    hi_r = min(hi_r, h - 1)
    hi_c = min(hi_c, w - 1)
    if hi_r <= lo or hi_c <= lo:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    centre = stack[mid, lo:hi_r, lo:hi_c]
    is_max = np.ones_like(centre, dtype=bool)
    for dl in (-1, 0, 1):
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dl == 0 and dr == 0 and dc == 0:
                    continue
                nb = stack[mid + dl, lo + dr : hi_r + dr, lo + dc : hi_c + dc]
                is_max &= centre > nb
    rr, cc = np.nonzero(is_max)
    return rr + lo, cc + lo


def _refine(stack, mid, r, c):
    """Quadratic fit of the response around (mid, r, c); returns offsets (dx, dy, ds) or None."""
    b, m, t = stack[mid - 1], stack[mid], stack[mid + 1]
    v = m[r, c]
    g = np.array(
        [
            (m[r, c + 1] - m[r, c - 1]) / 2.0,
            (m[r + 1, c] - m[r - 1, c]) / 2.0,
            (t[r, c] - b[r, c]) / 2.0,
        ]
    )
    dxx = m[r, c + 1] + m[r, c - 1] - 2 * v
    dyy = m[r + 1, c] + m[r - 1, c] - 2 * v
    dss = t[r, c] + b[r, c] - 2 * v
    dxy = (m[r + 1, c + 1] - m[r + 1, c - 1] - m[r - 1, c + 1] + m[r - 1, c - 1]) / 4.0
    dxs = (t[r, c + 1] - t[r, c - 1] - b[r, c + 1] + b[r, c - 1]) / 4.0
    dys = (t[r + 1, c] - t[r - 1, c] - b[r + 1, c] + b[r - 1, c]) / 4.0
    H = np.array([[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]])
    try:
        off = -np.linalg.solve(H, g)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(off)) or np.any(np.abs(off) >= 0.5):
        return None
    return off


def detect(ii: IntegralImage, cfg: DetectorConfig | None = None) -> list[InterestPoint]:
    """Scale-space maxima of the Fast-Hessian determinant above ``cfg.blob_threshold``."""
    cfg = cfg or DetectorConfig()
    points = []
    for octave in range(cfg.octaves):
        step, sizes, stack = response_layers(ii, octave, cfg)
        if stack is None:
            break
        border = (sizes[-1] + 1) // (2 * step)
        for mid in range(1, len(sizes) - 1):
            rr, cc = _local_maxima(stack, mid, border)
            keep = stack[mid, rr, cc] > cfg.blob_threshold
            filter_step = sizes[mid] - sizes[mid - 1]
            for r, c in zip(rr[keep], cc[keep]):
                off = _refine(stack, mid, r, c)
                if off is None:
                    continue
                x = (c + off[0]) * step
                y = (r + off[1]) * step
                scale = 1.2 / 9.0 * (sizes[mid] + off[2] * filter_step)
                if not (0 <= x < ii.width and 0 <= y < ii.height) or scale <= 0:
                    continue
                points.append(InterestPoint(float(x), float(y), float(scale), float(stack[mid, r, c]), 0.0))
    return _suppress_duplicates(points)


def _suppress_duplicates(points):
    """Drop the weaker of two detections of one blob found in overlapping octaves.

    Two points are the same blob when they lie closer than the smaller scale and
    their scales differ by less than a factor 1.5.
    """
    if len(points) < 2:
        return points
    arr = points_array(points)
    order = np.argsort(-arr[:, 3], kind="stable")
    # kept points bucketed on a grid as wide as the largest scale, so only
    # the 3x3 neighbouring cells can hold a conflicting point
    cell = float(arr[:, 2].max())
    buckets: dict = {}
    kept = []
    for i in order:
        x, y, s = arr[i, 0], arr[i, 1], arr[i, 2]
        gx, gy = int(x // cell), int(y // cell)
        dup = False
        for ox in (-1, 0, 1):
            for oy in (-1, 0, 1):
                for j in buckets.get((gx + ox, gy + oy), ()):
                    smin = min(s, arr[j, 2])
                    if (x - arr[j, 0]) ** 2 + (y - arr[j, 1]) ** 2 < smin * smin and max(s, arr[j, 2]) < 1.5 * smin:
                        dup = True
                        break
                if dup:
                    break
            if dup:
                break
        if not dup:
            kept.append(i)
            buckets.setdefault((gx, gy), []).append(i)
    return [points[i] for i in sorted(kept)]


def points_array(points) -> np.ndarray:
    if isinstance(points, np.ndarray):
        return points.reshape(-1, 5).astype(np.float64)
    return np.array([tuple(p) for p in points], dtype=np.float64).reshape(-1, 5)


def _responses(ii: IntegralImage, xs, ys, sizes):
    """Haar responses with summed-area rounding noise (a few ulps of the table) set to zero."""
    dx, dy = haar_responses(ii, xs, ys, sizes)
    floor = 16.0 * np.finfo(np.float64).eps * max(float(np.abs(ii.padded).max()), 1.0)
    dx[np.abs(dx) < floor] = 0.0
    dy[np.abs(dy) < floor] = 0.0
    return dx, dy


def _haar_size(scale, factor):
    return np.maximum(2, 2 * np.round(factor * np.asarray(scale) / 2.0).astype(np.int64))


_ORI_I, _ORI_J = np.meshgrid(np.arange(-6, 7), np.arange(-6, 7), indexing="xy")
_ORI_MASK = _ORI_I**2 + _ORI_J**2 < ORIENTATION_RADIUS**2
_ORI_I = _ORI_I[_ORI_MASK].astype(np.float64)
_ORI_J = _ORI_J[_ORI_MASK].astype(np.float64)
_ORI_W = np.exp(-(_ORI_I**2 + _ORI_J**2) / (2.0 * ORIENTATION_SIGMA**2))
_ORI_STARTS = np.arange(0.0, 2 * math.pi, ORIENTATION_STEP)


def assign_orientations(ii: IntegralImage, pts: np.ndarray) -> np.ndarray:
    """Dominant Haar-response direction around each point (radians in [0, 2pi))."""
    pts = points_array(pts)
    n = pts.shape[0]
    if n == 0:
        return np.zeros(0)
    s = pts[:, 2:3]
    xs = np.round(pts[:, 0:1] + _ORI_I[None, :] * s).astype(np.int64)
    ys = np.round(pts[:, 1:2] + _ORI_J[None, :] * s).astype(np.int64)
    sizes = np.broadcast_to(_haar_size(pts[:, 2], 4.0)[:, None], xs.shape)
    dx, dy = _responses(ii, xs.ravel(), ys.ravel(), sizes.ravel())
    dx = dx.reshape(n, -1) * _ORI_W
    dy = dy.reshape(n, -1) * _ORI_W
    ang = np.mod(np.arctan2(dy, dx), 2 * math.pi)
    out = np.zeros(n)
    for k in range(n):
        # membership of every response angle in every sliding window
        rel = np.mod(ang[k][None, :] - _ORI_STARTS[:, None], 2 * math.pi)
        inside = rel < ORIENTATION_WINDOW
        sx = inside @ dx[k]
        sy = inside @ dy[k]
        best = int(np.argmax(sx * sx + sy * sy))
        if sx[best] == 0 and sy[best] == 0:
            out[k] = 0.0
        else:
            out[k] = math.atan2(sy[best], sx[best]) % (2 * math.pi)
    return out


def assign_orientation(ii: IntegralImage, point: InterestPoint, upright: bool = False) -> float:
    """Orientation of a single point; upright mode skips the computation and returns 0."""
    if upright:
        return 0.0
    return float(assign_orientations(ii, points_array([point]))[0])


def _sample_grid(n):
    k = np.arange(SAMPLES_PER_SUBREGION * n, dtype=np.float64) - SAMPLES_PER_SUBREGION * n / 2.0 + 0.5
    u, v = np.meshgrid(k, k, indexing="xy")  # v indexes rows (downwards), u columns
    return u, v


def describe_many(ii: IntegralImage, pts, variant: str) -> np.ndarray:
    """Descriptors for an ``(N, 5)`` point array; orientation column used by SURF64 only."""
    variant = check_variant(variant)
    n_grid, rotated, sums = VARIANTS[variant]
    pts = points_array(pts)
    N = pts.shape[0]
    dim = DIMENSIONS[variant]
    if N == 0:
        return np.zeros((0, dim))
    u, v = _sample_grid(n_grid)
    side = u.shape[0]
    s = pts[:, 2][:, None, None]
    U = u[None] * s
    V = v[None] * s
    if rotated:
        th = pts[:, 4][:, None, None]
        co, si = np.cos(th), np.sin(th)
    else:
        co = np.ones((N, 1, 1))
        si = np.zeros((N, 1, 1))
    sx = np.round(pts[:, 0][:, None, None] + U * co - V * si).astype(np.int64)
    sy = np.round(pts[:, 1][:, None, None] + U * si + V * co).astype(np.int64)
    sizes = np.broadcast_to(_haar_size(pts[:, 2], 2.0)[:, None, None], sx.shape)
    dx, dy = _responses(ii, sx.ravel(), sy.ravel(), sizes.ravel())
    dx = dx.reshape(N, side, side)
    dy = dy.reshape(N, side, side)
    w = np.exp(-(u**2 + v**2) / (2.0 * DESCRIPTOR_SIGMA**2))[None]
    du = w * (dx * co + dy * si)
    dv = w * (-dx * si + dy * co)
    S = SAMPLES_PER_SUBREGION
    shape = (N, n_grid, S, n_grid, S)
    du = du.reshape(shape)
    dv = dv.reshape(shape)
    parts = []
    if sums in ("all", "signed"):
        parts += [du.sum(axis=(2, 4)), dv.sum(axis=(2, 4))]
    if sums in ("all", "abs"):
        parts += [np.abs(du).sum(axis=(2, 4)), np.abs(dv).sum(axis=(2, 4))]
    # (N, n, n, k): sub-regions row-major, k sums per sub-region
    desc = np.stack(parts, axis=-1).reshape(N, -1)
    norm = np.linalg.norm(desc, axis=1, keepdims=True)
    return np.divide(desc, norm, out=np.zeros_like(desc), where=norm > 0)


def describe(ii: IntegralImage, point: InterestPoint, variant: str) -> np.ndarray:
    return describe_many(ii, points_array([point]), variant)[0]


def extract(img, variant: str = "USURF36", cfg: DetectorConfig | None = None, box: int | None = 20) -> FeatureSet:
    """Detect, grid-thin (when ``box`` is set), orient and describe features of one image."""
    from .dataset import grid_thin_indices

    variant = check_variant(variant)
    ii = img if isinstance(img, IntegralImage) else IntegralImage(img)
    pts = points_array(detect(ii, cfg))
    if box:
        pts = pts[grid_thin_indices(pts[:, 0], pts[:, 1], pts[:, 3], box)]
    if not is_upright(variant) and len(pts):
        pts[:, 4] = assign_orientations(ii, pts)
    desc = describe_many(ii, pts, variant)
    return FeatureSet(pts, desc, variant=variant)
