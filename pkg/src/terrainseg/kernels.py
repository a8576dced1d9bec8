"""Hot inner loops, each with a numba and a numpy implementation.

All kernels take the zero-padded summed-area table (``IntegralImage.padded``)
so a box ``[r0, r0 + nr) x [c0, c0 + nc)`` is four lookups after clipping.
The public names at the bottom are bound once, at import, by
:func:`terrainseg._accel.pick`.
"""

import math

import numpy as np

from ._accel import njit, pick

# ---------------------------------------------------------------------------
# numba versions


@njit
def _box_nb(P, r0, c0, nr, nc):
    H = P.shape[0] - 1
    W = P.shape[1] - 1
    r1 = min(max(r0, 0), H)
    r2 = min(max(r0 + nr, 0), H)
    c1 = min(max(c0, 0), W)
    c2 = min(max(c0 + nc, 0), W)
    return P[r2, c2] - P[r1, c2] - P[r2, c1] + P[r1, c1]


@njit
def _haar_responses_nb(P, xs, ys, sizes):
    n = xs.shape[0]
    dx = np.empty(n)
    dy = np.empty(n)
    for i in range(n):
        h = sizes[i] // 2
        x = xs[i]
        y = ys[i]
        dx[i] = _box_nb(P, y - h, x, 2 * h, h) - _box_nb(P, y - h, x - h, 2 * h, h)
        dy[i] = _box_nb(P, y, x - h, h, 2 * h) - _box_nb(P, y - h, x - h, h, 2 * h)
    return dx, dy


@njit
def _hessian_layer_nb(P, filter_size, step, out_h, out_w):
    lobe = filter_size // 3
    border = (filter_size - 1) // 2
    inv_area = 1.0 / (filter_size * filter_size)
    det = np.empty((out_h, out_w))
    for i in range(out_h):
        r = i * step
        for j in range(out_w):
            c = j * step
            dxx = _box_nb(P, r - lobe + 1, c - border, 2 * lobe - 1, filter_size) - 3.0 * _box_nb(
                P, r - lobe + 1, c - lobe // 2, 2 * lobe - 1, lobe
            )
            dyy = _box_nb(P, r - border, c - lobe + 1, filter_size, 2 * lobe - 1) - 3.0 * _box_nb(
                P, r - lobe // 2, c - lobe + 1, lobe, 2 * lobe - 1
            )
            dxy = (
                _box_nb(P, r - lobe, c + 1, lobe, lobe)
                + _box_nb(P, r + 1, c - lobe, lobe, lobe)
                - _box_nb(P, r - lobe, c - lobe, lobe, lobe)
                - _box_nb(P, r + 1, c + 1, lobe, lobe)
            )
            dxx *= inv_area
            dyy *= inv_area
            dxy *= inv_area
            det[i, j] = dxx * dyy - 0.81 * dxy * dxy
    return det


@njit
def _splat_nb(xs, ys, sigmas, scores, height, width):
    m = scores.shape[1]
    acc = np.zeros((height, width, m))
    weight = np.zeros((height, width))
    for f in range(xs.shape[0]):
        s = sigmas[f]
        reach = 3.0 * s
        inv = 1.0 / (2.0 * s * s)
        y0 = max(int(math.ceil(ys[f] - reach)), 0)
        y1 = min(int(math.floor(ys[f] + reach)), height - 1)
        x0 = max(int(math.ceil(xs[f] - reach)), 0)
        x1 = min(int(math.floor(xs[f] + reach)), width - 1)
        for py in range(y0, y1 + 1):
            ddy = py - ys[f]
            for px in range(x0, x1 + 1):
                ddx = px - xs[f]
                d2 = ddx * ddx + ddy * ddy
                if d2 > reach * reach:
                    continue
                w = math.exp(-d2 * inv)
                weight[py, px] += w
                for k in range(m):
                    acc[py, px, k] += w * scores[f, k]
    return acc, weight


# ---------------------------------------------------------------------------
# numpy versions


def _box_np(P, r0, c0, nr, nc):
    H = P.shape[0] - 1
    W = P.shape[1] - 1
    r1 = np.clip(r0, 0, H)
    r2 = np.clip(r0 + nr, 0, H)
    c1 = np.clip(c0, 0, W)
    c2 = np.clip(c0 + nc, 0, W)
    return P[r2, c2] - P[r1, c2] - P[r2, c1] + P[r1, c1]


def _haar_responses_np(P, xs, ys, sizes):
    h = sizes // 2
    dx = _box_np(P, ys - h, xs, 2 * h, h) - _box_np(P, ys - h, xs - h, 2 * h, h)
    dy = _box_np(P, ys, xs - h, h, 2 * h) - _box_np(P, ys - h, xs - h, h, 2 * h)
    return dx.astype(np.float64), dy.astype(np.float64)


def _hessian_layer_np(P, filter_size, step, out_h, out_w):
    lobe = filter_size // 3
    border = (filter_size - 1) // 2
    r = (np.arange(out_h, dtype=np.int64) * step)[:, None]
    c = (np.arange(out_w, dtype=np.int64) * step)[None, :]
    r, c = np.broadcast_arrays(r, c)
    dxx = _box_np(P, r - lobe + 1, c - border, 2 * lobe - 1, filter_size) - 3.0 * _box_np(
        P, r - lobe + 1, c - lobe // 2, 2 * lobe - 1, lobe
    )
    dyy = _box_np(P, r - border, c - lobe + 1, filter_size, 2 * lobe - 1) - 3.0 * _box_np(
        P, r - lobe // 2, c - lobe + 1, lobe, 2 * lobe - 1
    )
    dxy = (
        _box_np(P, r - lobe, c + 1, lobe, lobe)
        + _box_np(P, r + 1, c - lobe, lobe, lobe)
        - _box_np(P, r - lobe, c - lobe, lobe, lobe)
        - _box_np(P, r + 1, c + 1, lobe, lobe)
    )
    inv_area = 1.0 / (filter_size * filter_size)
    dxx = dxx * inv_area
    dyy = dyy * inv_area
    dxy = dxy * inv_area
    return dxx * dyy - 0.81 * dxy * dxy


def _splat_np(xs, ys, sigmas, scores, height, width):
    m = scores.shape[1]
    acc = np.zeros((height, width, m))
    weight = np.zeros((height, width))
    for f in range(xs.shape[0]):
        s = sigmas[f]
        reach = 3.0 * s
        y0 = max(math.ceil(ys[f] - reach), 0)
        y1 = min(math.floor(ys[f] + reach), height - 1)
        x0 = max(math.ceil(xs[f] - reach), 0)
        x1 = min(math.floor(xs[f] + reach), width - 1)
        if y1 < y0 or x1 < x0:
            continue
        py = np.arange(y0, y1 + 1)[:, None] - ys[f]
        px = np.arange(x0, x1 + 1)[None, :] - xs[f]
        d2 = px * px + py * py
        w = np.where(d2 <= reach * reach, np.exp(-d2 / (2.0 * s * s)), 0.0)
        weight[y0 : y1 + 1, x0 : x1 + 1] += w
        acc[y0 : y1 + 1, x0 : x1 + 1, :] += w[:, :, None] * scores[f][None, None, :]
    return acc, weight


haar_responses = pick(_haar_responses_nb, _haar_responses_np)
hessian_layer = pick(_hessian_layer_nb, _hessian_layer_np)
splat = pick(_splat_nb, _splat_np)

IMPLEMENTATIONS = {
    "haar_responses": (_haar_responses_nb, _haar_responses_np),
    "hessian_layer": (_hessian_layer_nb, _hessian_layer_np),
    "splat": (_splat_nb, _splat_np),
}
