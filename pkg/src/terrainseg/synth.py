"""Synthetic terrain scenes with exact label masks.

Five texture families stand in for the five terrain classes:

* grass  - band-limited noise stretched vertically (blades)
* gravel - bright speckles on a darker ground
* trees  - dark strokes at mixed oblique angles (branches)
* dirt   - low-frequency dark blotches, smeared horizontally
* sky    - smooth vertical gradient with faint large clouds

A scene is a sky band above a ground made of rectangular tiles.  Pixels within
``border`` of a region boundary are marked IGNORE in the mask.
"""

from __future__ import annotations

import math
import os

import numpy as np

from .dataset import IGNORE
from .imaging import write_pgm, write_ppm

GRASS, GRAVEL, TREES, DIRT, SKY = range(5)


def _filtered_noise(rng, shape, transfer):
    """White noise shaped in the frequency domain by ``transfer(fy, fx)``; unit std."""
    h, w = shape
    noise = rng.standard_normal(shape)
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    out = np.real(np.fft.ifft2(np.fft.fft2(noise) * transfer(fy, fx)))
    sd = out.std()
    return out / sd if sd > 0 else out


def _gauss_transfer(sy, sx, angle=0.0):
    """Frequency response of a Gaussian blur with sigmas (sy, sx), long axis rotated by ``angle``."""
    c, s = math.cos(angle), math.sin(angle)

    def transfer(fy, fx):
        u = c * fx + s * fy
        v = -s * fx + c * fy
        return np.exp(-2 * math.pi**2 * ((u * sx) ** 2 + (v * sy) ** 2))

    return transfer


def _band(sy, sx, angle=0.0, ratio=2.5, keep=0.8):
    """Band-pass: a blur minus a wider blur of the same shape."""
    lo = _gauss_transfer(sy, sx, angle)
    hi = _gauss_transfer(ratio * sy, ratio * sx, angle)
    return lambda fy, fx: lo(fy, fx) - keep * hi(fy, fx)


def grass(rng, shape):
    # thin vertical blades
    t = _filtered_noise(rng, shape, _band(rng.uniform(4.0, 6.0), rng.uniform(0.9, 1.2)))
    return 0.45 + 0.14 * t


def gravel(rng, shape):
    h, w = shape
    img = 0.35 + 0.03 * _filtered_noise(rng, shape, _gauss_transfer(1.0, 1.0))
    count = int(h * w * rng.uniform(0.010, 0.016))
    ys = rng.uniform(0, h, count)
    xs = rng.uniform(0, w, count)
    rs = rng.uniform(1.2, 2.4, count)
    yy, xx = np.mgrid[0:h, 0:w]
    for y, x, r in zip(ys, xs, rs):
        y0, y1 = max(int(y - 3 * r), 0), min(int(y + 3 * r) + 1, h)
        x0, x1 = max(int(x - 3 * r), 0), min(int(x + 3 * r) + 1, w)
        d2 = (yy[y0:y1, x0:x1] - y) ** 2 + (xx[y0:y1, x0:x1] - x) ** 2
        img[y0:y1, x0:x1] += 0.4 * np.exp(-d2 / (2 * r * r))
    return img


def trees(rng, shape):
    # dark branches, one dominant diagonal plus a weaker crossing one
    sgn = 1.0 if rng.random() < 0.5 else -1.0
    out = np.zeros(shape)
    for weight, side in ((1.0, sgn), (0.4, -sgn)):
        ang = side * rng.uniform(math.radians(35), math.radians(55))
        out += weight * _filtered_noise(rng, shape, _band(rng.uniform(5.0, 7.0), rng.uniform(1.0, 1.4), ang))
    branches = 1.0 / (1.0 + np.exp(-4.0 * (out - 0.8)))
    return 0.55 - 0.3 * branches


def dirt(rng, shape):
    # dark blotches smeared horizontally (ruts)
    sy = rng.uniform(2.0, 3.0)
    t = _filtered_noise(rng, shape, _gauss_transfer(sy, 3.0 * sy))
    blot = 1.0 / (1.0 + np.exp(-3.0 * (t - 0.5)))
    return 0.65 - 0.35 * blot + 0.015 * _filtered_noise(rng, shape, _gauss_transfer(1.0, 1.0))


def sky(rng, shape):
    h, w = shape
    top, bottom = rng.uniform(0.75, 0.9), rng.uniform(0.55, 0.7)
    grad = np.linspace(top, bottom, h)[:, None] * np.ones((1, w))
    s = rng.uniform(6.0, 10.0)
    clouds = np.maximum(_filtered_noise(rng, shape, _gauss_transfer(s, 2.5 * s, math.pi / 2)), 0.0)
    return grad + 0.12 * clouds


TEXTURES = (grass, gravel, trees, dirt, sky)


def _ground_layout(rng, h, w):
    """Rectangular tiles covering an ``h x w`` ground region: list of (y0, y1, x0, x1)."""
    rows = rng.integers(1, 3)
    cols = rng.integers(2, 4)
    ycuts = np.sort(rng.choice(np.arange(h // 4, 3 * h // 4), rows - 1, replace=False)) if rows > 1 else []
    xcuts = np.sort(rng.choice(np.arange(w // 5, 4 * w // 5), cols - 1, replace=False))
    ys = [0, *map(int, ycuts), h]
    xs = [0, *map(int, xcuts), w]
    tiles = []
    for r in range(rows):
        for c in range(cols):
            tiles.append((ys[r], ys[r + 1], xs[c], xs[c + 1]))
    return tiles


def _boundary(label_map, border):
    h, w = label_map.shape
    edge = np.zeros((h, w), dtype=bool)
    edge[:, 1:] |= label_map[:, 1:] != label_map[:, :-1]
    edge[:, :-1] |= label_map[:, 1:] != label_map[:, :-1]
    edge[1:, :] |= label_map[1:, :] != label_map[:-1, :]
    edge[:-1, :] |= label_map[1:, :] != label_map[:-1, :]
    out = edge.copy()
    for _ in range(border - 1):
        grown = out.copy()
        grown[1:, :] |= out[:-1, :]
        grown[:-1, :] |= out[1:, :]
        grown[:, 1:] |= out[:, :-1]
        grown[:, :-1] |= out[:, 1:]
        out = grown
    return out


def make_scene(rng, width=640, height=480, border=4):
    """One scene: ``(rgb uint8 (h, w, 3), mask uint8 (h, w))``."""
    sky_h = int(height * rng.uniform(0.2, 0.35))
    labels = np.empty((height, width), dtype=np.uint8)
    gray = np.empty((height, width))
    labels[:sky_h] = SKY
    gray[:sky_h] = sky(rng, (sky_h, width))
    ground = [GRASS, GRAVEL, TREES, DIRT]
    tiles = _ground_layout(rng, height - sky_h, width)
    classes = list(rng.permutation(ground))
    while len(classes) < len(tiles):
        classes.append(int(rng.integers(0, 4)))
    for (y0, y1, x0, x1), c in zip(tiles, classes):
        y0, y1 = y0 + sky_h, y1 + sky_h
        labels[y0:y1, x0:x1] = c
        gray[y0:y1, x0:x1] = TEXTURES[c](rng, (y1 - y0, x1 - x0))
    gain = rng.uniform(0.85, 1.1)
    gray = np.clip(gray * gain, 0.0, 1.0)
    tint = np.array([rng.uniform(0.95, 1.05), 1.0, rng.uniform(0.95, 1.05)])
    rgb = np.clip(np.floor(gray[..., None] * tint * 255.0 + 0.5), 0, 255).astype(np.uint8)
    mask = labels.copy()
    if border > 0:
        mask[_boundary(labels, border)] = IGNORE
    return rgb, mask


def generate_corpus(out_dir, n_train=20, n_test=10, seed=0, width=640, height=480):
    """Write scenes, masks and ``train.tsv`` / ``test.tsv`` manifests into ``out_dir``.

    Returns the manifest paths.  Output is byte-identical for a given seed.
    """
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    manifests = {}
    for split, count in (("train", n_train), ("test", n_test)):
        lines = []
        for i in range(count):
            rgb, mask = make_scene(rng, width, height)
            img_name = f"{split}_{i:03d}.ppm"
            mask_name = f"{split}_{i:03d}_mask.pgm"
            write_ppm(os.path.join(out_dir, img_name), rgb)
            write_pgm(os.path.join(out_dir, mask_name), mask)
            lines.append(f"{img_name}\t{mask_name}")
        path = os.path.join(out_dir, f"{split}.tsv")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
        manifests[split] = path
    return manifests["train"], manifests["test"]
