"""Grayscale images, integral images, box sums and Haar responses.

Images are plain ``(height, width)`` float64 arrays with values in [0, 1].
Rectangles are half-open ``[x0, x1) x [y0, y1)`` in pixel units and are
clipped to the image; Haar centres sit on pixel corners, so a Haar box of
size ``s`` centred at ``cx`` covers columns ``cx - s/2 .. cx + s/2 - 1``.
"""

from __future__ import annotations

import os

import numpy as np

from . import kernels

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class ImageError(ValueError):
    pass


def to_grayscale(rgb) -> np.ndarray:
    """Convert an 8-bit RGB (or already single-channel) image to [0, 1] luminance."""
    arr = np.asarray(rgb)
    if arr.size == 0 or 0 in arr.shape[:2]:
        raise ImageError("empty image")
    if arr.ndim == 2:
        return arr.astype(np.float64) / 255.0
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ImageError(f"expected an HxWx3 image, got shape {arr.shape}")
    a = arr.astype(np.float64)
    r, g, b = LUMA_WEIGHTS
    return (r * a[..., 0] + g * a[..., 1] + b * a[..., 2]) / 255.0


class IntegralImage:
    """Summed-area table of a grayscale image.

    ``table[y, x]`` is the sum of all pixels at rows <= y and columns <= x.
    A zero row and column are kept in front internally so that box lookups
    need no special cases.
    """

    def __init__(self, img):
        img = np.asarray(img, dtype=np.float64)
        if img.ndim != 2 or img.size == 0:
            raise ImageError("empty image")
        self.height, self.width = img.shape
        padded = np.zeros((self.height + 1, self.width + 1))
        np.cumsum(img, axis=0, out=padded[1:, 1:])
        np.cumsum(padded[1:, 1:], axis=1, out=padded[1:, 1:])
        self.padded = padded

    @property
    def table(self) -> np.ndarray:
        return self.padded[1:, 1:]

    @property
    def shape(self):
        return self.height, self.width

    def total(self) -> float:
        return float(self.padded[-1, -1])


def build_integral(img) -> IntegralImage:
    return IntegralImage(img)


def box_sum(ii: IntegralImage, x0: int, y0: int, x1: int, y1: int) -> float:
    """Sum of pixels in ``[x0, x1) x [y0, y1)`` after clipping to the image."""
    x0 = min(max(int(x0), 0), ii.width)
    x1 = min(max(int(x1), 0), ii.width)
    y0 = min(max(int(y0), 0), ii.height)
    y1 = min(max(int(y1), 0), ii.height)
    if x1 <= x0 or y1 <= y0:
        return 0.0
    t = ii.padded
    return float(t[y1, x1] - t[y0, x1] - t[y1, x0] + t[y0, x0])


def _check_haar_size(size):
    if size < 2 or size % 2:
        raise ImageError("haar size must be even")


def haar_x(ii: IntegralImage, cx: int, cy: int, size: int) -> float:
    """Right half minus left half of a ``size`` x ``size`` box centred at (cx, cy)."""
    _check_haar_size(size)
    h = size // 2
    return box_sum(ii, cx, cy - h, cx + h, cy + h) - box_sum(ii, cx - h, cy - h, cx, cy + h)


def haar_y(ii: IntegralImage, cx: int, cy: int, size: int) -> float:
    """Bottom half minus top half of a ``size`` x ``size`` box centred at (cx, cy)."""
    _check_haar_size(size)
    h = size // 2
    return box_sum(ii, cx - h, cy, cx + h, cy + h) - box_sum(ii, cx - h, cy - h, cx + h, cy)


def haar_responses(ii: IntegralImage, xs, ys, sizes):
    """Vectorised Haar x/y responses at integer centres; returns ``(dx, dy)``."""
    xs = np.ascontiguousarray(xs, dtype=np.int64)
    ys = np.ascontiguousarray(ys, dtype=np.int64)
    sizes = np.broadcast_to(np.asarray(sizes, dtype=np.int64), xs.shape)
    return kernels.haar_responses(ii.padded, xs, ys, np.ascontiguousarray(sizes))


# ---------------------------------------------------------------------------
# Netpbm I/O


def _read_token(data: bytes, pos: int):
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
        pos += 1
    return data[start:pos], pos


def read_pnm(path) -> np.ndarray:
    """Read a binary PGM (P5) or PPM (P6) with maxval <= 255.

    Returns a uint8 array, ``(h, w)`` for PGM and ``(h, w, 3)`` for PPM.
    """
    path = os.fspath(path)
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ImageError(f"cannot read {path}: {exc.strerror}") from exc
    magic, pos = _read_token(data, 0)
    if magic not in (b"P5", b"P6"):
        raise ImageError(f"{path}: not a binary PGM/PPM file")
    fields = []
    for _ in range(3):
        tok, pos = _read_token(data, pos)
        if not tok.isdigit():
            raise ImageError(f"{path}: malformed header")
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval > 255 or maxval < 1:
        raise ImageError(f"{path}: only 8-bit images are supported")
    pos += 1  # single whitespace byte after maxval
    channels = 3 if magic == b"P6" else 1
    count = width * height * channels
    pixels = np.frombuffer(data, dtype=np.uint8, count=count, offset=pos) if len(data) - pos >= count else None
    if pixels is None:
        raise ImageError(f"{path}: truncated pixel data")
    if maxval != 255:
        pixels = np.round(pixels.astype(np.float64) * (255.0 / maxval)).astype(np.uint8)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return pixels.reshape(shape).copy()


def write_pgm(path, img) -> None:
    """Write a PGM.  Float images are taken to be in [0, 1]; integer images as-is."""
    arr = np.asarray(img)
    if arr.dtype.kind == "f":
        arr = np.clip(np.floor(arr * 255.0 + 0.5), 0, 255)
    arr = arr.astype(np.uint8)
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(arr).tobytes())


def write_ppm(path, rgb) -> None:
    arr = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(arr).tobytes())


def load_gray(path) -> np.ndarray:
    return to_grayscale(read_pnm(path))
