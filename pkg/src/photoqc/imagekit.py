"""Image decoding and the geometric/color primitives the features build on.

All operations are pure: images are immutable after construction and every
function returns a new object, so they are safe under any parallelism.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import kernels
from .errors import CorruptStream, DegenerateCrop, ImageTooSmall, UnsupportedFormat

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
DEFAULT_MAX_SIDE = 512


@dataclass(frozen=True)
class RasterImage:
    """Decoded RGB image; data is (height, width, 3) uint8, row-major."""

    data: np.ndarray

    def __post_init__(self):
        d = self.data
        if d.ndim != 3 or d.shape[2] != 3 or d.dtype != np.uint8:
            raise ValueError("RasterImage.data must be (h, w, 3) uint8")
        if d.shape[0] < 1 or d.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        d.setflags(write=False)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class GrayImage:
    """Real-valued luminance plane; data is (height, width) float64 in [0, 255]."""

    data: np.ndarray

    def __post_init__(self):
        d = self.data
        if d.ndim != 2 or d.dtype != np.float64:
            raise ValueError("GrayImage.data must be (h, w) float64")
        if d.shape[0] < 1 or d.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if d.min() < 0.0 or d.max() > 255.0:
            raise ValueError("GrayImage samples must lie in [0, 255]")
        d.setflags(write=False)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def decode_image(data: bytes) -> RasterImage:
    """Decode a PNG or JPEG byte stream.

    Alpha is dropped, grayscale sources are replicated to three channels.
    Raises UnsupportedFormat for other containers, CorruptStream for
    truncated or invalid data.
    """
    try:
        img = Image.open(io.BytesIO(data))
        fmt = img.format
        if fmt not in ("PNG", "JPEG"):
            raise UnsupportedFormat(f"unsupported image format: {fmt}")
        img.load()
    except UnsupportedFormat:
        raise
    except UnidentifiedImageError as exc:
        # bytes that no codec recognizes are corrupt input, not a format choice
        raise CorruptStream(f"not a decodable image stream: {exc}") from exc
    except Exception as exc:
        raise CorruptStream(f"failed to decode image: {exc}") from exc
    if img.mode != "RGB":
        img = img.convert("RGB")
    return RasterImage(np.asarray(img, dtype=np.uint8).copy())


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def resize_max_side(img: RasterImage, max_side: int = DEFAULT_MAX_SIDE) -> RasterImage:
    """Bilinear downscale so max(w, h) == max_side; never upscales."""
    if max_side < 1:
        raise ValueError("max_side must be >= 1")
    long_side = max(img.width, img.height)
    if long_side <= max_side:
        return img
    scale = max_side / long_side
    out_w = max(1, _round_half_up(img.width * scale))
    out_h = max(1, _round_half_up(img.height * scale))
    resized = kernels.resize_bilinear(img.data.astype(np.float64), out_h, out_w)
    return RasterImage(np.floor(resized + 0.5).clip(0, 255).astype(np.uint8))


def to_grayscale(img: RasterImage) -> GrayImage:
    """Per-pixel 0.299 R + 0.587 G + 0.114 B, kept real-valued."""
    rgb = img.data.astype(np.float64)
    lum = (LUMA_WEIGHTS[0] * rgb[:, :, 0]
           + LUMA_WEIGHTS[1] * rgb[:, :, 1]
           + LUMA_WEIGHTS[2] * rgb[:, :, 2])
    return GrayImage(np.minimum(lum, 255.0))


def center_crop_frac(img, frac: float):
    """Centered crop of round(frac*w) x round(frac*h); same image kind out.

    A one-pixel centering ambiguity is resolved toward the top-left so
    results are reproducible.
    """
    if not 0.0 < frac <= 1.0:
        raise ValueError("frac must be in (0, 1]")
    cw = _round_half_up(img.width * frac)
    ch = _round_half_up(img.height * frac)
    if cw < 1 or ch < 1:
        raise DegenerateCrop(f"crop of {img.width}x{img.height} at frac {frac} vanishes")
    x0 = (img.width - cw) // 2
    y0 = (img.height - ch) // 2
    data = img.data[y0:y0 + ch, x0:x0 + cw].copy()
    return type(img)(data)


def grid_partition(img: GrayImage, rows: int = 5, cols: int = 5) -> list[GrayImage]:
    """Row-major non-overlapping blocks, boundaries at floor(i*dim/n)."""
    if img.width < cols or img.height < rows:
        raise ImageTooSmall(f"{img.width}x{img.height} image cannot form a {rows}x{cols} grid")
    ys = [i * img.height // rows for i in range(rows + 1)]
    xs = [j * img.width // cols for j in range(cols + 1)]
    blocks = []
    for i in range(rows):
        for j in range(cols):
            blocks.append(GrayImage(img.data[ys[i]:ys[i + 1], xs[j]:xs[j + 1]].copy()))
    return blocks
