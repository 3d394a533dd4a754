"""Hand-crafted quality features and the two feature-vector recipes.

Feature layout (layout_version 1)
---------------------------------
group1, 144 dims, four 36-dim sections in this order:
    [30% crop of grayscale] [30% crop of skin map] [60% crop of grayscale]
    [60% crop of skin map]
  each section = LBP histogram (26) + Fourier blur (mean_db, std_db)
  + lighting (dark_frac, bright_frac, dark q25/q50/q75, bright q25/q50/q75).

group2, 383 dims:
    25 grid blocks of the grayscale image, row-major, 11 dims each
    (Fourier 2, Laplacian variance 1, lighting 8)                -> 275
    then the 30% center crop of each raw channel R, G, B,
    36 dims each as in the group1 sections                       -> 108

All functions are pure; identical bytes in give identical vectors out.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ImageTooSmall
from .imagekit import GrayImage, RasterImage, center_crop_frac, grid_partition, to_grayscale

LAYOUT_VERSION = 1
LBP_POINTS = 24
LBP_RADIUS = 8
LBP_BINS = LBP_POINTS + 2
DARK_THRESHOLD = 50.0
BRIGHT_THRESHOLD = 205.0
DB_FLOOR = 1e-8
GROUP1_DIM = 144
GROUP2_DIM = 383
SECTION_DIM = LBP_BINS + 2 + 8  # 36
BLOCK_DIM = 2 + 1 + 8  # 11


@dataclass(frozen=True)
class LbpHistogram:
    bins: np.ndarray  # (26,) sums to 1

    def __post_init__(self):
        if self.bins.shape != (LBP_BINS,):
            raise ValueError("expected 26 uniform-LBP bins")
        if abs(float(self.bins.sum()) - 1.0) > 1e-9 or self.bins.min() < 0:
            raise ValueError("LBP histogram must be a distribution")


@dataclass(frozen=True)
class FourierBlurFeatures:
    mean_db: float
    std_db: float


@dataclass(frozen=True)
class LaplacianBlurFeature:
    variance: float


@dataclass(frozen=True)
class LightingFeatures:
    dark_frac: float
    bright_frac: float
    dark_q25: float
    dark_q50: float
    dark_q75: float
    bright_q25: float
    bright_q50: float
    bright_q75: float

    def as_vector(self) -> np.ndarray:
        return np.array([self.dark_frac, self.bright_frac,
                         self.dark_q25, self.dark_q50, self.dark_q75,
                         self.bright_q25, self.bright_q50, self.bright_q75])


@dataclass(frozen=True)
class FeatureVector:
    group: str  # "group1" | "group2"
    values: np.ndarray
    layout_version: int = LAYOUT_VERSION

    def __post_init__(self):
        expected = GROUP1_DIM if self.group == "group1" else GROUP2_DIM
        if self.group not in ("group1", "group2"):
            raise ValueError(f"unknown feature group {self.group!r}")
        if self.values.shape != (expected,):
            raise ValueError(f"{self.group} vector must have {expected} dims")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature values must be finite")


def lbp_histogram(img: GrayImage, points: int = LBP_POINTS,
                  radius: int = LBP_RADIUS) -> LbpHistogram:
    """Histogram of uniform rotation-invariant LBP codes over interior pixels."""
    if min(img.width, img.height) <= 2 * radius:
        raise ImageTooSmall(
            f"LBP radius {radius} needs a side above {2 * radius}, got {img.width}x{img.height}")
    codes = kernels.lbp_code_image(img.data, points, radius)
    counts = np.bincount(codes.ravel(), minlength=points + 2).astype(np.float64)
    return LbpHistogram(counts / counts.sum())


def fourier_blur(img: GrayImage) -> FourierBlurFeatures:
    """Mean/std of high-frequency DFT magnitudes in dB.

    The low-frequency block within Chebyshev radius max(1, floor(min(w,h)/8))
    of the centered zero-frequency bin is removed before the statistics;
    magnitudes are floored at 1e-8 so the dB values stay finite.
    """
    h, w = img.height, img.width
    if h < 8 or w < 8:
        raise ImageTooSmall(f"fourier_blur needs at least 8x8, got {w}x{h}")
    spectrum = np.fft.fftshift(np.fft.fft2(img.data))
    cy, cx = h // 2, w // 2
    r = max(1, min(w, h) // 8)
    yy = np.abs(np.arange(h) - cy)
    xx = np.abs(np.arange(w) - cx)
    keep = np.maximum(yy[:, None], xx[None, :]) > r
    mags = np.abs(spectrum[keep])
    db = 20.0 * np.log10(np.maximum(mags, DB_FLOOR))
    return FourierBlurFeatures(mean_db=float(db.mean()), std_db=float(db.std()))


def laplacian_variance(img: GrayImage) -> LaplacianBlurFeature:
    """Population variance of the 4-neighbour Laplacian over the valid interior."""
    if img.height < 3 or img.width < 3:
        raise ImageTooSmall(f"laplacian needs at least 3x3, got {img.width}x{img.height}")
    a = img.data
    lap = (a[:-2, 1:-1] + a[2:, 1:-1] + a[1:-1, :-2] + a[1:-1, 2:]
           - 4.0 * a[1:-1, 1:-1])
    return LaplacianBlurFeature(variance=float(lap.var()))


def lighting_features(img: GrayImage) -> LightingFeatures:
    """Fractions and quantiles of the dark [0,50) and bright (205,255] pixel groups."""
    vals = img.data.ravel()
    dark = vals[vals < DARK_THRESHOLD]
    bright = vals[vals > BRIGHT_THRESHOLD]
    n = vals.size
    if dark.size:
        dq = np.quantile(dark, [0.25, 0.5, 0.75])
    else:
        dq = np.full(3, DARK_THRESHOLD)
    if bright.size:
        bq = np.quantile(bright, [0.25, 0.5, 0.75])
    else:
        bq = np.full(3, BRIGHT_THRESHOLD)
    return LightingFeatures(
        dark_frac=dark.size / n, bright_frac=bright.size / n,
        dark_q25=float(dq[0]), dark_q50=float(dq[1]), dark_q75=float(dq[2]),
        bright_q25=float(bq[0]), bright_q50=float(bq[1]), bright_q75=float(bq[2]))


def _section(img: GrayImage) -> np.ndarray:
    """LBP + Fourier + lighting, the 36-dim building block."""
    lbp = lbp_histogram(img)
    fb = fourier_blur(img)
    lf = lighting_features(img)
    return np.concatenate([lbp.bins, [fb.mean_db, fb.std_db], lf.as_vector()])


def _skin_to_gray(skin) -> GrayImage:
    return GrayImage(np.ascontiguousarray(skin.data, dtype=np.float64) * 255.0)


def group1_features(img: RasterImage, skin) -> FeatureVector:
    """Center-crop LBP/Fourier/lighting sections over grayscale and skin map."""
    if (skin.data.shape[0], skin.data.shape[1]) != (img.height, img.width):
        raise ValueError("skin map dimensions must match the image")
    gray = to_grayscale(img)
    skin_gray = _skin_to_gray(skin)
    sections = []
    for frac in (0.3, 0.6):
        sections.append(_section(center_crop_frac(gray, frac)))
        sections.append(_section(center_crop_frac(skin_gray, frac)))
    return FeatureVector(group="group1", values=np.concatenate(sections))


def group2_features(img: RasterImage) -> FeatureVector:
    """5x5 grid block features plus per-channel 30% crop sections."""
    if img.width < 40 or img.height < 40:
        raise ImageTooSmall(
            f"group2 needs at least 40x40 after resizing, got {img.width}x{img.height}")
    gray = to_grayscale(img)
    parts = []
    for block in grid_partition(gray, 5, 5):
        fb = fourier_blur(block)
        lap = laplacian_variance(block)
        lf = lighting_features(block)
        parts.append(np.concatenate([[fb.mean_db, fb.std_db, lap.variance], lf.as_vector()]))
    for ch in range(3):
        plane = GrayImage(img.data[:, :, ch].astype(np.float64))
        parts.append(_section(center_crop_frac(plane, 0.3)))
    return FeatureVector(group="group2", values=np.concatenate(parts))


# --------------------------------------------------------------------------
# flat binary feature container + image-id sidecar
# --------------------------------------------------------------------------

_MAGIC = b"PQFM"
_HEADER = struct.Struct("<4sHBII")
_GROUP_CODE = {"group1": 1, "group2": 2}
_GROUP_NAME = {1: "group1", 2: "group2"}


def index_path(path) -> str:
    return str(path) + ".index.csv"


def save_feature_matrix(path, group: str, matrix: np.ndarray, image_ids) -> None:
    """Write the binary container and its row-index sidecar CSV."""
    matrix = np.ascontiguousarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ValueError("feature matrix must be 2-D")
    expected = {"group1": GROUP1_DIM, "group2": GROUP2_DIM}[group]
    if matrix.shape[1] != expected:
        raise ValueError(f"{group} rows need {expected} dims, got {matrix.shape[1]}")
    if len(image_ids) != matrix.shape[0]:
        raise ValueError("one image id per row required")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, LAYOUT_VERSION, _GROUP_CODE[group],
                              matrix.shape[0], matrix.shape[1]))
        fh.write(matrix.astype("<f8").tobytes())
    with open(index_path(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["row", "image_id"])
        for i, image_id in enumerate(image_ids):
            writer.writerow([i, image_id])


def load_feature_matrix(path):
    """Read a container; returns (group, matrix, image_ids)."""
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        magic, layout, group_code, rows, dims = _HEADER.unpack(header)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a feature container")
        if layout != LAYOUT_VERSION:
            raise ValueError(f"{path}: unsupported feature layout {layout}")
        payload = fh.read(rows * dims * 8)
    matrix = np.frombuffer(payload, dtype="<f8").reshape(rows, dims).astype(np.float64)
    with open(index_path(path), newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        image_ids = [row[1] for row in reader]
    if len(image_ids) != rows:
        raise ValueError(f"{path}: sidecar rows do not match container")
    return _GROUP_NAME[group_code], matrix, image_ids
