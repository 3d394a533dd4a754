"""Hot per-pixel kernels with numba-compiled and pure-numpy paths.

The JIT path is used when numba imports cleanly; set PHOTOQC_NUMBA=0 to
force the numpy fallbacks (the benchmark under benchmarks/ times both).
Both paths evaluate the same arithmetic in the same order, so they agree
bit-for-bit; tests/test_kernels.py asserts that.
"""

from __future__ import annotations

import os

import numpy as np

USE_NUMBA = os.environ.get("PHOTOQC_NUMBA", "1") != "0"
if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        USE_NUMBA = False

__all__ = ["USE_NUMBA", "lbp_code_image", "resize_bilinear", "circle_offsets"]


def circle_offsets(points: int, radius: float):
    """(dy, dx) sample offsets on the radius-R circle, angle 2*pi*k/P.

    Rounded to 8 decimals so axis-aligned samples land exactly on pixels.
    """
    angles = 2.0 * np.pi * np.arange(points) / points
    dy = np.round(-radius * np.sin(angles), 8)
    dx = np.round(radius * np.cos(angles), 8)
    return dy, dx


# --------------------------------------------------------------------------
# pure-numpy implementations
# --------------------------------------------------------------------------

def _lbp_codes_numpy(gray, dy, dx, radius):
    h, w = gray.shape
    points = dy.shape[0]
    center = gray[radius:h - radius, radius:w - radius]
    ones = np.zeros(center.shape, dtype=np.int32)
    trans = np.zeros(center.shape, dtype=np.int32)
    first = None
    prev = None
    for k in range(points):
        iy = int(np.floor(dy[k]))
        ix = int(np.floor(dx[k]))
        fy = dy[k] - iy
        fx = dx[k] - ix
        y0 = radius + iy
        x0 = radius + ix
        # zero-weight neighbours are clamped in-range so indexing stays legal
        y1 = y0 + 1 if y0 + 1 + center.shape[0] - 1 <= h - 1 else y0
        x1 = x0 + 1 if x0 + 1 + center.shape[1] - 1 <= w - 1 else x0
        a = gray[y0:y0 + center.shape[0], x0:x0 + center.shape[1]]
        b = gray[y0:y0 + center.shape[0], x1:x1 + center.shape[1]]
        c = gray[y1:y1 + center.shape[0], x0:x0 + center.shape[1]]
        d = gray[y1:y1 + center.shape[0], x1:x1 + center.shape[1]]
        w00 = (1.0 - fy) * (1.0 - fx)
        w01 = (1.0 - fy) * fx
        w10 = fy * (1.0 - fx)
        w11 = fy * fx
        sample = w00 * a + w01 * b + w10 * c + w11 * d
        bit = sample >= center
        ones += bit
        if first is None:
            first = bit
        else:
            trans += bit != prev
        prev = bit
    trans += prev != first
    codes = np.where(trans <= 2, ones, points + 1)
    return codes.astype(np.int32)


def _resize_bilinear_numpy(img, out_h, out_w):
    h, w = img.shape[:2]
    sy = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    sx = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    sy = np.clip(sy, 0.0, h - 1.0)
    sx = np.clip(sx, 0.0, w - 1.0)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    fy = sy - y0
    fx = sx - x0
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fyc = fy[:, None, None]
    fxc = fx[None, :, None]
    a = img[y0[:, None], x0[None, :], :]
    b = img[y0[:, None], x1[None, :], :]
    c = img[y1[:, None], x0[None, :], :]
    d = img[y1[:, None], x1[None, :], :]
    top = (1.0 - fxc) * a + fxc * b
    bot = (1.0 - fxc) * c + fxc * d
    return (1.0 - fyc) * top + fyc * bot


# --------------------------------------------------------------------------
# numba implementations (same arithmetic, explicit loops)
# --------------------------------------------------------------------------

if USE_NUMBA:

    @njit(cache=True)
    def _lbp_codes_jit(gray, dy, dx, radius):
        h, w = gray.shape
        points = dy.shape[0]
        oh = h - 2 * radius
        ow = w - 2 * radius
        codes = np.empty((oh, ow), dtype=np.int32)
        iy = np.empty(points, dtype=np.int64)
        ix = np.empty(points, dtype=np.int64)
        fy = np.empty(points)
        fx = np.empty(points)
        for k in range(points):
            iy[k] = int(np.floor(dy[k]))
            ix[k] = int(np.floor(dx[k]))
            fy[k] = dy[k] - iy[k]
            fx[k] = dx[k] - ix[k]
        for r in range(oh):
            for cidx in range(ow):
                cy = r + radius
                cx = cidx + radius
                center = gray[cy, cx]
                ones = 0
                trans = 0
                first = False
                prev = False
                for k in range(points):
                    y0 = cy + iy[k]
                    x0 = cx + ix[k]
                    y1 = y0 + 1 if y0 + 1 <= h - 1 else y0
                    x1 = x0 + 1 if x0 + 1 <= w - 1 else x0
                    w00 = (1.0 - fy[k]) * (1.0 - fx[k])
                    w01 = (1.0 - fy[k]) * fx[k]
                    w10 = fy[k] * (1.0 - fx[k])
                    w11 = fy[k] * fx[k]
                    sample = (w00 * gray[y0, x0] + w01 * gray[y0, x1]
                              + w10 * gray[y1, x0] + w11 * gray[y1, x1])
                    bit = sample >= center
                    if bit:
                        ones += 1
                    if k == 0:
                        first = bit
                    elif bit != prev:
                        trans += 1
                    prev = bit
                if prev != first:
                    trans += 1
                codes[r, cidx] = ones if trans <= 2 else points + 1
        return codes

    @njit(cache=True)
    def _resize_bilinear_jit(img, out_h, out_w):
        h, w, ch = img.shape
        out = np.empty((out_h, out_w, ch))
        scale_y = h / out_h
        scale_x = w / out_w
        for i in range(out_h):
            sy = (i + 0.5) * scale_y - 0.5
            if sy < 0.0:
                sy = 0.0
            elif sy > h - 1.0:
                sy = h - 1.0
            y0 = int(np.floor(sy))
            fy = sy - y0
            y1 = y0 + 1 if y0 + 1 < h else h - 1
            for j in range(out_w):
                sx = (j + 0.5) * scale_x - 0.5
                if sx < 0.0:
                    sx = 0.0
                elif sx > w - 1.0:
                    sx = w - 1.0
                x0 = int(np.floor(sx))
                fx = sx - x0
                x1 = x0 + 1 if x0 + 1 < w else w - 1
                for c in range(ch):
                    top = (1.0 - fx) * img[y0, x0, c] + fx * img[y0, x1, c]
                    bot = (1.0 - fx) * img[y1, x0, c] + fx * img[y1, x1, c]
                    out[i, j, c] = (1.0 - fy) * top + fy * bot
        return out
else:  # pragma: no cover - exercised via PHOTOQC_NUMBA=0 runs
    _lbp_codes_jit = None
    _resize_bilinear_jit = None


# --------------------------------------------------------------------------
# dispatchers
# --------------------------------------------------------------------------

def lbp_code_image(gray: np.ndarray, points: int = 24, radius: int = 8,
                   impl: str | None = None) -> np.ndarray:
    """Uniform rotation-invariant LBP code (0..points+1) per interior pixel."""
    gray = np.ascontiguousarray(gray, dtype=np.float64)
    dy, dx = circle_offsets(points, radius)
    use_jit = USE_NUMBA if impl is None else impl == "numba"
    if use_jit and _lbp_codes_jit is not None:
        return _lbp_codes_jit(gray, dy, dx, radius)
    return _lbp_codes_numpy(gray, dy, dx, radius)


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int,
                    impl: str | None = None) -> np.ndarray:
    """Bilinear resample of an (h, w[, c]) float array to the given size.

    2-D inputs are treated as single-channel planes and returned as 2-D.
    """
    img = np.ascontiguousarray(img, dtype=np.float64)
    planar = img.ndim == 2
    if planar:
        img = img[:, :, np.newaxis]
    use_jit = USE_NUMBA if impl is None else impl == "numba"
    if use_jit and _resize_bilinear_jit is not None:
        out = _resize_bilinear_jit(img, out_h, out_w)
    else:
        out = _resize_bilinear_numpy(img, out_h, out_w)
    return out[:, :, 0] if planar else out
