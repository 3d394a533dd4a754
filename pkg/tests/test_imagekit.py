"""Decoding, resizing, grayscale, cropping, and grid partitioning."""

import io

import numpy as np
import pytest
from PIL import Image

from photoqc import imagekit
from photoqc.errors import (CorruptStream, DegenerateCrop, ImageTooSmall,
                            UnsupportedFormat)
from photoqc.imagekit import GrayImage, RasterImage


def png_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(arr.astype(np.uint8)).save(buf, format="PNG")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# decode_image
# ---------------------------------------------------------------------------


def test_decode_white_png():
    img = imagekit.decode_image(png_bytes(np.full((2, 2, 3), 255)))
    assert (img.height, img.width) == (2, 2)
    assert (img.data == 255).all()


def test_decode_jpeg_round_trip_close():
    src = np.full((2, 2, 3), 255, dtype=np.uint8)
    buf = io.BytesIO()
    Image.fromarray(src).save(buf, format="JPEG", quality=100)
    img = imagekit.decode_image(buf.getvalue())
    assert (img.height, img.width) == (2, 2)
    assert np.abs(img.data.astype(int) - 255).max() <= 3


def test_decode_corrupt_bytes():
    with pytest.raises(CorruptStream):
        imagekit.decode_image(b"\x89PNG\r\n\x1a\nnot really a png")
    with pytest.raises(CorruptStream):
        imagekit.decode_image(bytes(range(16)))


def test_decode_rejects_other_formats():
    buf = io.BytesIO()
    Image.fromarray(np.zeros((4, 4, 3), dtype=np.uint8)).save(buf, format="GIF")
    with pytest.raises(UnsupportedFormat):
        imagekit.decode_image(buf.getvalue())


def test_decode_drops_alpha_and_expands_gray():
    rgba = np.zeros((3, 3, 4), dtype=np.uint8)
    rgba[..., 0] = 200
    rgba[..., 3] = 128
    img = imagekit.decode_image(png_bytes(rgba))
    assert img.data.shape == (3, 3, 3)
    assert (img.data[..., 0] == 200).all()

    gray = (np.arange(9, dtype=np.uint8) * 20).reshape(3, 3)
    img = imagekit.decode_image(png_bytes(gray))
    assert img.data.shape == (3, 3, 3)
    assert (img.data[..., 0] == img.data[..., 2]).all()


# ---------------------------------------------------------------------------
# resize_max_side
# ---------------------------------------------------------------------------


def make_raster(h, w, value=128):
    return RasterImage(np.full((h, w, 3), value, dtype=np.uint8))


def test_resize_halves_long_side():
    out = imagekit.resize_max_side(make_raster(512, 1024), 512)
    assert (out.height, out.width) == (256, 512)


def test_resize_boundary_noop():
    img = make_raster(512, 512)
    assert imagekit.resize_max_side(img, 512) is img


def test_resize_never_upscales():
    img = make_raster(50, 100)
    assert imagekit.resize_max_side(img, 512) is img


def test_resize_rounds_short_side_to_nearest():
    # 1000x333 -> scale 0.512 -> short side 170.496 -> 170
    out = imagekit.resize_max_side(RasterImage(
        np.zeros((333, 1000, 3), dtype=np.uint8)), 512)
    assert (out.height, out.width) == (170, 512)


def test_resize_idempotent():
    rng = np.random.default_rng(3)
    img = RasterImage(rng.integers(0, 256, size=(700, 459, 3), dtype=np.uint8))
    once = imagekit.resize_max_side(img, 512)
    twice = imagekit.resize_max_side(once, 512)
    np.testing.assert_array_equal(once.data, twice.data)


# ---------------------------------------------------------------------------
# to_grayscale
# ---------------------------------------------------------------------------


def test_grayscale_white_black():
    assert (imagekit.to_grayscale(make_raster(2, 2, 255)).data == 255).all()
    assert (imagekit.to_grayscale(make_raster(2, 2, 0)).data == 0).all()


def test_grayscale_pure_red():
    arr = np.zeros((2, 2, 3), dtype=np.uint8)
    arr[..., 0] = 255
    gray = imagekit.to_grayscale(RasterImage(arr))
    np.testing.assert_allclose(gray.data, 76.245, atol=1e-9)


def test_grayscale_range():
    rng = np.random.default_rng(5)
    img = RasterImage(rng.integers(0, 256, size=(20, 20, 3), dtype=np.uint8))
    gray = imagekit.to_grayscale(img)
    assert gray.data.min() >= 0.0 and gray.data.max() <= 255.0


# ---------------------------------------------------------------------------
# center_crop_frac
# ---------------------------------------------------------------------------


def test_crop_30_percent():
    out = imagekit.center_crop_frac(make_raster(100, 100), 0.3)
    assert (out.height, out.width) == (30, 30)


def test_crop_identity():
    img = make_raster(11, 7)
    out = imagekit.center_crop_frac(img, 1.0)
    np.testing.assert_array_equal(out.data, img.data)


def test_crop_rounding_and_top_left_bias():
    arr = np.arange(7 * 7 * 3, dtype=np.uint8).reshape(7, 7, 3)
    out = imagekit.center_crop_frac(RasterImage(arr), 0.6)
    assert (out.height, out.width) == (4, 4)
    np.testing.assert_array_equal(out.data, arr[1:5, 1:5])


def test_crop_gray_input():
    gray = GrayImage(np.arange(100, dtype=np.float64).reshape(10, 10))
    out = imagekit.center_crop_frac(gray, 0.5)
    assert isinstance(out, GrayImage)
    assert out.data.shape == (5, 5)


def test_crop_degenerate():
    with pytest.raises(DegenerateCrop):
        imagekit.center_crop_frac(make_raster(3, 3), 0.1)


# ---------------------------------------------------------------------------
# grid_partition
# ---------------------------------------------------------------------------


def gray_from(arr):
    return GrayImage(np.asarray(arr, dtype=np.float64))


def test_grid_even():
    blocks = imagekit.grid_partition(gray_from(np.zeros((100, 100))))
    assert len(blocks) == 25
    assert all(b.data.shape == (20, 20) for b in blocks)


def test_grid_minimal():
    blocks = imagekit.grid_partition(gray_from(np.arange(25).reshape(5, 5)))
    assert len(blocks) == 25
    assert [int(b.data[0, 0]) for b in blocks] == list(range(25))


def test_grid_uneven_column_widths():
    blocks = imagekit.grid_partition(gray_from(np.zeros((101, 103))))
    widths = [b.data.shape[1] for b in blocks[:5]]
    heights = [blocks[5 * i].data.shape[0] for i in range(5)]
    assert widths == [20, 21, 20, 21, 21]
    assert heights == [20, 20, 20, 20, 21]


def test_grid_tiles_exactly():
    rng = np.random.default_rng(11)
    arr = rng.uniform(0, 255, size=(37, 53))
    blocks = imagekit.grid_partition(gray_from(arr))
    total = sum(b.data.size for b in blocks)
    assert total == arr.size
    merged = np.sort(np.concatenate([b.data.ravel() for b in blocks]))
    np.testing.assert_array_equal(merged, np.sort(arr.ravel()))


def test_grid_too_small():
    with pytest.raises(ImageTooSmall):
        imagekit.grid_partition(gray_from(np.zeros((4, 10))))
