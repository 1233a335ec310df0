import math

import numpy as np
import pytest
import tifffile
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from stainaug.errors import CorruptFile, UnsupportedFormat
from stainaug.imagecore import (
    OdImage,
    RgbImage,
    intensity_to_od,
    load_image,
    od_to_rgb,
    rgb_to_od,
    round_half_away,
    save_image,
    tissue_mask,
)

from conftest import random_image

rgb_arrays = arrays(np.uint8, st.tuples(st.integers(1, 6), st.integers(1, 6), st.just(3)))


def test_rgb_image_invariants():
    with pytest.raises(ValueError):
        RgbImage(np.zeros((0, 3, 3), np.uint8))
    with pytest.raises(ValueError):
        RgbImage(np.zeros((2, 2), np.uint8))
    with pytest.raises(ValueError):
        RgbImage(np.full((1, 1, 3), 256))
    img = RgbImage(np.zeros((2, 3, 3), np.uint8))
    assert (img.width, img.height) == (3, 2)
    with pytest.raises(ValueError):
        img.pixels[0, 0, 0] = 1


def test_od_image_rejects_negative_and_nan():
    with pytest.raises(ValueError):
        OdImage(np.full((1, 1, 3), -0.1))
    with pytest.raises(ValueError):
        OdImage(np.full((1, 1, 3), np.nan))


def test_load_single_white_pixel(tmp_path):
    path = tmp_path / "white.png"
    Image.fromarray(np.full((1, 1, 3), 255, np.uint8)).save(path)
    img = load_image(path)
    assert img.pixels.shape == (1, 1, 3)
    assert img.pixels.tolist() == [[[255, 255, 255]]]


def test_save_load_roundtrip(tmp_path, rng):
    img = random_image(rng, 2, 2)
    save_image(img, tmp_path / "a.png")
    assert load_image(tmp_path / "a.png") == img


@settings(max_examples=25, deadline=None)
@given(rgb_arrays)
def test_save_load_roundtrip_property(tmp_path_factory, px):
    path = tmp_path_factory.mktemp("rt") / "x.png"
    img = RgbImage(px)
    save_image(img, path)
    assert load_image(path) == img


def test_alpha_dropped(tmp_path, rng):
    px = rng.integers(0, 256, size=(3, 4, 4), dtype=np.uint8)
    Image.fromarray(px, mode="RGBA").save(tmp_path / "a.png")
    assert np.array_equal(load_image(tmp_path / "a.png").pixels, px[..., :3])


@pytest.mark.parametrize("compression", [None, "tiff_deflate"])
def test_tiff_8bit(tmp_path, rng, compression):
    px = rng.integers(0, 256, size=(5, 4, 3), dtype=np.uint8)
    Image.fromarray(px).save(tmp_path / "a.tif", compression=compression)
    assert np.array_equal(load_image(tmp_path / "a.tif").pixels, px)


def test_16bit_tiff_rejected(tmp_path):
    tifffile.imwrite(tmp_path / "c16.tif", np.zeros((4, 4, 3), np.uint16), photometric="rgb")
    with pytest.raises(UnsupportedFormat):
        load_image(tmp_path / "c16.tif")


def test_16bit_png_rejected(tmp_path):
    Image.fromarray(np.zeros((4, 4), np.uint16)).save(tmp_path / "g16.png")
    with pytest.raises(UnsupportedFormat):
        load_image(tmp_path / "g16.png")


def test_grayscale_rejected(tmp_path):
    Image.fromarray(np.zeros((4, 4), np.uint8)).save(tmp_path / "g.png")
    with pytest.raises(UnsupportedFormat):
        load_image(tmp_path / "g.png")


def test_missing_and_corrupt(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_image(tmp_path / "nope.png")
    (tmp_path / "bad.png").write_bytes(b"\x89PNG\r\n\x1a\n" + b"\x00" * 40)
    with pytest.raises(CorruptFile):
        load_image(tmp_path / "bad.png")
    (tmp_path / "junk.png").write_bytes(b"not an image at all")
    with pytest.raises(CorruptFile):
        load_image(tmp_path / "junk.png")


def test_save_to_missing_directory(tmp_path, rng):
    with pytest.raises(OSError):
        save_image(random_image(rng), tmp_path / "missing" / "a.png")


def test_od_values():
    assert intensity_to_od(255.0) == 0.0
    assert intensity_to_od(25.5) == pytest.approx(1.0, abs=1e-12)
    # v=0 is floored to eps=1: -log10(1/255)
    assert intensity_to_od(0.0, eps=1.0) == pytest.approx(2.406540180433955, abs=1e-12)
    img = RgbImage(np.array([[[255, 0, 26]]], np.uint8))
    od = rgb_to_od(img).values[0, 0]
    assert od[0] == 0.0
    assert od[1] == pytest.approx(-math.log10(1 / 255))
    assert od[2] == pytest.approx(-math.log10(26 / 255))


def test_od_requires_positive_params():
    with pytest.raises(ValueError):
        intensity_to_od(1.0, i0=0)
    with pytest.raises(ValueError):
        intensity_to_od(1.0, eps=0)


def test_od_to_rgb_values():
    assert od_to_rgb(np.zeros((1, 1, 3))).pixels.tolist() == [[[255, 255, 255]]]
    # 255 * 10**-1 = 25.5 rounds half away from zero
    assert od_to_rgb(np.ones((1, 1, 3))).pixels[0, 0, 0] == 26


def test_round_half_away():
    assert round_half_away([0.5, 1.5, 2.5, -0.5, -2.5, 2.4]).tolist() == [1, 2, 3, -1, -3, 2]


def test_full_ramp_roundtrip():
    ramp = RgbImage(np.repeat(np.arange(256, dtype=np.uint8), 3).reshape(1, 256, 3))
    back = od_to_rgb(rgb_to_od(ramp, eps=0.5))
    diff = np.abs(back.pixels.astype(int) - ramp.pixels.astype(int))
    assert diff[:, 1:].max() <= 1


@settings(max_examples=50, deadline=None)
@given(rgb_arrays)
def test_od_roundtrip_property(px):
    img = RgbImage(px)
    back = od_to_rgb(rgb_to_od(img)).pixels.astype(int)
    ok = px >= 1
    assert np.all(np.abs(back - px.astype(int))[ok] <= 1)


@settings(max_examples=50, deadline=None)
@given(rgb_arrays)
def test_od_idempotent_property(px):
    od1 = rgb_to_od(RgbImage(px))
    od2 = rgb_to_od(od_to_rgb(od1))
    assert np.allclose(od1.values, od2.values, rtol=0, atol=1e-9)


def test_tissue_mask_examples():
    assert not tissue_mask(RgbImage(np.full((3, 3, 3), 255, np.uint8))).bits.any()
    assert tissue_mask(RgbImage(np.zeros((3, 3, 3), np.uint8))).bits.all()
    px = np.full((2, 4, 3), 255, np.uint8)
    px[:, 2:] = (100, 50, 150)
    # mean OD of (100, 50, 150), computed channel by channel
    mean_od = sum(-math.log10(v / 255) for v in (100, 50, 150)) / 3
    assert mean_od == pytest.approx(0.4482, abs=1e-4) and mean_od > 0.15
    mask = tissue_mask(RgbImage(px)).bits
    assert mask.tolist() == [[False, False, True, True]] * 2


def test_tissue_mask_threshold_validation(rng):
    with pytest.raises(ValueError):
        tissue_mask(random_image(rng), -0.1)


@settings(max_examples=40, deadline=None)
@given(rgb_arrays, st.floats(0, 3), st.floats(0, 3))
def test_tissue_mask_monotone(px, t1, t2):
    lo, hi = sorted((t1, t2))
    img = RgbImage(px)
    a, b = tissue_mask(img, lo).bits, tissue_mask(img, hi).bits
    assert not np.any(b & ~a)
