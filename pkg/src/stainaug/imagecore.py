"""Image containers, tile I/O, optical density and tissue masking.

Images are held as numpy arrays in (height, width, channel) order, which is
the row-major pixel layout every other module assumes. All containers are
frozen and their arrays are made read-only on construction.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import CorruptFile, UnsupportedFormat

I0 = 255.0
OD_EPS = 1.0
OD_THRESHOLD = 0.15

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def _frozen(array, dtype):
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class RgbImage:
    """8-bit RGB tile.

    Attributes:
        pixels: uint8 array of shape (height, width, 3).
    """

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"RgbImage needs shape (h, w, 3), got {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"RgbImage must have at least one pixel, got {px.shape[:2]}")
        if px.dtype != np.uint8:
            if not np.issubdtype(px.dtype, np.integer):
                raise ValueError(f"RgbImage pixels must be integers, got {px.dtype}")
            if px.min() < 0 or px.max() > 255:
                raise ValueError("RgbImage pixel values must lie in [0, 255]")
        object.__setattr__(self, "pixels", _frozen(px, np.uint8))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def __eq__(self, other):
        if not isinstance(other, RgbImage):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class OdImage:
    """Per-pixel optical density, float64 array of shape (height, width, 3)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] != 3 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"OdImage needs shape (h, w, 3), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("OdImage values must be finite")
        if np.any(v < 0):
            raise ValueError("OdImage values must be non-negative")
        object.__setattr__(self, "values", _frozen(v, np.float64))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def flat(self) -> np.ndarray:
        """(n_pixels, 3) view in row-major pixel order."""
        return self.values.reshape(-1, 3)


@dataclass(frozen=True, eq=False)
class TissueMask:
    """Boolean array of shape (height, width); True marks tissue."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim != 2:
            raise ValueError(f"TissueMask needs shape (h, w), got {b.shape}")
        object.__setattr__(self, "bits", _frozen(b, bool))

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    def check_matches(self, shape) -> None:
        if self.bits.shape != tuple(shape[:2]):
            raise ValueError(
                f"mask shape {self.bits.shape} does not match image shape {tuple(shape[:2])}"
            )


def round_half_away(x):
    """Round to the nearest integer, ties away from zero (``np.round`` rounds ties to even)."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _png_bit_depth(path):
    with open(path, "rb") as fh:
        head = fh.read(26)
    if len(head) < 26 or head[:8] != _PNG_MAGIC:
        return None
    return head[24]


def load_image(path) -> RgbImage:
    """Read an 8-bit PNG or TIFF tile.

    Alpha channels are dropped. Grayscale, palette and high bit depth files
    are rejected rather than converted, so that pixel values are never
    silently altered.

    Raises:
        FileNotFoundError: ``path`` does not exist.
        UnsupportedFormat: not 8 bits per sample or fewer than 3 channels.
        CorruptFile: the file cannot be decoded.
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise FileNotFoundError(path)
    try:
        with Image.open(path) as im:
            fmt = im.format
            if fmt not in ("PNG", "TIFF"):
                raise UnsupportedFormat(f"{path}: expected PNG or TIFF, got {fmt}")
            # Pillow narrows 16-bit RGB to 8 bits on load, so check the header
            if fmt == "TIFF":
                bits = im.tag_v2.get(258, (8,))
                bits = bits if isinstance(bits, tuple) else (bits,)
                if any(b != 8 for b in bits):
                    raise UnsupportedFormat(f"{path}: {max(bits)}-bit TIFF, need 8-bit")
            elif _png_bit_depth(path) != 8:
                raise UnsupportedFormat(f"{path}: PNG bit depth {_png_bit_depth(path)}, need 8")
            if im.mode not in ("RGB", "RGBA"):
                raise UnsupportedFormat(f"{path}: mode {im.mode}, need RGB or RGBA")
            im.load()
            arr = np.asarray(im)
    except (UnsupportedFormat, FileNotFoundError):
        raise
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise CorruptFile(f"{path}: {exc}") from exc
    return RgbImage(arr[..., :3])


def save_image(image: RgbImage, path) -> None:
    """Write ``image`` as an 8-bit RGB PNG. Raises ``OSError`` on failure."""
    path = os.fspath(path)
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise FileNotFoundError(f"directory does not exist: {parent}")
    Image.fromarray(np.ascontiguousarray(image.pixels), mode="RGB").save(path, format="PNG")


def intensity_to_od(values, i0=I0, eps=OD_EPS):
    """Beer-Lambert optical density of raw intensities (any real array)."""
    if i0 <= 0:
        raise ValueError("i0 must be positive")
    if eps <= 0:
        raise ValueError("eps must be positive")
    v = np.maximum(np.asarray(values, dtype=np.float64), eps)
    return np.maximum(-np.log10(v / i0), 0.0)


def rgb_to_od(image, i0=I0, eps=OD_EPS) -> OdImage:
    """Convert an ``RgbImage`` to optical density, ``-log10(max(v, eps) / i0)`` floored at 0."""
    pixels = image.pixels if isinstance(image, RgbImage) else image
    return OdImage(intensity_to_od(pixels, i0, eps))


def od_to_intensity(od, i0=I0):
    v = round_half_away(i0 * np.power(10.0, -np.asarray(od, dtype=np.float64)))
    return np.clip(v, 0, 255)


def od_to_rgb(od, i0=I0) -> RgbImage:
    """Inverse of :func:`rgb_to_od`: ``round(i0 * 10**-od)`` clamped to [0, 255]."""
    values = od.values if isinstance(od, OdImage) else od
    return RgbImage(od_to_intensity(values, i0).astype(np.uint8))


def mean_od(image: RgbImage) -> np.ndarray:
    return rgb_to_od(image, I0, OD_EPS).values.mean(axis=2)


def tissue_mask(image: RgbImage, od_threshold=OD_THRESHOLD) -> TissueMask:
    """Mark pixels whose mean optical density exceeds ``od_threshold``.

    OD is computed with ``eps = 1`` and ``i0 = 255``. An all-background mask
    is a valid result; callers decide whether that is an error.
    """
    if od_threshold < 0:
        raise ValueError("od_threshold must be >= 0")
    return TissueMask(mean_od(image) > od_threshold)
