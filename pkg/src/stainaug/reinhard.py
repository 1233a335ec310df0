"""Reinhard color transfer in Ruderman's l-alpha-beta space.

The RGB->LMS matrix is applied to [0, 1] RGB with no gamma linearization and
the log is base 10, as in the original color-transfer construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import EmptyMask
from .imagecore import RgbImage, TissueMask, round_half_away

EPS_LMS = 1e-6
EPS_STD = 1e-6

RGB2LMS = np.array([
    [0.3811, 0.5783, 0.0402],
    [0.1967, 0.7244, 0.0782],
    [0.0241, 0.1288, 0.8444],
])
LMS2RGB = np.linalg.inv(RGB2LMS)

LOGLMS2LAB = np.diag([1 / np.sqrt(3), 1 / np.sqrt(6), 1 / np.sqrt(2)]) @ np.array([
    [1.0, 1.0, 1.0],
    [1.0, 1.0, -2.0],
    [1.0, -1.0, 0.0],
])
LAB2LOGLMS = np.linalg.inv(LOGLMS2LAB)


def _apply(matrix, field):
    # explicit per-channel sums: bit-identical regardless of BLAS threading
    return sum(field[..., j, None] * matrix[:, j] for j in range(3))


@dataclass(frozen=True)
class ReinhardStats:
    """Per-channel mean and population standard deviation in l-alpha-beta."""

    mean: tuple
    std: tuple

    def __post_init__(self):
        mean = tuple(float(x) for x in np.asarray(self.mean, dtype=np.float64).ravel())
        std = tuple(float(x) for x in np.asarray(self.std, dtype=np.float64).ravel())
        if len(mean) != 3 or len(std) != 3:
            raise ValueError("ReinhardStats needs 3 means and 3 stds")
        if not all(np.isfinite(mean)):
            raise ValueError("ReinhardStats mean must be finite")
        if not all(np.isfinite(std)) or min(std) < 0:
            raise ValueError("ReinhardStats std must be finite and >= 0")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    def to_dict(self):
        return {"mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_dict(cls, data):
        return cls(mean=data["mean"], std=data["std"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def rgb_to_lalphabeta(image) -> np.ndarray:
    """Map RGB pixels to an (h, w, 3) float field of l, alpha, beta values.

    Accepts an ``RgbImage`` or any array whose last axis holds 0-255 RGB.
    """
    pixels = image.pixels if isinstance(image, RgbImage) else np.asarray(image)
    rgb = pixels.astype(np.float64) / 255.0
    lms = np.maximum(_apply(RGB2LMS, rgb), EPS_LMS)
    return _apply(LOGLMS2LAB, np.log10(lms))


def lalphabeta_to_rgb(field) -> RgbImage:
    """Inverse of :func:`rgb_to_lalphabeta`; out-of-gamut values clamp to [0, 255]."""
    field = np.asarray(field, dtype=np.float64)
    lms = np.power(10.0, _apply(LAB2LOGLMS, field))
    rgb = np.clip(_apply(LMS2RGB, lms), 0.0, 1.0)
    return RgbImage(round_half_away(rgb * 255.0).astype(np.uint8))


def _stats_of(lab, mask):
    if mask is None:
        samples = lab.reshape(-1, 3)
    else:
        mask.check_matches(lab.shape)
        if not mask.bits.any():
            raise EmptyMask("tissue mask selects no pixels")
        samples = lab[mask.bits]
    mean = samples.mean(axis=0)
    std = np.sqrt(((samples - mean) ** 2).mean(axis=0))
    return mean, std


def fit_reinhard_stats(image: RgbImage, mask: TissueMask | None = None) -> ReinhardStats:
    """Mean and population std of each l-alpha-beta channel over the masked pixels.

    Raises:
        EmptyMask: ``mask`` is given and selects no pixels.
    """
    mean, std = _stats_of(rgb_to_lalphabeta(image), mask)
    return ReinhardStats(mean, std)


def reinhard_transfer(image: RgbImage, target: ReinhardStats, mask: TissueMask | None = None,
                      eps_std=EPS_STD) -> RgbImage:
    """Shift and scale every pixel so the image statistics match ``target``.

    The mask restricts which pixels contribute to the source statistics; all
    pixels are mapped. A source channel with zero spread is scaled by
    ``target.std / eps_std``, which only matters for non-constant inputs.
    """
    lab = rgb_to_lalphabeta(image)
    src_mean, src_std = _stats_of(lab, mask)
    scale = np.asarray(target.std) / np.maximum(src_std, eps_std)
    out = (lab - src_mean) * scale + np.asarray(target.mean)
    return lalphabeta_to_rgb(out)
