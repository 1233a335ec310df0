"""Synthetic two-stain tiles with known stain matrix and concentrations.

Used by the test-suite and the demo scripts; handy whenever ground truth
for a stain separation is needed.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .imagecore import OdImage, RgbImage, od_to_rgb

# Ruifrok & Johnston H&E optical densities
HEMATOXYLIN = np.array([0.65, 0.70, 0.29])
EOSIN = np.array([0.07, 0.99, 0.11])


def unit_columns(w):
    w = np.asarray(w, dtype=np.float64)
    return w / np.linalg.norm(w, axis=0)


W_HE = unit_columns(np.stack([HEMATOXYLIN, EOSIN], axis=1))


class SyntheticTile(NamedTuple):
    image: RgbImage
    od: OdImage
    stains: np.ndarray
    concentrations: np.ndarray


def two_stain_concentrations(height, width, rng, floor=0.05, peak=(0.3, 1.2), minor=0.005):
    """Mostly single-stain pixels: one dominant stain, a small amount of the other.

    Every concentration is at least ``floor``.
    """
    n = height * width
    dominant = rng.integers(0, 2, size=n)
    strong = rng.uniform(*peak, size=n)
    weak = floor + rng.exponential(minor, size=n)
    h = np.empty((n, 2))
    h[np.arange(n), dominant] = strong
    h[np.arange(n), 1 - dominant] = weak
    return h.reshape(height, width, 2)


def perturbed_stains(rng, spread=0.15, base=W_HE):
    """Random H&E-like stain matrix: each entry of ``base`` jittered multiplicatively."""
    w = base * rng.uniform(1 - spread, 1 + spread, size=base.shape)
    return unit_columns(w)


def render(stains, concentrations) -> SyntheticTile:
    h = np.asarray(concentrations, dtype=np.float64)
    od = np.einsum("ck,yxk->yxc", np.asarray(stains, dtype=np.float64), h)
    return SyntheticTile(od_to_rgb(od), OdImage(od), np.asarray(stains), h)


def two_stain_tile(size=128, seed=0, stains=None, **kwargs) -> SyntheticTile:
    """Render a ``size`` x ``size`` tile ``od = stains @ h`` through 8-bit quantization."""
    rng = np.random.default_rng(seed)
    w = W_HE if stains is None else unit_columns(stains)
    h = two_stain_concentrations(size, size, rng, **kwargs)
    return render(w, h)


def white_tile(size=64) -> RgbImage:
    return RgbImage(np.full((size, size, 3), 255, np.uint8))


def angle_deg(a, b) -> float:
    """Angle between two vectors in degrees."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c = np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b))
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))
