"""Sparse stain separation and structure-preserving normalization.

Optical density is factorized as ``V ~ W H`` with a 3x2 non-negative stain
matrix ``W`` (unit columns) and non-negative, L1-penalized concentrations
``H``, minimizing ``sum_pixels ||v - W h||^2 + lam * ||h||_1``. The fit
alternates an exact per-pixel lasso (coordinate descent over the two
concentrations) with a backtracked projected-gradient step on ``W``.

Reductions over pixels are written as elementwise products followed by
``np.sum`` rather than matrix products, so results do not depend on BLAS
threading.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DegenerateInput, InsufficientTissue
from .imagecore import (
    OD_EPS,
    OD_THRESHOLD,
    OdImage,
    RgbImage,
    TissueMask,
    od_to_rgb,
    rgb_to_od,
    tissue_mask,
)

LAMBDA = 0.1
CONC_LAMBDA = 0.01
ITERS = 50
SEED = 0
MAX_PIXELS = 20_000
MIN_TISSUE = 100
RANK_TOL = 1e-8
CD_TOL = 1e-8
CD_MAX_SWEEPS = 100_000
SCALE_PERCENTILE = 99.0
SCALE_FLOOR = 1e-6
INIT_PERCENTILE = 1.0


def _order_columns(w):
    """Column order: larger blue OD first (hematoxylin), ties by smaller red OD."""
    if w[2, 0] < w[2, 1] or (w[2, 0] == w[2, 1] and w[0, 0] > w[0, 1]):
        return [1, 0]
    return [0, 1]


@dataclass(frozen=True, eq=False)
class StainMatrix:
    """3x2 stain color matrix; column 0 is hematoxylin-like, column 1 eosin-like."""

    w: np.ndarray

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64)
        if w.shape != (3, 2):
            raise ValueError(f"stain matrix must be 3x2, got {w.shape}")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("stain matrix entries must be finite and >= 0")
        norms = np.sqrt((w ** 2).sum(axis=0))
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError(f"stain columns must have unit norm, got {norms}")
        if _order_columns(w) != [0, 1]:
            raise ValueError("stain columns out of order: hematoxylin (larger blue OD) comes first")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @classmethod
    def from_columns(cls, w) -> StainMatrix:
        """Clip, renormalize and reorder an arbitrary non-degenerate 3x2 matrix."""
        w = np.maximum(np.asarray(w, dtype=np.float64), 0.0)
        w = w / np.sqrt((w ** 2).sum(axis=0))
        return cls(w[:, _order_columns(w)])

    def __eq__(self, other):
        if not isinstance(other, StainMatrix):
            return NotImplemented
        return np.array_equal(self.w, other.w)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ConcentrationMap:
    """Per-pixel stain concentrations, array of shape (height, width, 2)."""

    h: np.ndarray

    def __post_init__(self):
        h = np.array(self.h, dtype=np.float64)
        if h.ndim != 3 or h.shape[2] != 2:
            raise ValueError(f"ConcentrationMap needs shape (h, w, 2), got {h.shape}")
        if not np.all(np.isfinite(h)) or np.any(h < 0):
            raise ValueError("concentrations must be finite and >= 0")
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    @property
    def height(self) -> int:
        return self.h.shape[0]

    @property
    def width(self) -> int:
        return self.h.shape[1]


@dataclass(frozen=True, eq=False)
class StainModel:
    """Stain matrix plus a robust-maximum concentration per stain."""

    stains: StainMatrix
    scale: tuple

    def __post_init__(self):
        if not isinstance(self.stains, StainMatrix):
            object.__setattr__(self, "stains", StainMatrix(self.stains))
        scale = tuple(float(s) for s in np.asarray(self.scale, dtype=np.float64).ravel())
        if len(scale) != 2 or not all(np.isfinite(scale)) or min(scale) <= 0:
            raise ValueError(f"scale must be two positive reals, got {scale}")
        object.__setattr__(self, "scale", scale)

    def __eq__(self, other):
        if not isinstance(other, StainModel):
            return NotImplemented
        return self.stains == other.stains and self.scale == other.scale

    __hash__ = None

    def to_dict(self):
        return {"stains": self.stains.w.tolist(), "scale": list(self.scale)}

    @classmethod
    def from_dict(cls, data):
        return cls(StainMatrix(data["stains"]), data["scale"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _dot_cols(a, b):
    """Column-wise inner products a[:, i] . b[:, k] as a small matrix."""
    return np.array([[np.sum(a[:, i] * b[:, k]) for k in range(b.shape[1])]
                     for i in range(a.shape[1])])


def _project(v, w):
    # W^T v for every pixel: (n, 3) x (3, 2) -> (n, 2)
    return np.stack([v[:, 0] * w[0, k] + v[:, 1] * w[1, k] + v[:, 2] * w[2, k]
                     for k in range(2)], axis=1)


def _reconstruct(h, w):
    # W h for every pixel: (n, 2) -> (n, 3)
    return np.stack([h[:, 0] * w[c, 0] + h[:, 1] * w[c, 1] for c in range(3)], axis=1)


def lasso_cd(v, w, lam, h0=None, tol=CD_TOL, max_sweeps=CD_MAX_SWEEPS):
    """Non-negative lasso ``argmin_{h>=0} ||v - W h||^2 + lam ||h||_1`` per pixel.

    Cyclic coordinate descent with the closed-form update
    ``h_k = max(0, (w_k.v - (w_k.w_j) h_j - lam/2) / ||w_k||^2)``. Each pixel
    iterates until neither coordinate moves by more than ``tol``. Starting from
    ``h0`` never increases the objective, which the dictionary fit relies on.

    Args:
        v: (n, 3) optical densities.
        w: (3, 2) stain matrix.
        lam: L1 weight, >= 0.
        h0: optional (n, 2) warm start.

    Returns:
        (n, 2) array of concentrations.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    v = np.asarray(v, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n = v.shape[0]
    a = _project(v, w) - lam / 2.0
    gram = _dot_cols(w, w)
    d0, d1, g = gram[0, 0], gram[1, 1], gram[0, 1]
    h = np.zeros((n, 2)) if h0 is None else np.array(h0, dtype=np.float64)
    active = np.arange(n)
    for _ in range(max_sweeps):
        if active.size == 0:
            break
        ha = h[active]
        old = ha.copy()
        aa = a[active]
        ha[:, 0] = np.maximum(0.0, (aa[:, 0] - g * ha[:, 1]) / d0)
        ha[:, 1] = np.maximum(0.0, (aa[:, 1] - g * ha[:, 0]) / d1)
        h[active] = ha
        moved = np.abs(ha - old).max(axis=1) > tol
        active = active[moved]
    return h


def snmf_objective(v, w, h, lam) -> float:
    r = v - _reconstruct(h, w)
    return float(np.sum(r * r) + lam * np.sum(h))


class SnmfResult(NamedTuple):
    w: np.ndarray
    h: np.ndarray
    objective: list


def _initial_stains(v):
    """Two extreme plane-angle directions of the OD cloud."""
    gram = _dot_cols(v, v)
    _, vecs = np.linalg.eigh(gram)
    basis = vecs[:, [2, 1]]
    for k in range(2):
        if basis[np.argmax(np.abs(basis[:, k])), k] < 0:
            basis[:, k] = -basis[:, k]
    coords = _project(v, basis)
    phi = np.arctan2(coords[:, 1], coords[:, 0])
    lo, hi = np.percentile(phi, [INIT_PERCENTILE, 100.0 - INIT_PERCENTILE])
    w = np.stack([np.cos(t) * basis[:, 0] + np.sin(t) * basis[:, 1] for t in (lo, hi)], axis=1)
    w = np.maximum(w, 0.0)
    norms = np.sqrt((w ** 2).sum(axis=0))
    if np.any(norms < 1e-12):
        raise DegenerateInput("could not initialize two non-negative stain directions")
    w = w / norms
    return w[:, _order_columns(w)]


def _dictionary_step(v, w, h, lam, current):
    """One projected-gradient step on W, halving the step until the objective drops."""
    r = v - _reconstruct(h, w)
    grad = -2.0 * _dot_cols(r, h)
    hth = _dot_cols(h, h)
    lipschitz = 2.0 * np.linalg.eigvalsh(hth)[-1]
    if lipschitz <= 0:
        return w, current
    step = 1.0 / lipschitz
    for _ in range(30):
        cand = np.maximum(w - step * grad, 0.0)
        norms = np.sqrt((cand ** 2).sum(axis=0))
        if np.all(norms > 1e-12):
            cand = cand / norms
            obj = snmf_objective(v, cand, h, lam)
            if obj <= current:
                return cand, obj
        step *= 0.5
    return w, current


def sparse_nmf(v, lam=LAMBDA, iters=ITERS, w0=None) -> SnmfResult:
    """Alternating sparse NMF of (n, 3) optical densities into two stains.

    Returns the stain matrix (columns in hematoxylin-first order), the
    concentrations, and the objective recorded after every half-step. The
    objective sequence is non-increasing.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    v = np.asarray(v, dtype=np.float64)
    w = _initial_stains(v) if w0 is None else np.asarray(w0, dtype=np.float64)
    h = np.zeros((v.shape[0], 2))
    history = [snmf_objective(v, w, h, lam)]
    for _ in range(iters):
        h = lasso_cd(v, w, lam, h0=h)
        history.append(snmf_objective(v, w, h, lam))
        w, obj = _dictionary_step(v, w, h, lam, history[-1])
        history.append(obj)
    order = _order_columns(w)
    return SnmfResult(w[:, order], h[:, order], history)


def _tissue_samples(od: OdImage, mask: TissueMask, seed):
    mask.check_matches(od.values.shape)
    n_tissue = mask.count
    if n_tissue < MIN_TISSUE:
        raise InsufficientTissue(f"{n_tissue} tissue pixels, need at least {MIN_TISSUE}")
    v = od.values[mask.bits]
    if v.shape[0] > MAX_PIXELS:
        rng = np.random.default_rng(seed)
        v = v[np.sort(rng.choice(v.shape[0], MAX_PIXELS, replace=False))]
    sv = np.linalg.svd(v, compute_uv=False)
    if sv[0] == 0 or sv[1] / sv[0] < RANK_TOL:
        raise DegenerateInput("tissue optical density has rank < 2")
    return v


def estimate_stain_matrix(od: OdImage, mask: TissueMask, lam=LAMBDA, iters=ITERS,
                          seed=SEED) -> StainMatrix:
    """Fit a two-stain matrix to the tissue pixels of ``od``.

    At most 20,000 tissue pixels, drawn uniformly with ``seed``, enter the
    factorization.

    Raises:
        InsufficientTissue: fewer than 100 tissue pixels.
        DegenerateInput: tissue OD has rank < 2.
    """
    v = _tissue_samples(od, mask, seed)
    return StainMatrix.from_columns(sparse_nmf(v, lam, iters).w)


def compute_concentrations(od: OdImage, stains: StainMatrix, lam=LAMBDA) -> ConcentrationMap:
    """Sparse code every pixel of ``od`` against ``stains``."""
    h = lasso_cd(od.flat(), stains.w, lam)
    return ConcentrationMap(h.reshape(od.height, od.width, 2))


def _fit(image, lam, iters, seed, od_threshold, conc_lam, od_eps):
    od = rgb_to_od(image, eps=od_eps)
    mask = tissue_mask(image, od_threshold)
    stains = estimate_stain_matrix(od, mask, lam, iters, seed)
    conc = compute_concentrations(od, stains, conc_lam)
    tissue_h = conc.h[mask.bits]
    scale = np.maximum(np.percentile(tissue_h, SCALE_PERCENTILE, axis=0), SCALE_FLOOR)
    return StainModel(stains, scale), conc


def fit_stain_model(image: RgbImage, lam=LAMBDA, iters=ITERS, seed=SEED, *,
                    conc_lam=CONC_LAMBDA, od_threshold=OD_THRESHOLD,
                    od_eps=OD_EPS) -> StainModel:
    """Stain matrix of ``image`` plus the 99th-percentile tissue concentration per stain.

    ``lam`` weights sparsity while fitting the stain matrix; ``conc_lam`` is the
    lighter penalty used when coding pixels against it, so that rendered
    concentrations are not visibly shrunk.
    """
    return _fit(image, lam, iters, seed, od_threshold, conc_lam, od_eps)[0]


def vahadane_normalize(image: RgbImage, target: StainModel, lam=LAMBDA, iters=ITERS,
                       seed=SEED, *, conc_lam=CONC_LAMBDA,
                       od_threshold=OD_THRESHOLD, od_eps=OD_EPS) -> RgbImage:
    """Re-render ``image`` with the stain colors and intensities of ``target``.

    Source concentrations are rescaled per stain by ``target.scale /
    source.scale`` and recombined with the target stain matrix. Every pixel
    is transformed; pixels with zero OD stay white.
    """
    source, conc = _fit(image, lam, iters, seed, od_threshold, conc_lam, od_eps)
    ratio = np.asarray(target.scale) / np.asarray(source.scale)
    h = conc.h.reshape(-1, 2) * ratio
    od = _reconstruct(h, target.stains.w)
    return od_to_rgb(od.reshape(image.height, image.width, 3))
