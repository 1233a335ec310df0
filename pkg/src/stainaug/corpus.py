"""Corpus-level color statistics and the sampling ranges derived from them.

Every image contributes one Reinhard target (tissue-masked l-alpha-beta mean
and standard deviation) and one stain model. The ranges are the elementwise
min/max of those values over the corpus and can later be widened about their
midpoints. Spreads are kept as standard deviations, not variances.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .errors import NoUsableImages, SchemaError, StainAugError
from .imagecore import OD_EPS, OD_THRESHOLD, load_image, tissue_mask
from .reinhard import ReinhardStats, fit_reinhard_stats
from .vahadane import CONC_LAMBDA, ITERS, LAMBDA, SEED, StainModel, fit_stain_model

SCHEMA_VERSION = 1
SCALE_FLOOR = 1e-6

# field name -> (number of intervals, lower clamp applied by enlarge_ranges)
RANGE_FIELDS = {
    "reinhard_mean": (3, None),
    "reinhard_std": (3, 0.0),
    "stain_entries": (6, 0.0),
    "conc_scale": (2, SCALE_FLOOR),
}


def _intervals(name, value):
    size, _ = RANGE_FIELDS[name]
    arr = np.array(value, dtype=np.float64)
    if arr.shape != (size, 2):
        raise SchemaError(f"ranges.{name}: expected {size} [lo, hi] pairs, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class ParameterRanges:
    """Closed [lo, hi] intervals for every scalar a sampled target needs.

    Each field is an (n, 2) float array; ``stain_entries`` is row-major over
    the 3x2 stain matrix.
    """

    reinhard_mean: np.ndarray
    reinhard_std: np.ndarray
    stain_entries: np.ndarray
    conc_scale: np.ndarray

    def __post_init__(self):
        for name, (_, floor) in RANGE_FIELDS.items():
            arr = _intervals(name, getattr(self, name))
            for i, (lo, hi) in enumerate(arr):
                where = f"ranges.{name}[{i}]"
                if not (np.isfinite(lo) and np.isfinite(hi)):
                    raise SchemaError(f"{where}: bounds must be finite")
                if lo > hi:
                    raise SchemaError(f"{where}: lo {lo!r} > hi {hi!r}")
                if name == "conc_scale" and lo <= 0:
                    raise SchemaError(f"{where}: lo must be > 0, got {lo!r}")
                if floor is not None and lo < floor:
                    raise SchemaError(f"{where}: lo must be >= {floor}, got {lo!r}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __eq__(self, other):
        if not isinstance(other, ParameterRanges):
            return NotImplemented
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in RANGE_FIELDS)

    __hash__ = None

    @classmethod
    def from_samples(cls, reinhard: list, stains: list) -> ParameterRanges:
        """Elementwise min/max over per-image targets."""
        values = {
            "reinhard_mean": np.array([r.mean for r in reinhard]),
            "reinhard_std": np.array([r.std for r in reinhard]),
            "stain_entries": np.array([m.stains.w.ravel() for m in stains]),
            "conc_scale": np.array([m.scale for m in stains]),
        }
        return cls(**{k: np.stack([v.min(axis=0), v.max(axis=0)], axis=1)
                      for k, v in values.items()})

    def contains(self, reinhard: ReinhardStats, model: StainModel) -> bool:
        checks = [
            (self.reinhard_mean, reinhard.mean),
            (self.reinhard_std, reinhard.std),
            (self.stain_entries, model.stains.w.ravel()),
            (self.conc_scale, model.scale),
        ]
        return all(np.all((iv[:, 0] <= np.asarray(x)) & (np.asarray(x) <= iv[:, 1]))
                   for iv, x in checks)

    def to_dict(self):
        return {name: getattr(self, name).tolist() for name in RANGE_FIELDS}

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise SchemaError("ranges: expected an object")
        for name in RANGE_FIELDS:
            if name not in data:
                raise SchemaError(f"ranges.{name}: missing")
        try:
            return cls(**{name: _intervals(name, data[name]) for name in RANGE_FIELDS})
        except (TypeError, ValueError) as exc:
            if isinstance(exc, SchemaError):
                raise
            raise SchemaError(f"ranges: {exc}") from exc


def enlarge_ranges(ranges: ParameterRanges, factor: float) -> ParameterRanges:
    """Scale every interval's half-width by ``factor`` about its midpoint.

    Lower bounds are then clamped to each field's domain: standard
    deviations and stain entries at 0, concentration scales at 1e-6.
    ``factor=1`` is the identity and ``factor=0`` collapses to midpoints.
    """
    if not factor >= 0:
        raise ValueError(f"factor must be >= 0, got {factor}")
    out = {}
    for name, (_, floor) in RANGE_FIELDS.items():
        iv = getattr(ranges, name)
        if factor == 1:
            out[name] = iv.copy()
            continue
        mid = (iv[:, 0] + iv[:, 1]) / 2
        half = (iv[:, 1] - iv[:, 0]) / 2
        lo, hi = mid - factor * half, mid + factor * half
        if floor is not None:
            lo = np.maximum(lo, floor)
            hi = np.maximum(hi, lo)
        out[name] = np.stack([lo, hi], axis=1)
    return ParameterRanges(**out)


@dataclass(frozen=True)
class ImageStats:
    image_id: str
    reinhard: ReinhardStats
    stain: StainModel

    def to_dict(self):
        return {"image": self.image_id, "reinhard": self.reinhard.to_dict(),
                "stain": self.stain.to_dict()}


@dataclass(frozen=True)
class CorpusStats:
    per_image: tuple
    ranges: ParameterRanges
    fitted_at: str
    skipped: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "per_image", tuple(self.per_image))
        object.__setattr__(self, "skipped", tuple(tuple(s) for s in self.skipped))
        if not self.per_image:
            raise SchemaError("per_image: must not be empty")

    def lookup(self, image_id) -> ImageStats:
        for item in self.per_image:
            if item.image_id == image_id:
                return item
        raise KeyError(image_id)

    def to_dict(self):
        return {
            "version": SCHEMA_VERSION,
            "per_image": [p.to_dict() for p in self.per_image],
            "ranges": self.ranges.to_dict(),
            "skipped": [{"image": i, "reason": r} for i, r in self.skipped],
            "fitted_at": self.fitted_at,
        }


def image_id_of(path) -> str:
    return os.path.basename(os.fspath(path))


def fit_image_stats(path, lam=LAMBDA, iters=ITERS, seed=SEED, *, conc_lam=CONC_LAMBDA,
                    od_threshold=OD_THRESHOLD, od_eps=OD_EPS) -> ImageStats:
    image = load_image(path)
    # stain fit first: a blank tile then reports InsufficientTissue, not EmptyMask
    stain = fit_stain_model(image, lam, iters, seed, conc_lam=conc_lam,
                            od_threshold=od_threshold, od_eps=od_eps)
    reinhard = fit_reinhard_stats(image, tissue_mask(image, od_threshold))
    return ImageStats(image_id_of(path), reinhard, stain)


def fit_corpus_stats(paths, lam=LAMBDA, iters=ITERS, seed=SEED, *, conc_lam=CONC_LAMBDA,
                     od_threshold=OD_THRESHOLD, od_eps=OD_EPS, threads=1) -> CorpusStats:
    """Fit every image and take the elementwise min/max as sampling ranges.

    Images without enough tissue, or that fail to load, are recorded in
    ``skipped`` with the reason instead of aborting the fit. Every image uses
    the same ``seed``, so the result does not depend on input order.

    Raises:
        NoUsableImages: every image was skipped.
    """
    paths = list(paths)
    if not paths:
        raise ValueError("need at least one image path")

    def work(path):
        try:
            return fit_image_stats(path, lam, iters, seed, conc_lam=conc_lam,
                                   od_threshold=od_threshold, od_eps=od_eps)
        except (StainAugError, OSError) as exc:
            return (image_id_of(path), f"{type(exc).__name__}: {exc}")

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, paths))
    else:
        results = [work(p) for p in paths]

    fitted = sorted((r for r in results if isinstance(r, ImageStats)), key=lambda r: r.image_id)
    skipped = sorted(r for r in results if not isinstance(r, ImageStats))
    if not fitted:
        raise NoUsableImages(f"all {len(paths)} images were skipped", skipped)
    ranges = ParameterRanges.from_samples([f.reinhard for f in fitted], [f.stain for f in fitted])
    provenance = (f"stainaug {__version__}; lambda={lam}; conc_lambda={conc_lam}; "
                  f"iters={iters}; seed={seed}; od_threshold={od_threshold}; od_eps={od_eps}")
    return CorpusStats(tuple(fitted), ranges, provenance, tuple(skipped))


def corpus_from_dict(data) -> CorpusStats:
    if not isinstance(data, dict):
        raise SchemaError("top level: expected an object")
    for key in ("version", "per_image", "ranges", "fitted_at"):
        if key not in data:
            raise SchemaError(f"{key}: missing")
    if data["version"] != SCHEMA_VERSION:
        raise SchemaError(f"version: unsupported schema version {data['version']!r}")
    if not isinstance(data["per_image"], list):
        raise SchemaError("per_image: expected a list")
    per_image = []
    for i, item in enumerate(data["per_image"]):
        where = f"per_image[{i}]"
        try:
            image_id = item["image"]
            reinhard = item["reinhard"]
            stain = item["stain"]
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"{where}: missing field {exc}") from exc
        try:
            r = ReinhardStats.from_dict(reinhard)
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"{where}.reinhard: {exc}") from exc
        try:
            s = StainModel.from_dict(stain)
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"{where}.stain: {exc}") from exc
        per_image.append(ImageStats(str(image_id), r, s))
    ranges = ParameterRanges.from_dict(data["ranges"])
    skipped = []
    for i, s in enumerate(data.get("skipped", [])):
        try:
            skipped.append((s["image"], s["reason"]))
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"skipped[{i}]: {exc}") from exc
    if not isinstance(data["fitted_at"], str):
        raise SchemaError("fitted_at: expected a string")
    return CorpusStats(tuple(per_image), ranges, data["fitted_at"], tuple(skipped))


def save_corpus_stats(stats: CorpusStats, path) -> None:
    """Write ``stats`` as JSON; floats round-trip exactly."""
    path = os.fspath(path)
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise FileNotFoundError(f"directory does not exist: {parent}")
    with open(path, "w") as fh:
        json.dump(stats.to_dict(), fh, indent=2)
        fh.write("\n")


def load_corpus_stats(path) -> CorpusStats:
    """Read and re-validate a stats file. Unknown keys are ignored.

    Raises:
        SchemaError: malformed JSON, missing fields or invariant violations.
    """
    with open(os.fspath(path)) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"not valid JSON: {exc}") from exc
    return corpus_from_dict(data)
