"""Randomized stain-color augmentation.

For every (seed, image_index) pair a private Philox stream decides between
Reinhard and Vahadane normalization, draws a target style uniformly from the
(optionally enlarged) corpus ranges, and picks an exact flip/rotation. Streams
are keyed rather than shared, so a batch gives the same bytes no matter how
many threads run it or in what order items finish.
"""

from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import CorpusStats, ParameterRanges, enlarge_ranges
from .errors import DegenerateSample, StainAugError
from .imagecore import OD_EPS, OD_THRESHOLD, RgbImage, load_image, save_image, tissue_mask
from .reinhard import ReinhardStats, reinhard_transfer
from .vahadane import (
    CONC_LAMBDA,
    ITERS,
    LAMBDA,
    StainMatrix,
    StainModel,
    _order_columns,
    vahadane_normalize,
)

REINHARD = "reinhard"
VAHADANE = "vahadane"
GEOMS = ("none", "hflip", "vflip", "rot90", "rot180", "rot270")
MAX_RESAMPLES = 16
MIN_COLUMN_NORM = 1e-8
MANIFEST_NAME = "manifest.csv"
MANIFEST_HEADER = ["input", "output", "method", "geom", "params_json"]


@dataclass(frozen=True)
class AugmentConfig:
    p_reinhard: float = 0.5
    enlarge_factor: float = 1.0
    seed: int = 0
    lam: float = LAMBDA
    iters: int = ITERS
    geometric: bool = True
    conc_lam: float = CONC_LAMBDA
    od_threshold: float = OD_THRESHOLD
    od_eps: float = OD_EPS

    def __post_init__(self):
        if not 0.0 <= self.p_reinhard <= 1.0:
            raise ValueError(f"p_reinhard must lie in [0, 1], got {self.p_reinhard}")
        if not self.enlarge_factor >= 0:
            raise ValueError(f"enlarge_factor must be >= 0, got {self.enlarge_factor}")
        if self.iters < 1:
            raise ValueError("iters must be >= 1")


@dataclass(frozen=True)
class TargetParams:
    method: str
    reinhard_target: ReinhardStats | None = None
    stain_target: StainModel | None = None
    geom: str = "none"

    def __post_init__(self):
        if self.method == REINHARD:
            ok = self.reinhard_target is not None and self.stain_target is None
        elif self.method == VAHADANE:
            ok = self.stain_target is not None and self.reinhard_target is None
        else:
            raise ValueError(f"unknown method {self.method!r}")
        if not ok:
            raise ValueError(f"{self.method} params need exactly the matching target")
        if self.geom not in GEOMS:
            raise ValueError(f"unknown geom {self.geom!r}")

    def to_dict(self):
        out = {"method": self.method, "geom": self.geom}
        if self.reinhard_target is not None:
            out["reinhard_target"] = self.reinhard_target.to_dict()
        if self.stain_target is not None:
            out["stain_target"] = self.stain_target.to_dict()
        return out

    @classmethod
    def from_dict(cls, data):
        r = data.get("reinhard_target")
        s = data.get("stain_target")
        return cls(
            method=data["method"],
            reinhard_target=None if r is None else ReinhardStats.from_dict(r),
            stain_target=None if s is None else StainModel.from_dict(s),
            geom=data.get("geom", "none"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def rng_for(seed: int, image_index: int) -> np.random.Generator:
    """Independent Philox stream for one image; negative seeds wrap modulo 2**64."""
    if image_index < 0:
        raise ValueError("image_index must be >= 0")
    seq = np.random.SeedSequence(int(seed) % 2**64, spawn_key=(int(image_index),))
    return np.random.Generator(np.random.Philox(seq))


def _uniform(rng, intervals):
    return rng.uniform(intervals[:, 0], intervals[:, 1])


def _sample_stain_model(rng, ranges: ParameterRanges) -> StainModel:
    for _ in range(MAX_RESAMPLES + 1):
        w = _uniform(rng, ranges.stain_entries).reshape(3, 2)
        norms = np.sqrt((w ** 2).sum(axis=0))
        if np.all(norms >= MIN_COLUMN_NORM):
            break
    else:
        raise DegenerateSample(
            f"sampled stain column norm < {MIN_COLUMN_NORM} after {MAX_RESAMPLES} resamples")
    scale = _uniform(rng, ranges.conc_scale)
    w = w / norms
    order = _order_columns(w)
    return StainModel(StainMatrix(w[:, order]), scale[order])


def sample_target_params(ranges: ParameterRanges, config: AugmentConfig,
                         image_index: int) -> TargetParams:
    """Draw the augmentation target for one output image.

    Draw order within the stream: method, then the method's scalars (each
    uniform on its enlarged interval), then the geometric transform.

    Raises:
        DegenerateSample: stain columns kept sampling to (near) zero vectors.
    """
    rng = rng_for(config.seed, image_index)
    ranges = enlarge_ranges(ranges, config.enlarge_factor)
    if rng.random() < config.p_reinhard:
        mean = _uniform(rng, ranges.reinhard_mean)
        std = _uniform(rng, ranges.reinhard_std)
        params = {"method": REINHARD, "reinhard_target": ReinhardStats(mean, std)}
    else:
        params = {"method": VAHADANE, "stain_target": _sample_stain_model(rng, ranges)}
    geom = GEOMS[rng.integers(len(GEOMS))] if config.geometric else "none"
    return TargetParams(geom=geom, **params)


def geometric_augment(image: RgbImage, geom: str) -> RgbImage:
    """Exact flips and quarter-turn rotations; rotations are counter-clockwise."""
    px = image.pixels
    if geom == "none":
        return image
    if geom == "hflip":
        return RgbImage(px[:, ::-1])
    if geom == "vflip":
        return RgbImage(px[::-1])
    if geom == "rot90":
        return RgbImage(np.rot90(px, 1))
    if geom == "rot180":
        return RgbImage(np.rot90(px, 2))
    if geom == "rot270":
        return RgbImage(np.rot90(px, 3))
    raise ValueError(f"unknown geom {geom!r}")


def apply_stain_augmentation(image: RgbImage, params: TargetParams,
                             config: AugmentConfig) -> RgbImage:
    """Recolor ``image`` toward the sampled target, then apply its geometric transform.

    Reinhard source statistics come from the tissue mask, or from the whole
    image when the tile has no tissue. Vahadane errors such as
    ``InsufficientTissue`` propagate.
    """
    if params.method == REINHARD:
        mask = tissue_mask(image, config.od_threshold)
        out = reinhard_transfer(image, params.reinhard_target, mask if mask.count else None)
    else:
        out = vahadane_normalize(image, params.stain_target, config.lam, config.iters,
                                 config.seed, conc_lam=config.conc_lam,
                                 od_threshold=config.od_threshold, od_eps=config.od_eps)
    return geometric_augment(out, params.geom)


def _augment_one(i, path, ranges, config, out_dir, copies):
    rows = []
    image, load_error = None, None
    try:
        image = load_image(path)
    except (StainAugError, OSError) as exc:
        load_error = f"{type(exc).__name__}: {exc}"
    for c in range(copies):
        index = i * copies + c
        name = f"{Path(path).stem}_aug{c}.png"
        row = {"input": os.fspath(path), "output": "", "method": "", "geom": "",
               "params_json": ""}
        try:
            params = sample_target_params(ranges, config, index)
        except DegenerateSample as exc:
            row["params_json"] = json.dumps({"error": f"DegenerateSample: {exc}"})
            rows.append(row)
            continue
        row["method"], row["geom"] = params.method, params.geom
        payload = params.to_dict()
        error = load_error
        if error is None:
            try:
                save_image(apply_stain_augmentation(image, params, config),
                           os.path.join(out_dir, name))
                row["output"] = name
            except (StainAugError, OSError) as exc:
                error = f"{type(exc).__name__}: {exc}"
        if error is not None:
            payload["error"] = error
        row["params_json"] = json.dumps(payload, sort_keys=True)
        rows.append(row)
    return rows


def augment_batch(paths, stats: CorpusStats | ParameterRanges, config: AugmentConfig, out_dir,
                  copies_per_image=1, threads=1) -> list:
    """Write ``copies_per_image`` augmented PNGs per input plus ``manifest.csv``.

    Copy ``c`` of input ``i`` uses ``image_index = i * copies_per_image + c`` and
    is written as ``<stem>_aug<c>.png``. Failures (unreadable input, too little
    tissue for Vahadane) get a row with an empty ``output`` and an ``error`` key
    in ``params_json``; the rest of the batch is unaffected.

    Returns:
        Manifest rows as dicts, in input order.
    """
    if copies_per_image < 1:
        raise ValueError("copies_per_image must be >= 1")
    out_dir = os.fspath(out_dir)
    if not os.path.isdir(out_dir):
        raise FileNotFoundError(f"output directory does not exist: {out_dir}")
    ranges = stats.ranges if isinstance(stats, CorpusStats) else stats
    paths = list(paths)
    jobs = [(i, p, ranges, config, out_dir, copies_per_image) for i, p in enumerate(paths)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(lambda job: _augment_one(*job), jobs))
    else:
        chunks = [_augment_one(*job) for job in jobs]
    rows = [row for chunk in chunks for row in chunk]
    write_manifest(rows, os.path.join(out_dir, MANIFEST_NAME))
    return rows


def write_manifest(rows, path) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=MANIFEST_HEADER, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def read_manifest(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
