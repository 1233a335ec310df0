"""Point-detection scoring: greedy radius matching and precision/recall/F1.

Predictions are visited in descending score order (ties by ascending x, then
y) and each takes the nearest still-unmatched ground-truth point of the same
image within ``radius``. Distance ties go to the ground-truth point with the
smaller (x, y), so results never depend on row order.
"""

from __future__ import annotations

import csv
import math
import os
from collections import defaultdict
from dataclasses import asdict, dataclass
from typing import NamedTuple

from .errors import MissingColumn, ParseError

RADIUS = 30.0


class Detection(NamedTuple):
    image: str
    x: float
    y: float
    score: float = 1.0


@dataclass(frozen=True)
class DetectionSet:
    entries: tuple

    def __post_init__(self):
        entries = tuple(Detection(*e) for e in self.entries)
        for e in entries:
            if not (math.isfinite(e.x) and math.isfinite(e.y)) or e.x < 0 or e.y < 0:
                raise ValueError(f"coordinates must be finite and >= 0: {e}")
            if not 0.0 <= e.score <= 1.0:
                raise ValueError(f"score must lie in [0, 1]: {e}")
        object.__setattr__(self, "entries", entries)

    def __len__(self):
        return len(self.entries)

    def by_image(self):
        groups = defaultdict(list)
        for e in self.entries:
            groups[e.image].append(e)
        return groups

    @classmethod
    def from_points(cls, image, points, scores=None):
        if scores is None:
            scores = [1.0] * len(points)
        return cls(tuple(Detection(image, float(x), float(y), float(s))
                         for (x, y), s in zip(points, scores)))


@dataclass(frozen=True)
class EvalResult:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, tp, fp, fn):
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        denom = precision + recall
        f1 = 2 * precision * recall / denom if denom > 0 else 0.0
        return cls(tp, fp, fn, precision, recall, f1)

    def to_dict(self):
        return asdict(self)


class MatchResult(NamedTuple):
    tp: int
    fp: int
    fn: int
    matches: list  # (prediction, ground truth) pairs


def _match_image(gt, pred, radius):
    gt = sorted(gt, key=lambda e: (e.x, e.y))
    pred = sorted(pred, key=lambda e: (-e.score, e.x, e.y))
    taken = [False] * len(gt)
    pairs = []
    for p in pred:
        best, best_d = None, None
        for i, g in enumerate(gt):
            if taken[i]:
                continue
            d = math.hypot(p.x - g.x, p.y - g.y)
            if d <= radius and (best_d is None or d < best_d):
                best, best_d = i, d
        if best is not None:
            taken[best] = True
            pairs.append((p, gt[best]))
    return pairs


def match_detections(gt: DetectionSet, pred: DetectionSet, radius=RADIUS) -> MatchResult:
    """Greedily pair predictions with ground truth; matching never crosses images."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    gt_groups, pred_groups = gt.by_image(), pred.by_image()
    pairs = []
    for image in sorted(set(gt_groups) | set(pred_groups)):
        pairs.extend(_match_image(gt_groups.get(image, []), pred_groups.get(image, []), radius))
    tp = len(pairs)
    return MatchResult(tp, len(pred) - tp, len(gt) - tp, pairs)


def evaluate(gt: DetectionSet, pred: DetectionSet, radius=RADIUS) -> EvalResult:
    m = match_detections(gt, pred, radius)
    return EvalResult.from_counts(m.tp, m.fp, m.fn)


def evaluate_per_image(gt: DetectionSet, pred: DetectionSet, radius=RADIUS) -> dict:
    """EvalResult for every image id present in either set."""
    gt_groups, pred_groups = gt.by_image(), pred.by_image()
    return {
        image: evaluate(DetectionSet(tuple(gt_groups.get(image, ()))),
                        DetectionSet(tuple(pred_groups.get(image, ()))), radius)
        for image in sorted(set(gt_groups) | set(pred_groups))
    }


def report(gt: DetectionSet, pred: DetectionSet, radius=RADIUS, per_image=False) -> dict:
    out = evaluate(gt, pred, radius).to_dict()
    if per_image:
        out["per_image"] = {k: v.to_dict() for k, v in evaluate_per_image(gt, pred, radius).items()}
    return out


def _number(text, field, line):
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise ParseError(f"{field} is not a number: {text!r}", line) from None
    if not math.isfinite(value):
        raise ParseError(f"{field} is not finite: {text!r}", line)
    return value


def load_annotations(path, kind="gt") -> DetectionSet:
    """Read a CSV with header ``image,x,y[,score]``.

    Ground truth (``kind="gt"``) ignores any score column and gets score 1.0.
    Predictions (``kind="pred"``) must have a score column.

    Raises:
        MissingColumn: a required column is absent from the header.
        ParseError: a row is malformed; the message carries its line number.
    """
    if kind not in ("gt", "pred"):
        raise ValueError(f"kind must be 'gt' or 'pred', got {kind!r}")
    path = os.fspath(path)
    entries = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        reader.fieldnames = header
        required = ["image", "x", "y"] + (["score"] if kind == "pred" else [])
        missing = [c for c in required if c not in header]
        if missing:
            raise MissingColumn(f"{path}: missing column(s) {', '.join(missing)}")
        for row in reader:
            line = reader.line_num
            if None in row or any(row[c] is None for c in required):
                raise ParseError("wrong number of fields", line)
            image = row["image"].strip()
            if not image:
                raise ParseError("empty image id", line)
            x = _number(row["x"], "x", line)
            y = _number(row["y"], "y", line)
            if x < 0 or y < 0:
                raise ParseError(f"negative coordinate ({x}, {y})", line)
            score = 1.0
            if kind == "pred":
                score = _number(row["score"], "score", line)
                if not 0.0 <= score <= 1.0:
                    raise ParseError(f"score {score} outside [0, 1]", line)
            entries.append(Detection(image, x, y, score))
    return DetectionSet(tuple(entries))


def save_annotations(ds: DetectionSet, path, with_score=True) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["image", "x", "y", "score"] if with_score else ["image", "x", "y"])
        for e in ds.entries:
            row = [e.image, repr(e.x), repr(e.y)]
            writer.writerow(row + [repr(e.score)] if with_score else row)
