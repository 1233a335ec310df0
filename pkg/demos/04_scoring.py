"""
Scoring point detections
========================

Mitosis detection is scored on points: a prediction counts as a true
positive if it lies within a radius of a not-yet-claimed ground-truth point.
Predictions are processed from the highest score down.
"""

import numpy as np

from stainaug.metrics import DetectionSet, EvalResult, evaluate, match_detections

# The hand-traceable case: two GT points ten pixels apart, two predictions
# between them.
gt = DetectionSet.from_points("tile.png", [(0, 0), (10, 0)])
pred = DetectionSet.from_points("tile.png", [(4, 0), (6, 0)], scores=[0.9, 0.8])
for radius in (5, 3):
    m = match_detections(gt, pred, radius)
    pairs = [((p.x, p.y), (g.x, g.y)) for p, g in m.matches]
    print(f"radius {radius}: tp={m.tp} fp={m.fp} fn={m.fn} pairs={pairs}")

# Metric arithmetic from raw counts; zero denominators give 0, not NaN.
r = EvalResult.from_counts(60, 17, 23)
print(f"\n60/17/23 -> precision {r.precision:.4f}, recall {r.recall:.4f}, f1 {r.f1:.4f}")
print("empty sets ->", EvalResult.from_counts(0, 0, 0).to_dict())

# A noisy detector on simulated mitoses: jittered hits, misses and
# false alarms spread over a few tiles.
rng = np.random.default_rng(0)
gt_rows, pred_rows = [], []
for t in range(5):
    name = f"tile{t}.png"
    truth = rng.uniform(0, 1000, size=(12, 2))
    gt_rows += [(name, x, y, 1.0) for x, y in truth]
    hit = truth[rng.random(12) < 0.75]
    hit = hit + rng.normal(0, 8, size=hit.shape)
    noise = rng.uniform(0, 1000, size=(3, 2))
    for x, y in np.vstack([hit, noise]):
        pred_rows.append((name, max(x, 0.0), max(y, 0.0), float(rng.uniform(0.3, 1.0))))
gt, pred = DetectionSet(tuple(gt_rows)), DetectionSet(tuple(pred_rows))

print("\nradius   tp   fp   fn   f1")
for radius in (5, 10, 20, 30, 60):
    res = evaluate(gt, pred, radius)
    print(f"{radius:>6} {res.tp:>4} {res.fp:>4} {res.fn:>4}  {res.f1:.3f}")
