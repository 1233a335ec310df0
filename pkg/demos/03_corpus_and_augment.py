"""
From a training corpus to stain-augmented copies
================================================

The augmentation recipe:

1. fit Reinhard statistics and a stain model to every training tile;
2. take the elementwise min/max over the corpus as sampling ranges;
3. optionally enlarge the ranges about their midpoints;
4. for each output, flip a biased coin between the two methods, draw a
   target uniformly from the ranges, normalize, then flip/rotate.

Every output is keyed by (seed, image index), so reruns -- serial or
threaded -- write identical bytes.

Usage: python 03_corpus_and_augment.py [WORK_DIR]
"""

import hashlib
import sys
import tempfile
from collections import Counter
from pathlib import Path

import numpy as np

from stainaug import synthetic
from stainaug.augment import AugmentConfig, augment_batch, sample_target_params
from stainaug.corpus import enlarge_ranges, fit_corpus_stats, save_corpus_stats
from stainaug.imagecore import save_image

work = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="stainaug_"))
tiles = work / "tiles"
tiles.mkdir(parents=True, exist_ok=True)

# Six tiles standing in for slides from different scanners, plus an empty
# background tile that cannot be fitted.
rng = np.random.default_rng(42)
for i in range(6):
    tile = synthetic.two_stain_tile(96, seed=i, stains=synthetic.perturbed_stains(rng, 0.25),
                                    peak=(rng.uniform(0.2, 0.4), rng.uniform(0.9, 1.4)))
    save_image(tile.image, tiles / f"slide{i}.png")
save_image(synthetic.white_tile(96), tiles / "background.png")

stats = fit_corpus_stats(sorted(tiles.glob("*.png")))
save_corpus_stats(stats, work / "stats.json")
print(f"fitted {len(stats.per_image)} tiles; skipped: {stats.skipped}")

r = stats.ranges
print("\nReinhard mean ranges (l, alpha, beta):")
print(np.round(r.reinhard_mean, 4))
print("stain entry ranges (row-major 3x2):")
print(np.round(r.stain_entries, 3))

# Enlarging keeps each midpoint and scales the half-width by the factor.
for f in (0, 1, 2):
    print(f"factor {f}: first stain entry range {np.round(enlarge_ranges(r, f).stain_entries[0], 4)}")

# The sampled targets: method split and geometric transforms.
cfg = AugmentConfig(p_reinhard=0.5, enlarge_factor=1.5, seed=7)
draws = [sample_target_params(r, cfg, i) for i in range(2000)]
print("\nmethod split over 2000 draws:", dict(Counter(d.method for d in draws)))
print("geometry split:", dict(Counter(d.geom for d in draws)))

# A batch run writes <stem>_aug<c>.png plus a manifest. The background tile
# still gets Reinhard copies; its Vahadane draws are recorded as failures.
out = work / "augmented"
out.mkdir(exist_ok=True)
rows = augment_batch(sorted(tiles.glob("*.png")), stats, cfg, out, copies_per_image=3, threads=2)
failed = [row for row in rows if not row["output"]]
print(f"\nwrote {len(rows) - len(failed)} images, {len(failed)} failed draws")

manifest = (out / "manifest.csv").read_bytes()
print("manifest sha256:", hashlib.sha256(manifest).hexdigest()[:16])
print("output directory:", out)
