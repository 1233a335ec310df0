"""
Reinhard color transfer versus Vahadane normalization
=====================================================

Two ways to make one tile look like another. Reinhard matches per-channel
mean and standard deviation in the decorrelated l-alpha-beta space;
Vahadane swaps the stain matrix and rescales concentrations, which keeps
structure because every pixel is re-rendered from its own stain amounts.

Usage: python 02_reinhard_transfer.py [OUT_DIR]
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from stainaug import synthetic
from stainaug.imagecore import save_image, tissue_mask
from stainaug.reinhard import fit_reinhard_stats, reinhard_transfer
from stainaug.vahadane import fit_stain_model, vahadane_normalize

out_dir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="stainaug_"))
out_dir.mkdir(parents=True, exist_ok=True)

rng = np.random.default_rng(3)
source = synthetic.two_stain_tile(128, seed=10, stains=synthetic.perturbed_stains(rng, 0.1)).image
# a "different scanner": other stain hues and paler staining
target = synthetic.two_stain_tile(128, seed=11, stains=synthetic.perturbed_stains(rng, 0.35),
                                  peak=(0.2, 0.7)).image

# --- Reinhard ---------------------------------------------------------------
src_stats = fit_reinhard_stats(source, tissue_mask(source))
tgt_stats = fit_reinhard_stats(target, tissue_mask(target))
print("l-alpha-beta statistics (mean / std)")
print("  source:", np.round(src_stats.mean, 4), np.round(src_stats.std, 4))
print("  target:", np.round(tgt_stats.mean, 4), np.round(tgt_stats.std, 4))

reinhard = reinhard_transfer(source, tgt_stats, tissue_mask(source))
got = fit_reinhard_stats(reinhard, tissue_mask(reinhard))
print("  result:", np.round(got.mean, 4), np.round(got.std, 4))

# Transferring a tile onto its own statistics changes at most one level.
same = reinhard_transfer(source, fit_reinhard_stats(source))
print("self-transfer max change:", np.abs(same.pixels.astype(int) - source.pixels.astype(int)).max())

# --- Vahadane ---------------------------------------------------------------
model = fit_stain_model(target)
vahadane = vahadane_normalize(source, model)
refit = fit_stain_model(vahadane)
print("\nVahadane target stains:\n", np.round(model.stains.w, 3))
print("stains re-fitted on the output:\n", np.round(refit.stains.w, 3))

for name, img in (("source", source), ("target", target),
                  ("reinhard", reinhard), ("vahadane", vahadane)):
    save_image(img, out_dir / f"{name}.png")
print(f"\nwrote source/target/reinhard/vahadane PNGs to {out_dir}")
