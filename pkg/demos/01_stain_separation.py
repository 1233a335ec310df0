"""
Separating two stains with sparse NMF
=====================================

An H&E tile is, in optical density (OD), a non-negative mix of two stain
colors. This walk-through renders a synthetic tile from a known stain
matrix, recovers that matrix, and shows what the concentrations look like.
"""

import numpy as np

from stainaug import synthetic
from stainaug.imagecore import mean_od, rgb_to_od, tissue_mask
from stainaug.vahadane import compute_concentrations, estimate_stain_matrix, fit_stain_model

# A 128x128 tile built from a slightly perturbed H&E stain pair. Each pixel
# is dominated by one stain and carries a trace of the other.
rng = np.random.default_rng(0)
tile = synthetic.two_stain_tile(128, seed=1, stains=synthetic.perturbed_stains(rng))
true_w = tile.stains
print("generating stain columns (hematoxylin, eosin):")
print(np.round(true_w, 3))

# Beer-Lambert: od = -log10(I / 255). White background has OD 0; the tissue
# mask keeps pixels whose mean OD exceeds 0.15.
od = rgb_to_od(tile.image)
mask = tissue_mask(tile.image)
print(f"\nmean OD over the tile: {mean_od(tile.image).mean():.3f}")
print(f"tissue pixels: {mask.count} of {mask.bits.size}")

# Sparse NMF on the tissue OD: V ~ W H with unit, non-negative W columns.
est = estimate_stain_matrix(od, mask)
print("\nestimated stain columns:")
print(np.round(est.w, 3))
for k, name in enumerate(("hematoxylin", "eosin")):
    print(f"  {name}: {synthetic.angle_deg(est.w[:, k], true_w[:, k]):.2f} deg from the truth")

# Concentrations: a non-negative lasso per pixel against the fitted stains.
conc = compute_concentrations(od, est, lam=0.01).h
dominant = (conc[..., 0] > conc[..., 1])[mask.bits].mean()
print(f"\nfraction of tissue pixels dominated by hematoxylin: {dominant:.2f}")
print(f"true fraction:                                      "
      f"{(tile.concentrations[..., 0] > tile.concentrations[..., 1]).mean():.2f}")

# The stain model used for normalization also stores a robust maximum
# (99th percentile) concentration per stain.
model = fit_stain_model(tile.image)
print(f"\nconcentration scale per stain: {np.round(model.scale, 3)}")
