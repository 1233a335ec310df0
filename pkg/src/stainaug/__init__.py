"""Stain-color domain augmentation and point-detection scoring for H&E tiles."""

__version__ = "0.1.0"

from .augment import (
    AugmentConfig,
    TargetParams,
    apply_stain_augmentation,
    augment_batch,
    geometric_augment,
    sample_target_params,
)
from .corpus import (
    CorpusStats,
    ParameterRanges,
    enlarge_ranges,
    fit_corpus_stats,
    load_corpus_stats,
    save_corpus_stats,
)
from .imagecore import (
    OdImage,
    RgbImage,
    TissueMask,
    load_image,
    od_to_rgb,
    rgb_to_od,
    save_image,
    tissue_mask,
)
from .metrics import DetectionSet, EvalResult, evaluate, load_annotations, match_detections
from .reinhard import (
    ReinhardStats,
    fit_reinhard_stats,
    lalphabeta_to_rgb,
    reinhard_transfer,
    rgb_to_lalphabeta,
)
from .vahadane import (
    ConcentrationMap,
    StainMatrix,
    StainModel,
    compute_concentrations,
    estimate_stain_matrix,
    fit_stain_model,
    vahadane_normalize,
)
