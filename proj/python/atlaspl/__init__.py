"""Atlas-based pseudo-labeling for 3-D segmentation.

Arrays are indexed ``[x, y, z]``. Images are float32, label maps uint16 and
posteriors float64.
"""

from ._core import (
    DEFAULT_BINS,
    AtlasplError,
    combine,
    dice,
    load_labels,
    load_volume,
    lop_fuse,
    majority_vote,
    mutual_information,
    phantom,
    quantile,
    run_cli,
    save_labels,
    save_volume,
    similarity_matrix,
    simulate_raters,
    staple,
    structure_bbox,
)

__all__ = [
    "DEFAULT_BINS",
    "AtlasplError",
    "combine",
    "dice",
    "load_labels",
    "load_volume",
    "lop_fuse",
    "majority_vote",
    "mutual_information",
    "phantom",
    "quantile",
    "run_cli",
    "save_labels",
    "save_volume",
    "similarity_matrix",
    "simulate_raters",
    "staple",
    "structure_bbox",
]
