"""Per-sample preprocessing shared by training, evaluation and prediction:
read -> optional heart extraction -> depth resize -> z-score."""

import numpy as np

from .extraction import ExtractionConfig, extract_heart
from .manifest import ManifestEntry
from .volume import CineVolume, read_ctv, resize_depth_area, zscore_array


def prepare_volume(vol: CineVolume, target_depth: int,
                   extraction_cfg: ExtractionConfig = None) -> np.ndarray:
    """Standardize one volume to a float32 (H, W, D) classifier input."""
    if extraction_cfg is not None:
        vol = extract_heart(vol, extraction_cfg)
    vol = resize_depth_area(vol, target_depth)
    return zscore_array(vol.voxels)


def load_sample(entry: ManifestEntry, target_depth: int,
                extraction_cfg: ExtractionConfig = None) -> np.ndarray:
    return prepare_volume(read_ctv(entry.path), target_depth, extraction_cfg)
