"""cineavd: aortic valve disease classification from 2D+time cine volumes.

Pipeline: adaptive heart extraction -> 3D DenseNet classifier (trained from
scratch with focal loss / Adam) -> Grad-CAM attention maps, plus a synthetic
phantom generator that makes the whole chain testable at desk scale.
"""

from .densenet import ArchConfig, build_model, load_checkpoint, save_checkpoint
from .errors import CineAvdError
from .extraction import BoundingBox, ExtractionConfig, extract_heart
from .manifest import LabelTask, Manifest, ManifestEntry, read_manifest, write_manifest
from .phantom import PhantomConfig, generate_dataset, generate_phantom
from .training import SplitSpec, TrainConfig, stratified_split, train
from .volume import CineVolume, read_ctv, resize_depth_area, write_ctv, zscore_normalize

__version__ = "0.1.0"

__all__ = [
    "ArchConfig", "BoundingBox", "CineAvdError", "CineVolume", "ExtractionConfig",
    "LabelTask", "Manifest", "ManifestEntry", "PhantomConfig", "SplitSpec",
    "TrainConfig", "build_model", "extract_heart", "generate_dataset",
    "generate_phantom", "load_checkpoint", "read_ctv", "read_manifest",
    "resize_depth_area", "save_checkpoint", "stratified_split", "train",
    "write_ctv", "write_manifest", "zscore_normalize", "__version__",
]
