"""Classical microfossil detection, augmentation and COCO-style evaluation."""

from importlib.resources import files

from .augment import AugmentConfig, AugmentSample, RandomAugmenter, augment
from .dataset import (ClassLabel, Detection, Manifest, dataset_stats, load_manifest,
                      load_predictions)
from .evaluation import EvalConfig, MetricsReport, evaluate
from .geometry import BBox, BinaryMask
from .pipeline import ClassicalDetector, GaussianSmoother, PipelineConfig, detect
from .split import SplitSpec, stratified_split
from .synth import SceneConfig, generate_corpus, generate_scene

__version__ = "0.1.0"


def table1_manifest_path():
    """Path to the bundled fixture with the reference per-phase counts."""
    return files(__name__) / "data" / "table1.manifest"
