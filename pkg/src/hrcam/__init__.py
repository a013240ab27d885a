"""High-resolution class activation maps from multi-level feature taps.

The package pairs a small trainable CNN (hand-written numpy kernels with
explicit backward passes) with a frozen-backbone head over the concatenated
upsampled pre-max-pool feature maps, synthesizes activation maps natively at
input resolution, and evaluates localization against exact ground-truth
masks from a synthetic-lesion generator.
"""

from .cams import CamMap, composite_strip, grad_cam, hrcam, normalize_cam, zhou_cam
from .config import RunConfig, default_run_config
from .metrics import EvalMetrics, classification_accuracy, evaluate_method, sweep
from .model import (
    HeadWeights,
    ModelSpec,
    TapSet,
    build_model,
    concat_features,
    derive_tapset,
    forward,
    head_features,
    predict,
    stacked_spec,
)
from .simdata import Sample, SimConfig, generate_dataset, load_dataset, write_dataset
from .train import AugmentConfig, TrainConfig, augment, train_backbone, train_gap_head

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig",
    "CamMap",
    "EvalMetrics",
    "HeadWeights",
    "ModelSpec",
    "RunConfig",
    "Sample",
    "SimConfig",
    "TapSet",
    "TrainConfig",
    "augment",
    "build_model",
    "classification_accuracy",
    "composite_strip",
    "concat_features",
    "default_run_config",
    "derive_tapset",
    "evaluate_method",
    "forward",
    "generate_dataset",
    "grad_cam",
    "head_features",
    "hrcam",
    "load_dataset",
    "normalize_cam",
    "predict",
    "stacked_spec",
    "sweep",
    "train_backbone",
    "train_gap_head",
    "write_dataset",
    "zhou_cam",
]
