"""Multi-task plant analysis: segmentation, height regression, week staging.

A numpy/scipy implementation of a dual-path convolutional encoder with
per-task decoders, built on a small reverse-mode autodiff core, plus the
profiling, training, evaluation and verification tooling around it.
"""

__version__ = "0.1.0"

from .data import (AugConfig, ArraySample, Manifest, ManifestEntry, SynthSpec,
                   augment, class_pixel_weights, load_manifest, save_manifest,
                   split_dataset, synthesize_dataset)
from .errors import ConfigError, DataError, DimensionError
from .gradcam import grad_cam
from .gradcheck import check_gradients, model_check, primitive_checks
from .losses import LossTargets, LossWeights, multi_task_loss
from .metrics import (MetricsReport, classification_scores, confusion_matrix,
                      regression_scores, segmentation_scores)
from .model import (ForwardOutput, ModelConfig, MultiTaskNet, build,
                    build_single_task, parse_kernel_config)
from .optim import Adam, ScheduleSpec, lr_at
from .profile import ProfileReport, profile
from .tensor import Parameter, Tensor, concat, no_grad
from .training import (TrainConfig, TrainResult, evaluate_model, load_checkpoint,
                       restore_model, restore_optimizer, save_checkpoint, train)

__all__ = [
    "Adam", "ArraySample", "AugConfig", "ConfigError", "DataError",
    "DimensionError", "ForwardOutput", "LossTargets", "LossWeights", "Manifest",
    "ManifestEntry", "MetricsReport", "ModelConfig", "MultiTaskNet", "Parameter",
    "ProfileReport", "ScheduleSpec", "SynthSpec", "Tensor", "TrainConfig",
    "TrainResult", "augment", "build", "build_single_task", "check_gradients",
    "class_pixel_weights", "classification_scores", "concat", "confusion_matrix",
    "evaluate_model", "grad_cam", "load_checkpoint", "load_manifest", "lr_at",
    "model_check", "multi_task_loss", "no_grad", "parse_kernel_config",
    "primitive_checks", "profile", "regression_scores", "restore_model",
    "restore_optimizer", "save_checkpoint", "save_manifest",
    "segmentation_scores", "split_dataset", "synthesize_dataset", "train",
]
