"""Lightweight skin-lesion segmentation network on a small numpy autodiff core."""
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import DatasetManifest, load_dataset, load_sample, split_manifest, synth_lesions
from .losses import LossConfig, bce_loss, combined_loss, jaccard_loss
from .metrics import ConfusionCounts, MetricsReport, aggregate, confusion, metrics
from .network import (
    ModelParams,
    NetworkConfig,
    complexity_report,
    count_flops,
    count_params,
    forward,
    init_params,
    layer_table,
    predict_mask,
)
from .optim import AdamState, EarlyStopState, adam_step, early_stop_update
from .tensor import Tensor, no_grad
from .train import TrainConfig, TrainResult, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "AdamState", "Checkpoint", "ConfusionCounts", "DatasetManifest", "EarlyStopState", "LossConfig",
    "MetricsReport", "ModelParams", "NetworkConfig", "Tensor", "TrainConfig", "TrainResult",
    "adam_step", "aggregate", "bce_loss", "combined_loss", "complexity_report", "confusion", "count_flops",
    "count_params", "early_stop_update", "evaluate", "forward", "init_params", "jaccard_loss", "layer_table",
    "load_checkpoint", "load_dataset", "load_sample", "metrics", "no_grad", "predict_mask", "save_checkpoint",
    "split_manifest", "synth_lesions", "train",
]
