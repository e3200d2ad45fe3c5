"""Coupled multi-task learning for a class task and a binary attribute task
trained on little or non-overlapping annotations."""

from .losses import BatchLabels, LossOptions, LossReport, Predictions, loss_total
from .relatedness import (
    RelatednessSpec,
    bundled,
    indicator_weights,
    infer_relatedness,
    load_relatedness,
    mixture_matrix,
)

__version__ = "0.1.0"

__all__ = [
    "BatchLabels", "LossOptions", "LossReport", "Predictions", "RelatednessSpec",
    "bundled", "indicator_weights", "infer_relatedness", "load_relatedness", "loss_total",
    "mixture_matrix",
]
