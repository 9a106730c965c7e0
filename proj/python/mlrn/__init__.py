"""Multilabel image classification toolkit (thin wrapper over the C++ core)."""

from ._core import (
    MlrnError,
    average_precision,
    bce_from_logits,
    evaluate,
    generate_synthetic,
    metrics_json,
    predict,
    sigmoid,
    train,
)
from ._core import __version__

__all__ = [
    "MlrnError",
    "average_precision",
    "bce_from_logits",
    "evaluate",
    "generate_synthetic",
    "metrics_json",
    "predict",
    "sigmoid",
    "train",
    "__version__",
]
