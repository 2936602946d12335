"""
segmentation.py
---------------
Per-pixel class probabilities and the summed cross-entropy loss.
"""

from __future__ import annotations

import numpy as np

from src.autodiff import ops
from src.autodiff.tensor import Tensor
from src.utils.errors import LabelError, ShapeError


def pixel_class_probability(scores: Tensor) -> Tensor:
    return ops.softmax_channels(scores)


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise LabelError(
            f"label ids must lie in [0, {num_classes}), got range "
            f"[{int(labels.min())}, {int(labels.max())}]"
        )
    return np.eye(num_classes)[labels.astype(np.int64)]


def segmentation_loss(scores: Tensor, labels) -> Tensor:
    """
    −Σ log p(true class) over every pixel of every frame (no averaging).

    scores : (N, H, W, C) or (H, W, C) logits.
    labels : integer class ids, same leading shape as ``scores``.
    """
    labels = labels.values if isinstance(labels, Tensor) else np.asarray(labels)
    if labels.shape != scores.shape[:-1]:
        raise ShapeError(f"segmentation_loss: shape mismatch {scores.shape} vs {labels.shape}")
    if not np.all(labels == np.round(labels)):
        raise LabelError("label map contains non-integer class ids")
    target = Tensor(one_hot(labels, scores.shape[-1]))
    return ops.scalar_mul(ops.sum(ops.mul(target, ops.log_softmax_channels(scores))), -1.0)
