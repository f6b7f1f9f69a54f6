"""Segmentation and discrepancy losses on probability maps."""
from __future__ import annotations

import numpy as np

from ..autograd import DimensionError, Tensor, as_tensor, ops

PROB_CLAMP = 1e-6
DICE_SMOOTH = 1.0


def _prepare(prob, target) -> tuple[Tensor, np.ndarray]:
    prob = as_tensor(prob)
    y = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if prob.shape != y.shape:
        raise DimensionError(f"prediction {prob.shape} and label {y.shape} differ")
    return ops.clip(prob, PROB_CLAMP, 1.0 - PROB_CLAMP), y


def binary_cross_entropy(prob, target) -> Tensor:
    p, y = _prepare(prob, target)
    return -ops.mean(Tensor(y) * ops.log(p) + Tensor(1.0 - y) * ops.log(1.0 - p))


def soft_dice(prob, target) -> Tensor:
    """Soft Dice pooled over the whole batch, additive smoothing 1."""
    p, y = _prepare(prob, target)
    inter = ops.sum(p * Tensor(y))
    return (2.0 * inter + DICE_SMOOTH) / (ops.sum(p) + float(y.sum()) + DICE_SMOOTH)


def loss_ce_dice(prob, target) -> Tensor:
    """Mean binary cross-entropy plus (1 - soft Dice), equally weighted."""
    return binary_cross_entropy(prob, target) + (1.0 - soft_dice(prob, target))


def loss_l1_dis(a, b) -> Tensor:
    """Mean absolute difference between two probability maps."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"discrepancy inputs differ in shape: {a.shape} vs {b.shape}")
    return ops.mean(ops.abs(a - b))
