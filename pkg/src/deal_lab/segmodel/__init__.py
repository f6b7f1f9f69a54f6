"""Discrepancy decoder segmentation model and its three-step training."""
from .losses import binary_cross_entropy, loss_ce_dice, loss_l1_dis, soft_dice
from .model import DECODERS, DiscrepancyModel, PredictionTriple, Skips
from .train import (
    Schedule,
    TrainingBatch,
    make_batches,
    step_optimizer,
    train_discrepancy,
    train_full,
    train_standard,
    train_step1,
    train_step2,
    train_step3,
    write_curve,
)

__all__ = [
    "DECODERS",
    "DiscrepancyModel",
    "PredictionTriple",
    "Schedule",
    "Skips",
    "TrainingBatch",
    "binary_cross_entropy",
    "loss_ce_dice",
    "loss_l1_dis",
    "make_batches",
    "soft_dice",
    "step_optimizer",
    "train_discrepancy",
    "train_full",
    "train_standard",
    "train_step1",
    "train_step2",
    "train_step3",
    "write_curve",
]
