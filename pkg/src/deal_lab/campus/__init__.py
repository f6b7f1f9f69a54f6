"""Sample scoring for pseudo-label and ground-truth selection, plus knee detection."""
from .knee import NO_KNEE, knee_locate
from .scores import (
    ConfusionCounts,
    ScoreRecord,
    binarize,
    cam_divergence,
    confusion,
    dice_coefficient,
    dice_distance,
    gt_score,
    model_divergence,
    prediction_entropy,
    pseudo_score,
    score_samples,
)
from .select import Decision, select_ground_truth, select_pseudo, write_scores

__all__ = [
    "NO_KNEE",
    "ConfusionCounts",
    "Decision",
    "ScoreRecord",
    "binarize",
    "cam_divergence",
    "confusion",
    "dice_coefficient",
    "dice_distance",
    "gt_score",
    "knee_locate",
    "model_divergence",
    "prediction_entropy",
    "pseudo_score",
    "score_samples",
    "select_ground_truth",
    "select_pseudo",
    "write_scores",
]
