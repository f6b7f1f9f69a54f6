"""Dice distance, prediction entropy, model/CAM divergence and the two selection scores."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autograd import DimensionError

MAX_DIVERGENCE = 3.0  # upper bound of a sum of three Dice distances


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def binarize(prob: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Strict ``prob > threshold``; boolean arrays pass through."""
    prob = np.asarray(prob)
    return prob if prob.dtype == bool else prob > threshold


def confusion(pred: np.ndarray, truth: np.ndarray) -> ConfusionCounts:
    pred, truth = binarize(pred), binarize(truth)
    if pred.shape != truth.shape:
        raise DimensionError(f"mask shapes differ: {pred.shape} vs {truth.shape}")
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    return ConfusionCounts(tp, fp, pred.size - tp - fp - fn, fn)


def dice_distance(a: np.ndarray, b: np.ndarray) -> float:
    """1 - 2TP / (FP + 2TP + FN), computed as (FP + FN) / (FP + 2TP + FN).

    Two empty masks count as perfect agreement (distance 0).
    """
    c = confusion(a, b)
    denom = c.fp + 2 * c.tp + c.fn
    return 0.0 if denom == 0 else (c.fp + c.fn) / denom


def dice_coefficient(a: np.ndarray, b: np.ndarray) -> float:
    """Dice overlap; defined through the distance so the two stay exact complements."""
    return 1.0 - dice_distance(a, b)


def prediction_entropy(prob: np.ndarray, full_binary: bool = False) -> float:
    """-(1/N) sum p ln p over pixels (0 ln 0 = 0).

    With ``full_binary`` the background term -(1-p) ln(1-p) is added as well.
    """
    p = np.asarray(prob, dtype=np.float64)

    def plogp(v):
        return np.where(v > 0, v * np.log(np.where(v > 0, v, 1.0)), 0.0)

    total = plogp(p)
    if full_binary:
        total = total + plogp(1.0 - p)
    return float(-total.mean())


def model_divergence(p_s: np.ndarray, p_c: np.ndarray, p_f: np.ndarray, full_binary: bool = False) -> float:
    """Entropy of the standard prediction times the summed pairwise Dice distances."""
    s, c, f = binarize(p_s), binarize(p_c), binarize(p_f)
    spread = dice_distance(s, c) + dice_distance(s, f) + dice_distance(c, f)
    return prediction_entropy(p_s, full_binary) * spread


def cam_divergence(p_s: np.ndarray, p_c: np.ndarray, p_f: np.ndarray, cam: np.ndarray) -> float:
    """Sum of the prediction-to-CAM Dice distances minus the largest one."""
    d = [dice_distance(p, cam) for p in (p_s, p_c, p_f)]
    return float(sum(d) - max(d))


def pseudo_score(s_md: float, s_cd: float) -> float:
    """High when the model agrees with itself but not with the CAM."""
    return (MAX_DIVERGENCE - min(max(s_md, 0.0), MAX_DIVERGENCE)) * s_cd


def gt_score(s_md: float, s_cd: float) -> float:
    """High when the model disagrees both with itself and with the CAM."""
    return s_md * s_cd


@dataclass(frozen=True)
class ScoreRecord:
    sample_id: int
    entropy: float
    model_div: float
    cam_div: float
    pseudo: float
    gt: float


def score_samples(
    ids,
    p_s: np.ndarray,
    p_c: np.ndarray,
    p_f: np.ndarray,
    cams: np.ndarray,
    full_binary: bool = False,
    use_model_div: bool = True,
    use_cam_div: bool = True,
    use_discrepancy: bool = True,
) -> list[ScoreRecord]:
    """Score every sample. The ``use_*`` switches replace a term by a constant (1) for ablations.

    Without the discrepancy decoders no model divergence exists, so it is held
    constant and the CAM divergence reduces to the standard prediction's
    distance to the CAM.
    """
    out = []
    for k, sid in enumerate(ids):
        s, c, f = p_s[k], p_c[k], p_f[k]
        entropy = prediction_entropy(s, full_binary)
        if use_discrepancy:
            s_md = model_divergence(s, c, f, full_binary)
            s_cd = cam_divergence(s, c, f, cams[k])
        else:
            s_md = 1.0
            s_cd = dice_distance(s, cams[k])
        if not use_model_div:
            s_md = 1.0
        if not use_cam_div:
            s_cd = 1.0
        out.append(ScoreRecord(int(sid), entropy, s_md, s_cd, pseudo_score(s_md, s_cd), gt_score(s_md, s_cd)))
    return out
