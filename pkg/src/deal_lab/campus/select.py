"""Pseudo-label and ground-truth selection from score records."""
from __future__ import annotations

import csv
import logging
from enum import Enum
from pathlib import Path

import numpy as np

from .knee import NO_KNEE, knee_locate
from .scores import ScoreRecord

log = logging.getLogger(__name__)


class Decision(str, Enum):
    KEEP_CAM = "KEEP_CAM"
    PSEUDO = "PSEUDO"
    GT = "GT"


def select_pseudo(records: list[ScoreRecord], sensitivity: float = 1.0) -> tuple[list[int], int]:
    """Ids whose pseudo score lies strictly above the knee of the sorted curve, plus the knee index.

    Zero scores (prediction and CAM agree) are never selected and are left
    out of the curve, so the knee is not pinned to the end of that plateau.
    No knee (or fewer than five candidates) selects nothing.
    """
    candidates = [r for r in records if r.pseudo > 0]
    if not candidates:
        return [], NO_KNEE
    scores = np.array([r.pseudo for r in candidates])
    ids = np.array([r.sample_id for r in candidates])
    order = np.lexsort((ids, scores))
    knee = knee_locate(scores[order], sensitivity)
    if knee == NO_KNEE:
        return [], NO_KNEE
    cut = scores[order][knee]
    return sorted(int(i) for i in ids[scores > cut]), knee


def select_ground_truth(records: list[ScoreRecord], k: int, exclude=()) -> list[int]:
    """The ``k`` largest ground-truth scores outside ``exclude``; ties go to the lower id."""
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    skip = set(int(i) for i in exclude)
    pool = [r for r in records if r.sample_id not in skip]
    if k > len(pool):
        log.warning("requested %d ground-truth labels but only %d candidates remain", k, len(pool))
    ranked = sorted(pool, key=lambda r: (-r.gt, r.sample_id))
    return [r.sample_id for r in ranked[:k]]


SCORE_FIELDS = ("sample_id", "S_e", "S_md", "S_cd", "S_p", "S_g", "decision")


def write_scores(records: list[ScoreRecord], decisions: dict[int, Decision], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SCORE_FIELDS)
        for r in sorted(records, key=lambda r: r.sample_id):
            d = decisions.get(r.sample_id, Decision.KEEP_CAM)
            w.writerow([r.sample_id, *(f"{v:.10g}" for v in (r.entropy, r.model_div, r.cam_div, r.pseudo, r.gt)), d.value])
