"""Ground-truth selection strategies other than the discrepancy-based one."""
from __future__ import annotations

import logging
from enum import Enum

import numpy as np

from ..campus import binarize, dice_distance, prediction_entropy

log = logging.getLogger(__name__)


class Strategy(str, Enum):
    RANDOM = "random"
    DICE_NAIVE = "dice"
    ENTROPY = "entropy"
    CORESET_GREEDY = "coreset"
    DEAL = "deal"
    DEAL_NO_PSEUDO = "deal_no_pseudo"

    @property
    def uses_discrepancy(self) -> bool:
        return self in (Strategy.DEAL, Strategy.DEAL_NO_PSEUDO)

    @property
    def selects_pseudo(self) -> bool:
        return self is Strategy.DEAL


def _clip_budget(k: int, pool: int) -> int:
    if k > pool:
        log.warning("requested %d ground-truth labels but only %d candidates remain", k, pool)
    return min(k, pool)


def _top_k(ids: np.ndarray, scores: np.ndarray, k: int) -> list[int]:
    order = np.lexsort((ids, -scores))
    return sorted(int(i) for i in ids[order[:k]])


def select_random(pool_ids, k: int, rng: np.random.Generator) -> list[int]:
    pool = np.asarray(sorted(pool_ids))
    k = _clip_budget(k, len(pool))
    return sorted(int(i) for i in rng.choice(pool, size=k, replace=False))


def select_dice_naive(pool_ids, p_s: np.ndarray, cams: np.ndarray, k: int) -> list[int]:
    """Largest Dice distance between the binarized prediction and the standard CAM."""
    pool = np.asarray(pool_ids)
    k = _clip_budget(k, len(pool))
    scores = np.array([dice_distance(binarize(p), c) for p, c in zip(p_s, cams)])
    return _top_k(pool, scores, k)


def select_entropy(pool_ids, p_s: np.ndarray, k: int, full_binary: bool = False) -> list[int]:
    pool = np.asarray(pool_ids)
    k = _clip_budget(k, len(pool))
    scores = np.array([prediction_entropy(p, full_binary) for p in p_s])
    return _top_k(pool, scores, k)


def k_center_greedy(features: np.ndarray, centers: np.ndarray, k: int) -> list[int]:
    """Indices into ``features`` chosen greedily to maximize the min distance to the centers."""
    features = np.asarray(features, dtype=np.float64)
    chosen: list[int] = []
    if len(centers):
        diff = features[:, None, :] - np.asarray(centers, dtype=np.float64)[None, :, :]
        dmin = np.sqrt((diff**2).sum(-1)).min(axis=1)
    else:
        dmin = np.full(len(features), np.inf)
    for _ in range(min(k, len(features))):
        # with no centers every distance is infinite and argmax takes the first point
        i = int(np.argmax(dmin))
        chosen.append(i)
        dmin = np.minimum(dmin, np.sqrt(((features - features[i]) ** 2).sum(-1)))
        dmin[i] = -np.inf
    return chosen


def select_coreset(pool_ids, pool_features: np.ndarray, labeled_features: np.ndarray, k: int, rng: np.random.Generator, first_cycle: bool) -> list[int]:
    """k-center greedy over encoder features; in the first cycle half the budget is drawn at random."""
    pool = np.asarray(pool_ids)
    k = _clip_budget(k, len(pool))
    centers = np.asarray(labeled_features).reshape(len(labeled_features), -1) if len(labeled_features) else np.zeros((0, pool_features.shape[1]))
    picked: list[int] = []
    if first_cycle:
        n_rand = k // 2
        picked = sorted(rng.choice(len(pool), size=n_rand, replace=False).tolist())
        centers = np.concatenate([centers, pool_features[picked]]) if n_rand else centers
    rest = np.setdiff1d(np.arange(len(pool)), picked)
    greedy = k_center_greedy(pool_features[rest], centers, k - len(picked))
    return sorted(int(pool[i]) for i in picked + [int(rest[j]) for j in greedy])
