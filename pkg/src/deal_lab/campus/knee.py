"""Offline Kneedle knee detection on increasing score curves."""
from __future__ import annotations

import numpy as np

NO_KNEE = -1
MIN_POINTS = 5


def _curvature(y: np.ndarray) -> str | None:
    """'convex', 'concave', or None for (near-)linear curves, judged by the chord."""
    x = np.linspace(0.0, 1.0, len(y))
    chord = y[0] + (y[-1] - y[0]) * x
    area = float(np.mean(y - chord))
    if abs(area) <= 1e-12 * max(1.0, abs(y[-1] - y[0])):
        return None
    return "convex" if area < 0 else "concave"


def knee_locate(scores, sensitivity: float = 1.0, curve: str | None = None) -> int:
    """Index of the knee of an increasing curve, or ``NO_KNEE``.

    x is the rank, y the score; both are scaled to [0, 1]. The difference
    curve is x - y for convex data and y - x for concave data. Its global
    maximum is the knee candidate; it is accepted when the difference later
    falls below ``max - sensitivity * mean(dx)``.
    """
    y = np.asarray(scores, dtype=np.float64)
    if y.ndim != 1 or len(y) < MIN_POINTS or not np.all(np.isfinite(y)):
        return NO_KNEE
    if np.any(np.diff(y) < 0):
        raise ValueError("knee_locate expects scores sorted in increasing order")
    span = y[-1] - y[0]
    if span <= 0:
        return NO_KNEE
    yn = (y - y[0]) / span
    xn = np.linspace(0.0, 1.0, len(y))
    shape = curve or _curvature(yn)
    if shape is None:
        return NO_KNEE
    diff = xn - yn if shape == "convex" else yn - xn
    i = int(np.argmax(diff))
    threshold = diff[i] - sensitivity * float(np.mean(np.diff(xn)))
    if i == 0 or not np.any(diff[i + 1 :] < threshold):
        return NO_KNEE
    return i
