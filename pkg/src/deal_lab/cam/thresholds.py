"""Multi-threshold standard / coarse / fine CAM masks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..synthgen import ImageClass


@dataclass(frozen=True)
class CamThresholds:
    standard: float = 0.8
    coarse: float = 0.75
    fine: float = 0.85

    def __post_init__(self):
        if not all(0.0 < t < 1.0 for t in (self.standard, self.coarse, self.fine)):
            raise ConfigError(f"CAM thresholds must lie in (0, 1): {self}")
        if not self.coarse < self.standard < self.fine:
            raise ConfigError(f"CAM thresholds need coarse < standard < fine: {self}")


@dataclass
class CamTriple:
    sample_id: int
    standard: np.ndarray
    coarse: np.ndarray
    fine: np.ndarray
    heatmap: np.ndarray
    refined: np.ndarray | None = None
    predicted_class: ImageClass = ImageClass.VASCULAR

    def masks(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.standard, self.coarse, self.fine


def threshold_cams(
    heatmap: np.ndarray,
    refined_map: np.ndarray | None = None,
    thresholds: CamThresholds | None = None,
    predicted_class: ImageClass = ImageClass.VASCULAR,
    sample_id: int = -1,
) -> CamTriple:
    """Cut the (refined, if given) map at the three thresholds; a pixel is foreground when >= t.

    Images not classified as VASCULAR get an all-empty triple.
    """
    t = thresholds or CamThresholds()
    heatmap = np.asarray(heatmap, dtype=np.float64)
    source = heatmap if refined_map is None else np.asarray(refined_map, dtype=np.float64)
    if predicted_class != ImageClass.VASCULAR:
        empty = np.zeros(source.shape, dtype=bool)
        return CamTriple(sample_id, empty, empty.copy(), empty.copy(), heatmap, refined_map, ImageClass(predicted_class))
    return CamTriple(
        sample_id,
        source >= t.standard,
        source >= t.coarse,
        source >= t.fine,
        heatmap,
        refined_map,
        ImageClass(predicted_class),
    )
