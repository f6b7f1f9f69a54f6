"""Fully connected binary CRF refinement by naive mean-field inference.

Pairwise kernel (pixels i != j, positions p, colors I):

    k(i, j) = w1 exp(-|p_i-p_j|^2 / 2 theta_a^2 - |I_i-I_j|^2 / 2 theta_b^2)
            + w2 exp(-|p_i-p_j|^2 / 2 theta_g^2)

with a Potts label compatibility. Each kernel is symmetrically normalized
(D^-1/2 K D^-1/2), which keeps message magnitudes independent of image size.
The full N x N matrix is materialized, so this is meant for small images.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..autograd import DimensionError
from ..errors import ConfigError

PROB_CLAMP = 1e-6


@dataclass(frozen=True)
class CrfParams:
    appearance_weight: float = 5.0
    appearance_xy: float = 20.0  # px
    appearance_rgb: float = 0.1  # color units in [0, 1]
    smoothness_weight: float = 3.0
    smoothness_xy: float = 3.0  # px
    iterations: int = 5

    def __post_init__(self):
        if min(self.appearance_xy, self.appearance_rgb, self.smoothness_xy) <= 0:
            raise ConfigError("CRF bandwidths must be positive")
        if self.appearance_weight < 0 or self.smoothness_weight < 0:
            raise ConfigError("CRF kernel weights must be non-negative")
        if self.iterations < 1:
            raise ConfigError(f"CRF iterations must be >= 1, got {self.iterations}")


def _sq_dists(points: np.ndarray) -> np.ndarray:
    sq = np.einsum("nd,nd->n", points, points)
    d = points @ points.T
    d *= -2.0
    d += sq[:, None]
    d += sq[None, :]
    return np.maximum(d, 0.0, out=d)


def _normalized(kernel: np.ndarray) -> np.ndarray:
    np.fill_diagonal(kernel, 0.0)
    deg = kernel.sum(axis=1, dtype=np.float64)
    inv = np.divide(1.0, np.sqrt(deg), out=np.zeros_like(deg), where=deg > 0).astype(kernel.dtype)
    kernel *= inv[:, None]
    kernel *= inv[None, :]
    return kernel


@lru_cache(maxsize=4)
def _position_terms(h: int, w: int, appearance_xy: float, smoothness_xy: float) -> tuple[np.ndarray, np.ndarray]:
    """(-|dp|^2 / 2 theta_a^2, normalized smoothness kernel); both image-independent."""
    yy, xx = np.mgrid[0:h, 0:w]
    pos = _sq_dists(np.stack([yy.ravel(), xx.ravel()], axis=1).astype(np.float64))
    appearance = (-pos / (2 * appearance_xy**2)).astype(np.float32)
    smooth = _normalized(np.exp(-pos / (2 * smoothness_xy**2)).astype(np.float32))
    appearance.flags.writeable = False
    smooth.flags.writeable = False
    return appearance, smooth


def pairwise_kernel(image: np.ndarray, params: CrfParams) -> np.ndarray:
    """Weighted sum of both normalized kernels, shape (H*W, H*W), float32."""
    h, w = image.shape[:2]
    app_pos, k_smooth = _position_terms(h, w, params.appearance_xy, params.smoothness_xy)
    colors = image.reshape(h * w, -1).astype(np.float32)
    k = _sq_dists(colors)
    k *= np.float32(-1.0 / (2 * params.appearance_rgb**2))
    k += app_pos
    np.exp(k, out=k)
    k = _normalized(k)
    k *= np.float32(params.appearance_weight)
    k += np.float32(params.smoothness_weight) * k_smooth
    return k


def _softmax(energy: np.ndarray) -> np.ndarray:
    z = -energy
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def crf_refine(image: np.ndarray, prob_map: np.ndarray, params: CrfParams | None = None, history: list | None = None) -> np.ndarray:
    """Refined foreground probability map (H, W).

    ``image`` is H×W×3 in [0,1]. When ``history`` is a list, the per-pixel
    (background, foreground) distribution after each iteration is appended.
    """
    params = params or CrfParams()
    image = np.asarray(image, dtype=np.float64)
    prob_map = np.asarray(prob_map, dtype=np.float64)
    if image.ndim != 3 or prob_map.shape != image.shape[:2]:
        raise DimensionError(f"image {image.shape} and prob_map {prob_map.shape} differ in spatial size")
    h, w = prob_map.shape
    p = np.clip(prob_map.ravel(), PROB_CLAMP, 1.0 - PROB_CLAMP)
    unary = -np.log(np.stack([1.0 - p, p], axis=1))
    kernel = pairwise_kernel(image, params)
    q = _softmax(unary)
    for _ in range(params.iterations):
        message = (kernel @ q.astype(np.float32)).astype(np.float64)
        # Potts: a label pays for the mass neighbours put on the other label
        energy = unary + message[:, ::-1]
        q = _softmax(energy)
        if history is not None:
            history.append(q.copy())
    return q[:, 1].reshape(h, w)
