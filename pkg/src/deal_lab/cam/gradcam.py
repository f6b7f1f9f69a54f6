"""Grad-CAM heatmaps from any model exposing ``features`` and ``head``."""
from __future__ import annotations

from typing import Protocol

import numpy as np

from ..autograd import Tensor, backward, no_grad, ops
from ..errors import NumericError


class CamModel(Protocol):
    def features(self, x: Tensor) -> Tensor: ...

    def head(self, a: Tensor) -> Tensor: ...


def _as_batch(images: np.ndarray) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
    if images.shape[-1] == 3 and images.shape[1] != 3:
        images = images.transpose(0, 3, 1, 2)
    return images


def channel_weights(model: CamModel, images: np.ndarray, target_class) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel weights alpha (N, C) and feature maps A (N, C, h, w).

    alpha_i is the spatial mean of dS_c/dA^i over the final feature map.
    """
    x = _as_batch(images)
    with no_grad():
        feats = model.features(Tensor(x)).data
    a = Tensor(feats.copy(), requires_grad=True)
    scores = model.head(a)
    targets = np.broadcast_to(np.asarray(target_class), (len(x),))
    select = np.zeros(scores.shape)
    select[np.arange(len(x)), targets] = 1.0
    # samples are independent, so one backward over the summed scores yields per-sample grads
    backward(ops.sum(scores * Tensor(select)))
    grads = a.grad
    if not np.all(np.isfinite(grads)) or not np.all(np.isfinite(feats)):
        raise NumericError("non-finite Grad-CAM gradients or features")
    return grads.mean(axis=(2, 3)), feats


def raw_cam(model: CamModel, images: np.ndarray, target_class) -> np.ndarray:
    """ReLU(sum_i alpha_i A^i) at feature resolution, shape (N, h, w)."""
    alpha, feats = channel_weights(model, images, target_class)
    return np.maximum(np.einsum("nc,nchw->nhw", alpha, feats), 0.0)


def normalize_heatmap(cam: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear upsample then divide by the max; an all-zero map stays zero."""
    up = np.maximum(ops.resize_bilinear(cam, height, width), 0.0)
    peak = up.max(axis=(-2, -1), keepdims=True)
    return np.divide(up, peak, out=np.zeros_like(up), where=peak > 0)


def grad_cam(model: CamModel, image: np.ndarray, target_class: int) -> np.ndarray:
    """Heatmap in [0, 1] at the image's resolution for one image."""
    batch = _as_batch(image)
    return grad_cam_batch(model, batch, target_class)[0]


def grad_cam_batch(model: CamModel, images: np.ndarray, target_class) -> np.ndarray:
    batch = _as_batch(images)
    cam = raw_cam(model, batch, target_class)
    return normalize_heatmap(cam, batch.shape[2], batch.shape[3])
