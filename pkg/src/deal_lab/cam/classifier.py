"""Small dilated CNN image classifier used as the CAM source."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..autograd import Adam, Tensor, backward, no_grad, ops
from ..rng import stream
from ..errors import ConfigError, NumericError
from ..synthgen import Dataset, ImageClass

log = logging.getLogger(__name__)

N_CLASSES = len(ImageClass)


def kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, shape)


@dataclass
class Classifier:
    """Four conv blocks (the last dilated, unpooled), global average pool, linear head."""

    channels: tuple[int, ...] = (8, 16, 16, 16)
    dropout: float = 0.1
    params: dict[str, Tensor] = field(default_factory=dict)

    @classmethod
    def init(cls, seed: int, channels=(8, 16, 16, 16), dropout: float = 0.1) -> "Classifier":
        rng = stream(seed, "classifier-init")
        params: dict[str, Tensor] = {}
        c_in = 3
        for i, c_out in enumerate(channels):
            params[f"block{i}.w"] = Tensor(kaiming_uniform(rng, (c_out, c_in, 3, 3)), requires_grad=True, name=f"block{i}.w")
            params[f"block{i}.b"] = Tensor(np.zeros(c_out), requires_grad=True, name=f"block{i}.b")
            c_in = c_out
        params["head.w"] = Tensor(kaiming_uniform(rng, (N_CLASSES, c_in)).T.copy(), requires_grad=True, name="head.w")
        params["head.b"] = Tensor(np.zeros(N_CLASSES), requires_grad=True, name="head.b")
        return cls(tuple(channels), dropout, params)

    def features(self, x: Tensor, drop_rng: np.random.Generator | None = None) -> Tensor:
        """Final feature maps A (N, C, h, w); channel dropout only when ``drop_rng`` is given."""
        h = x
        last = len(self.channels) - 1
        for i in range(len(self.channels)):
            w, b = self.params[f"block{i}.w"], self.params[f"block{i}.b"]
            if i < last:
                h = ops.max_pool2d(ops.relu(ops.conv2d(h, w, b, padding=1)))
            else:
                # dilation instead of a further stride keeps the map at 1/8 resolution
                h = ops.relu(ops.conv2d(h, w, b, padding=2, dilation=2))
        if drop_rng is not None and self.dropout > 0:
            keep = drop_rng.random((h.shape[0], h.shape[1], 1, 1)) >= self.dropout
            h = h * Tensor(keep / (1.0 - self.dropout))
        return h

    def head(self, a: Tensor) -> Tensor:
        """Class scores S_c from feature maps."""
        return ops.global_avg_pool(a) @ self.params["head.w"] + self.params["head.b"]

    def __call__(self, x: Tensor) -> Tensor:
        return self.head(self.features(x))

    def predict(self, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
        out = []
        with no_grad():
            for lo in range(0, len(images), batch_size):
                out.append(self(Tensor(images[lo : lo + batch_size])).data)
        return np.concatenate(out).argmax(axis=1)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, v in state.items():
            self.params[k].data = np.array(v, dtype=np.float64)

    def check_finite(self) -> None:
        for name, p in self.params.items():
            if not np.all(np.isfinite(p.data)):
                raise NumericError(f"non-finite values in classifier parameter {name}")


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    onehot = np.eye(logits.shape[1])[labels]
    return -ops.sum(ops.log_softmax(logits, axis=1) * Tensor(onehot)) / float(len(labels))


def _augment(batch: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    out = batch.copy()
    hflip = rng.random(len(batch)) < 0.5
    vflip = rng.random(len(batch)) < 0.5
    out[hflip] = out[hflip][:, :, :, ::-1]
    out[vflip] = out[vflip][:, :, ::-1, :]
    return out


def train_classifier(
    dataset: Dataset,
    epochs: int = 30,
    lr: float = 0.003,
    seed: int = 0,
    ids=None,
    batch_size: int = 32,
    channels=(8, 16, 16, 16),
    dropout: float = 0.1,
) -> tuple[Classifier, float]:
    """Cross-entropy training with flip augmentation; returns (model, training accuracy)."""
    ids = np.asarray(dataset.ids if ids is None else ids)
    labels = dataset.labels[ids]
    if len(np.unique(labels)) < N_CLASSES:
        raise ConfigError("classifier training needs samples from all three classes")
    images = dataset.images_nchw(ids)
    model = Classifier.init(seed, channels, dropout)
    params = list(model.params.values())
    opt = Adam(params, lr=lr)
    for epoch in range(epochs):
        rng = stream(seed, "classifier-epoch", epoch)
        order = rng.permutation(len(ids))
        total = 0.0
        for lo in range(0, len(order), batch_size):
            idx = order[lo : lo + batch_size]
            x = Tensor(_augment(images[idx], rng))
            loss = cross_entropy(model.head(model.features(x, drop_rng=rng)), labels[idx])
            opt.zero_grad()
            backward(loss)
            opt.step()
            total += loss.item() * len(idx)
        log.debug("classifier epoch %d loss %.4f", epoch, total / len(ids))
    model.check_finite()
    accuracy = float(np.mean(model.predict(images) == labels))
    log.info("classifier training accuracy %.4f after %d epochs", accuracy, epochs)
    return model, accuracy
