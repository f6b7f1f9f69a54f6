"""Shared encoder with three structurally identical decoders (standard, coarse, fine)."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..autograd import ContractError, DimensionError, Tensor, load_checkpoint, no_grad, ops, save_checkpoint
from ..cam.classifier import kaiming_uniform
from ..rng import stream

DECODERS = ("s", "c", "f")


@dataclass
class PredictionTriple:
    """Foreground probabilities (N, H, W) from the three decoders."""

    standard: np.ndarray
    coarse: np.ndarray
    fine: np.ndarray
    ids: np.ndarray | None = None

    def __iter__(self):
        return iter((self.standard, self.coarse, self.fine))


@dataclass
class Skips:
    """Encoder outputs at 1/2, 1/4 and 1/4 resolution (the last one dilated)."""

    half: Tensor
    quarter: Tensor
    bottleneck: Tensor

    def detached(self) -> "Skips":
        return Skips(Tensor(self.half.data), Tensor(self.quarter.data), Tensor(self.bottleneck.data))

    def take(self, idx) -> "Skips":
        return Skips(Tensor(self.half.data[idx]), Tensor(self.quarter.data[idx]), Tensor(self.bottleneck.data[idx]))


def _conv_param(rng, c_out: int, c_in: int, k: int, name: str) -> dict[str, Tensor]:
    return {
        f"{name}.w": Tensor(kaiming_uniform(rng, (c_out, c_in, k, k)), requires_grad=True, name=f"{name}.w"),
        f"{name}.b": Tensor(np.zeros(c_out), requires_grad=True, name=f"{name}.b"),
    }


@dataclass
class DiscrepancyModel:
    """U-Net style segmenter.

    Encoder: stride-2 conv (1/2), max-pool + conv (1/4), dilated conv (1/4).
    Decoder: conv over [bottleneck, 1/4 skip]; upsample + conv over [.., 1/2 skip];
    conv at 1/2; 1x1 head, bilinear upsampling of the logits, sigmoid.
    """

    encoder_channels: tuple[int, int, int] = (4, 8, 8)
    decoder_channels: tuple[int, int, int] = (8, 8, 4)
    image_size: int = 64
    encoder: dict[str, Tensor] = field(default_factory=dict)
    decoders: dict[str, dict[str, Tensor]] = field(default_factory=dict)
    duplicated: bool = False
    discrepancy_rounds: int = 0

    @classmethod
    def init(cls, seed: int, encoder_channels=(4, 8, 8), decoder_channels=(8, 8, 4), image_size: int = 64):
        if image_size % 4:
            raise DimensionError(f"image size must be divisible by 4, got {image_size}")
        rng = stream(seed, "segmodel-init")
        e1, e2, e3 = encoder_channels
        enc = {}
        enc.update(_conv_param(rng, e1, 3, 3, "enc1"))
        enc.update(_conv_param(rng, e2, e1, 3, "enc2"))
        enc.update(_conv_param(rng, e3, e2, 3, "enc3"))
        decoders = {}
        for key in DECODERS:
            d1, d2, d3 = decoder_channels
            dec = {}
            dec.update(_conv_param(rng, d1, e3 + e2, 3, "dec1"))
            dec.update(_conv_param(rng, d2, d1 + e1, 3, "dec2"))
            dec.update(_conv_param(rng, d3, d2, 3, "dec3"))
            dec["head.w"] = Tensor(np.zeros((1, d3, 1, 1)), requires_grad=True, name="head.w")
            dec["head.b"] = Tensor(np.zeros(1), requires_grad=True, name="head.b")
            decoders[key] = dec
        return cls(tuple(encoder_channels), tuple(decoder_channels), image_size, enc, decoders)

    # ------------------------------------------------------------ forward

    def encode(self, x: Tensor) -> Skips:
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2:] != (self.image_size, self.image_size):
            raise DimensionError(f"expected (N, 3, {self.image_size}, {self.image_size}) input, got {x.shape}")
        p = self.encoder
        half = ops.relu(ops.conv2d(x, p["enc1.w"], p["enc1.b"], stride=2, padding=1))
        quarter = ops.relu(ops.conv2d(ops.max_pool2d(half), p["enc2.w"], p["enc2.b"], padding=1))
        bottleneck = ops.relu(ops.conv2d(quarter, p["enc3.w"], p["enc3.b"], padding=2, dilation=2))
        return Skips(half, quarter, bottleneck)

    def decode(self, which: str, skips: Skips) -> Tensor:
        """Foreground probabilities (N, H, W) from decoder ``which``."""
        p = self.decoders[which]
        h = ops.relu(ops.conv2d(ops.concat([skips.bottleneck, skips.quarter]), p["dec1.w"], p["dec1.b"], padding=1))
        h = ops.concat([ops.upsample_nearest(h, 2), skips.half])
        h = ops.relu(ops.conv2d(h, p["dec2.w"], p["dec2.b"], padding=1))
        h = ops.relu(ops.conv2d(h, p["dec3.w"], p["dec3.b"], padding=1))
        # logits at half resolution, bilinearly upsampled to the input size
        logits = ops.upsample_bilinear(ops.conv2d(h, p["head.w"], p["head.b"]), self.image_size, self.image_size)
        n = logits.shape[0]
        return ops.reshape(ops.sigmoid(logits), (n, self.image_size, self.image_size))

    def forward(self, images: np.ndarray, batch_size: int = 64, ids=None) -> PredictionTriple:
        """All three predictions for ``images`` (N, 3, H, W), without recording a graph."""
        outs = {k: [] for k in DECODERS}
        with no_grad():
            for lo in range(0, len(images), batch_size):
                skips = self.encode(Tensor(images[lo : lo + batch_size]))
                for k in DECODERS:
                    outs[k].append(self.decode(k, skips).data)
        cat = {k: np.concatenate(v) if v else np.zeros((0, self.image_size, self.image_size)) for k, v in outs.items()}
        return PredictionTriple(cat["s"], cat["c"], cat["f"], None if ids is None else np.asarray(ids))

    def predict_standard(self, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
        out = []
        with no_grad():
            for lo in range(0, len(images), batch_size):
                out.append(self.decode("s", self.encode(Tensor(images[lo : lo + batch_size]))).data)
        return np.concatenate(out) if out else np.zeros((0, self.image_size, self.image_size))

    # ------------------------------------------------------------ parameters

    def parameters(self, *groups: str) -> list[Tensor]:
        """Parameters of the named groups: 'encoder', 's', 'c', 'f'."""
        out: list[Tensor] = []
        for g in groups:
            src = self.encoder if g == "encoder" else self.decoders[g]
            out.extend(src[k] for k in sorted(src))
        return out

    def duplicate_decoders(self) -> "DiscrepancyModel":
        """Copy the standard decoder's weights into the coarse and fine decoders (deep copy)."""
        for key in ("c", "f"):
            for name, t in self.decoders["s"].items():
                self.decoders[key][name] = Tensor(t.data.copy(), requires_grad=True, name=name)
        self.duplicated = True
        self.discrepancy_rounds = 0
        return self

    def require_duplicated(self) -> None:
        if not self.duplicated:
            raise ContractError("discrepancy training requires duplicate_decoders() after step 1")

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {f"encoder/{k}": v.data.copy() for k, v in self.encoder.items()}
        for key, dec in self.decoders.items():
            state.update({f"decoder_{key}/{k}": v.data.copy() for k, v in dec.items()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for full, value in state.items():
            group, name = full.split("/", 1)
            target = self.encoder if group == "encoder" else self.decoders[group.removeprefix("decoder_")]
            if target[name].shape != value.shape:
                raise DimensionError(f"{full}: checkpoint shape {value.shape} != model {target[name].shape}")
            target[name].data = np.array(value, dtype=np.float64)

    def save(self, path: str | Path) -> None:
        save_checkpoint(path, self.state_dict())

    def load(self, path: str | Path) -> "DiscrepancyModel":
        self.load_state_dict(load_checkpoint(path))
        return self

    def clone(self) -> "DiscrepancyModel":
        twin = DiscrepancyModel.init(0, self.encoder_channels, self.decoder_channels, self.image_size)
        twin.load_state_dict(self.state_dict())
        twin.duplicated = self.duplicated
        twin.discrepancy_rounds = self.discrepancy_rounds
        return twin

    def embed(self, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
        """Global-average-pooled bottleneck features (N, C)."""
        out = []
        with no_grad():
            for lo in range(0, len(images), batch_size):
                out.append(self.encode(Tensor(images[lo : lo + batch_size])).bottleneck.data.mean(axis=(2, 3)))
        return np.concatenate(out) if out else np.zeros((0, self.encoder_channels[-1]))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.state_dict().values())
