"""Synthetic capsule-endoscopy-like images with oracle bleeding masks.

Three classes are generated on a shared mucosa texture:

* NORMAL: low-frequency reddish texture with a random vignette.
* VASCULAR: texture plus 1-3 dark-red soft-edged blobs; the blob union is
  the oracle mask.
* INFLAMMATORY: texture plus pale, high-frequency patches; empty mask.

Every sample is a pure function of ``(seed, sample_id)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .autograd.ops import resize_bilinear
from .errors import ConfigError
from .netpbm import read_pgm, read_ppm, write_pgm, write_ppm
from .rng import stream

GENERATOR_VERSION = "synthgen-1"
BLOB_RADIUS = (0.08, 0.25)  # fraction of the image side
MASK_AREA = (0.01, 0.40)
EDGE_SOFTNESS_PX = 0.5  # sigmoid scale; transition spans about +-2 px


class ImageClass(IntEnum):
    NORMAL = 0
    VASCULAR = 1
    INFLAMMATORY = 2


@dataclass(frozen=True)
class SampleRecord:
    id: int
    image: np.ndarray  # H×W×3 in [0,1], quantized to 1/255 steps
    class_label: ImageClass
    oracle_mask: np.ndarray  # H×W bool


@dataclass
class DatasetManifest:
    seed: int
    image_size: int
    counts: dict[str, int]
    folds: dict[int, int] = field(default_factory=dict)
    version: str = GENERATOR_VERSION

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def class_of(self, sample_id: int) -> ImageClass:
        edge = 0
        for cls in ImageClass:
            edge += self.counts[cls.name]
            if sample_id < edge:
                return cls
        raise KeyError(f"sample id {sample_id} outside manifest of {self.total}")

    def to_json(self) -> str:
        payload = {
            "seed": self.seed,
            "image_size": self.image_size,
            "counts": self.counts,
            "folds": {str(k): v for k, v in sorted(self.folds.items())},
            "version": self.version,
        }
        return json.dumps(payload, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        raw = json.loads(text)
        return cls(
            seed=int(raw["seed"]),
            image_size=int(raw["image_size"]),
            counts={k: int(v) for k, v in raw["counts"].items()},
            folds={int(k): int(v) for k, v in raw.get("folds", {}).items()},
            version=raw.get("version", GENERATOR_VERSION),
        )


@dataclass
class Dataset:
    manifest: DatasetManifest
    samples: list[SampleRecord]

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, sample_id: int) -> SampleRecord:
        return self.samples[sample_id]

    @property
    def ids(self) -> np.ndarray:
        return np.array([s.id for s in self.samples])

    @property
    def labels(self) -> np.ndarray:
        return np.array([int(s.class_label) for s in self.samples])

    def images_nchw(self, ids=None) -> np.ndarray:
        chosen = self.samples if ids is None else [self.samples[i] for i in ids]
        return np.stack([s.image for s in chosen]).transpose(0, 3, 1, 2).copy()

    def masks(self, ids=None) -> np.ndarray:
        chosen = self.samples if ids is None else [self.samples[i] for i in ids]
        return np.stack([s.oracle_mask for s in chosen])


# ---------------------------------------------------------------- drawing

def _value_noise(rng: np.random.Generator, size: int, cells: int) -> np.ndarray:
    return resize_bilinear(rng.uniform(-1.0, 1.0, (cells + 1, cells + 1)), size, size)


def _mucosa(rng: np.random.Generator, size: int) -> np.ndarray:
    base = np.array([0.80, 0.46, 0.34]) + rng.uniform(-0.04, 0.04, 3)
    shade = 1.0 + 0.10 * _value_noise(rng, size, 3) + 0.06 * _value_noise(rng, size, 7)
    yy, xx = np.mgrid[0:size, 0:size]
    cx, cy = size / 2 + rng.uniform(-0.1, 0.1, 2) * size
    r = np.hypot(xx + 0.5 - cx, yy + 0.5 - cy) / (size / 2)
    vignette = 1.0 - rng.uniform(0.3, 0.8) * np.clip(r - 0.55, 0.0, None) ** 2
    img = base * (shade * np.clip(vignette, 0.25, 1.0))[..., None]
    return img + rng.normal(0.0, 0.012, (size, size, 3))


def _ellipse(rng: np.random.Generator, size: int, center: np.ndarray, radius_range=BLOB_RADIUS):
    """Return (inside-ness q, signed-distance proxy in px) for a random ellipse."""
    a, b = rng.uniform(*radius_range, 2) * size
    theta = rng.uniform(0.0, np.pi)
    yy, xx = np.mgrid[0:size, 0:size]
    dx, dy = xx + 0.5 - center[0], yy + 0.5 - center[1]
    u = (dx * np.cos(theta) + dy * np.sin(theta)) / a
    v = (-dx * np.sin(theta) + dy * np.cos(theta)) / b
    q = u * u + v * v
    return q, (1.0 - np.sqrt(q)) * min(a, b)


def _soft(dist: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * dist / EDGE_SOFTNESS_PX))


def _blobs(rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray, int]:
    """Alpha map, hard mask, and ellipse count for 1-3 blobs; area-constrained."""
    lo, hi = MASK_AREA[0] * size * size, MASK_AREA[1] * size * size
    while True:
        alpha = np.zeros((size, size))
        mask = np.zeros((size, size), dtype=bool)
        n_ellipses = 0
        for _ in range(rng.integers(1, 4)):
            center = rng.uniform(0.15, 0.85, 2) * size
            base = rng.uniform(0.75, 1.0)
            for _ in range(rng.integers(1, 3)):
                jitter = rng.normal(0.0, 0.05, 2) * size
                q, dist = _ellipse(rng, size, center + jitter)
                alpha = np.maximum(alpha, base * _soft(dist))
                mask |= q <= 1.0
                n_ellipses += 1
        if lo <= mask.sum() <= hi:
            return alpha, mask, n_ellipses


def _patches(rng: np.random.Generator, size: int) -> np.ndarray:
    alpha = np.zeros((size, size))
    grain = 0.5 + 0.5 * _value_noise(rng, size, max(size // 3, 4))
    for _ in range(rng.integers(1, 4)):
        center = rng.uniform(0.15, 0.85, 2) * size
        _, dist = _ellipse(rng, size, center, (0.06, 0.2))
        alpha = np.maximum(alpha, _soft(dist) * (0.35 + 0.55 * grain))
    return alpha


def generate_sample(sample_id: int, class_label: ImageClass, image_size: int, seed: int) -> SampleRecord:
    rng = stream(seed, "sample", sample_id)
    img = _mucosa(rng, image_size)
    mask = np.zeros((image_size, image_size), dtype=bool)
    if class_label == ImageClass.VASCULAR:
        alpha, mask, _ = _blobs(rng, image_size)
        blood = np.array([0.48, 0.07, 0.08]) * rng.uniform(0.85, 1.1)
        img = img * (1.0 - alpha[..., None]) + blood * alpha[..., None]
    elif class_label == ImageClass.INFLAMMATORY:
        alpha = _patches(rng, image_size)
        pale = np.array([0.96, 0.86, 0.74])
        img = img * (1.0 - alpha[..., None]) + pale * alpha[..., None]
    img = np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0
    return SampleRecord(sample_id, img, ImageClass(class_label), mask)


# ---------------------------------------------------------------- datasets

def _validate(image_size: int, counts) -> dict[str, int]:
    if image_size < 32:
        raise ConfigError(f"image_size must be >= 32, got {image_size}")
    if isinstance(counts, dict):
        counts = [counts.get(c.name, 0) for c in ImageClass]
    counts = [int(c) for c in counts]
    if len(counts) != 3 or any(c < 0 for c in counts) or sum(counts) < 1:
        raise ConfigError(f"counts must be three non-negative ints with a positive total, got {counts}")
    return {cls.name: n for cls, n in zip(ImageClass, counts)}


def generate_dataset(image_size: int = 64, counts=(600, 605, 607), seed: int = 7, folds: int = 5) -> Dataset:
    """Generate all samples and a stratified ``folds``-way split (skipped when too few samples)."""
    manifest = DatasetManifest(seed=seed, image_size=image_size, counts=_validate(image_size, counts))
    samples = [generate_sample(i, manifest.class_of(i), image_size, seed) for i in range(manifest.total)]
    if folds and manifest.total >= folds:
        manifest.folds = split_folds(manifest, folds, seed)
    return Dataset(manifest, samples)


def regenerate(manifest: DatasetManifest) -> Dataset:
    samples = [generate_sample(i, manifest.class_of(i), manifest.image_size, manifest.seed) for i in range(manifest.total)]
    return Dataset(manifest, samples)


def split_folds(manifest: DatasetManifest, k: int, seed: int) -> dict[int, int]:
    """Stratified k-fold assignment ``{sample_id: fold}``.

    Classes are shuffled independently and dealt round-robin with a running
    offset, so fold sizes differ by at most one overall and per class.
    """
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    if k > manifest.total:
        raise ConfigError(f"k={k} exceeds dataset size {manifest.total}")
    assignment: dict[int, int] = {}
    start = 0
    cursor = 0
    for cls in ImageClass:
        n = manifest.counts[cls.name]
        ids = np.arange(start, start + n)
        start += n
        for sid in stream(seed, "folds", int(cls)).permutation(ids):
            assignment[int(sid)] = cursor % k
            cursor += 1
    return dict(sorted(assignment.items()))


def fold_ids(manifest: DatasetManifest, fold: int) -> tuple[np.ndarray, np.ndarray]:
    """(train ids, test ids) for one held-out fold."""
    ids = np.array(sorted(manifest.folds))
    f = np.array([manifest.folds[i] for i in ids])
    return ids[f != fold], ids[f == fold]


def save_dataset(dataset: Dataset, out_dir: str | Path) -> None:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    for s in dataset.samples:
        write_ppm(out / "images" / f"{s.id:05d}.ppm", s.image)
        write_pgm(out / "masks" / f"{s.id:05d}.pgm", s.oracle_mask)
    (out / "manifest.json").write_text(dataset.manifest.to_json() + "\n")


def load_dataset(data_dir: str | Path) -> Dataset:
    root = Path(data_dir)
    manifest = DatasetManifest.from_json((root / "manifest.json").read_text())
    samples = []
    for i in range(manifest.total):
        samples.append(
            SampleRecord(
                i,
                read_ppm(root / "images" / f"{i:05d}.ppm"),
                manifest.class_of(i),
                read_pgm(root / "masks" / f"{i:05d}.pgm"),
            )
        )
    return Dataset(manifest, samples)
