"""Batch CAM generation, persistence, and nesting audit."""
from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from ..errors import MissingArtifactError
from ..netpbm import read_pgm, write_pgm
from ..synthgen import Dataset, ImageClass
from .classifier import Classifier
from .crf import CrfParams, crf_refine
from .gradcam import grad_cam_batch
from .thresholds import CamThresholds, CamTriple, threshold_cams

log = logging.getLogger(__name__)


def generate_cams(
    classifier: Classifier,
    dataset: Dataset,
    ids,
    thresholds: CamThresholds | None = None,
    crf: CrfParams | None = None,
    use_crf: bool = True,
    batch_size: int = 64,
) -> dict[int, CamTriple]:
    """CAM triples for ``ids``; only VASCULAR-predicted images get non-empty masks."""
    thresholds = thresholds or CamThresholds()
    ids = [int(i) for i in ids]
    out: dict[int, CamTriple] = {}
    for lo in range(0, len(ids), batch_size):
        chunk = ids[lo : lo + batch_size]
        images = dataset.images_nchw(chunk)
        predicted = classifier.predict(images)
        heatmaps = grad_cam_batch(classifier, images, int(ImageClass.VASCULAR))
        for sid, cls, heat in zip(chunk, predicted, heatmaps):
            refined = None
            if use_crf and cls == ImageClass.VASCULAR:
                refined = crf_refine(dataset[sid].image, heat, crf)
            out[sid] = threshold_cams(heat, refined, thresholds, ImageClass(int(cls)), sid)
    n_vasc = sum(t.predicted_class == ImageClass.VASCULAR for t in out.values())
    log.info("generated %d CAM triples (%d predicted VASCULAR)", len(out), n_vasc)
    return out


def audit_nesting(triples: dict[int, CamTriple]) -> list[int]:
    """Ids whose masks break fine ⊆ standard ⊆ coarse."""
    bad = []
    for sid, t in sorted(triples.items()):
        if np.any(t.fine & ~t.standard) or np.any(t.standard & ~t.coarse):
            bad.append(sid)
    return bad


def save_cams(triples: dict[int, CamTriple], out_dir: str | Path) -> None:
    out = Path(out_dir)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    index = {}
    ids = sorted(triples)
    for sid in ids:
        t = triples[sid]
        paths = {}
        for kind, mask in zip(("standard", "coarse", "fine"), t.masks()):
            rel = f"masks/{sid:05d}_{kind}.pgm"
            write_pgm(out / rel, mask)
            paths[kind] = rel
        index[str(sid)] = {
            "predicted_class": t.predicted_class.name,
            "heatmap_max": float(t.heatmap.max()),
            "refined": t.refined is not None,
            "masks": paths,
        }
    heat = np.stack([triples[s].heatmap for s in ids]) if ids else np.zeros((0, 0, 0))
    refined = np.stack([triples[s].refined if triples[s].refined is not None else np.full_like(triples[s].heatmap, np.nan) for s in ids]) if ids else heat
    np.savez_compressed(out / "maps.npz", ids=np.array(ids, dtype=np.int64), heatmaps=heat, refined=refined)
    (out / "index.json").write_text(json.dumps(index, indent=1, sort_keys=True) + "\n")


def load_cams(cam_dir: str | Path) -> dict[int, CamTriple]:
    root = Path(cam_dir)
    if not (root / "index.json").exists():
        raise MissingArtifactError(f"no CAM index at {root / 'index.json'}")
    index = json.loads((root / "index.json").read_text())
    with np.load(root / "maps.npz") as maps:
        ids, heat, refined = maps["ids"], maps["heatmaps"], maps["refined"]
    pos = {int(s): i for i, s in enumerate(ids)}
    out = {}
    for key, entry in index.items():
        sid = int(key)
        masks = [read_pgm(root / entry["masks"][k]) for k in ("standard", "coarse", "fine")]
        ref = refined[pos[sid]] if entry["refined"] else None
        out[sid] = CamTriple(sid, *masks, heat[pos[sid]], ref, ImageClass[entry["predicted_class"]])
    return dict(sorted(out.items()))
