"""Per-sample label bookkeeping and the simulated annotator."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from ..autograd import ContractError
from ..cam import CamTriple
from ..synthgen import Dataset


class Source(str, Enum):
    CAM = "CAM"
    PSEUDO = "PSEUDO"
    GT = "GT"


ALLOWED = {
    (Source.CAM, Source.PSEUDO),
    (Source.CAM, Source.GT),
    (Source.PSEUDO, Source.GT),
}


@dataclass
class LabelRecord:
    sample_id: int
    source: Source
    mask: np.ndarray
    cycle_assigned: int


class LabelStore:
    """Current label of every training sample; starts all-CAM."""

    def __init__(self, cams: dict[int, CamTriple], ids=None):
        ids = sorted(cams) if ids is None else sorted(int(i) for i in ids)
        missing = [i for i in ids if i not in cams]
        if missing:
            raise ContractError(f"no CAM triple for samples {missing[:5]}")
        self.cams = {i: cams[i] for i in ids}
        self.records = {i: LabelRecord(i, Source.CAM, cams[i].standard, 0) for i in ids}

    def __len__(self) -> int:
        return len(self.records)

    @property
    def ids(self) -> list[int]:
        return list(self.records)

    def ids_by_source(self, source: Source) -> list[int]:
        return [i for i, r in self.records.items() if r.source == source]

    def counts(self) -> dict[str, int]:
        return {s.value: len(self.ids_by_source(s)) for s in Source}

    def _move(self, ids, masks, target: Source, cycle: int) -> None:
        ids = [int(i) for i in ids]
        if len(ids) != len(masks):
            raise ContractError("ids and masks differ in length")
        for sid, mask in zip(ids, masks):
            rec = self.records.get(sid)
            if rec is None:
                raise KeyError(f"sample {sid} is not in the label store")
            if (rec.source, target) not in ALLOWED:
                raise ContractError(f"sample {sid}: transition {rec.source.value} -> {target.value} not allowed")
        for sid, mask in zip(ids, masks):
            self.records[sid] = LabelRecord(sid, target, np.asarray(mask, dtype=bool).copy(), cycle)

    def assign_pseudo(self, ids, masks, cycle: int) -> None:
        self._move(ids, masks, Source.PSEUDO, cycle)

    def assign_gt(self, ids, masks, cycle: int) -> None:
        self._move(ids, masks, Source.GT, cycle)

    def label_arrays(self, ids=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(Y_s, Y_c, Y_f); non-CAM samples repeat their single mask three times."""
        ids = self.ids if ids is None else ids
        ys, yc, yf = [], [], []
        for sid in ids:
            rec = self.records[sid]
            if rec.source == Source.CAM:
                t = self.cams[sid]
                ys.append(t.standard)
                yc.append(t.coarse)
                yf.append(t.fine)
            else:
                ys.append(rec.mask)
                yc.append(rec.mask)
                yf.append(rec.mask)
        return np.stack(ys), np.stack(yc), np.stack(yf)


class Oracle:
    """Stands in for the human annotator: returns generator masks for allowed ids."""

    def __init__(self, dataset: Dataset, allowed=None):
        self.dataset = dataset
        self.allowed = None if allowed is None else {int(i) for i in allowed}

    def annotate(self, ids) -> np.ndarray:
        out = []
        for sid in ids:
            sid = int(sid)
            if self.allowed is not None and sid not in self.allowed or not 0 <= sid < len(self.dataset):
                raise KeyError(f"sample {sid} cannot be annotated")
            out.append(self.dataset[sid].oracle_mask.copy())
        size = self.dataset.manifest.image_size
        return np.stack(out) if out else np.zeros((0, size, size), dtype=bool)
