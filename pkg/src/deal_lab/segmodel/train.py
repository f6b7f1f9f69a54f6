"""Three-step discrepancy training.

1. encoder + standard decoder on the standard labels;
2. encoder and standard decoder frozen, coarse/fine decoders fit their labels
   while pushing their predictions apart;
3. same freezing, coarse/fine decoders pulled back toward the standard one.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..autograd import Adam, ContractError, Tensor, backward, no_grad
from ..errors import NumericError
from ..rng import stream
from .losses import loss_ce_dice, loss_l1_dis
from .model import DiscrepancyModel, Skips

log = logging.getLogger(__name__)


@dataclass
class TrainingBatch:
    x: np.ndarray  # (B, 3, H, W)
    y_s: np.ndarray  # (B, H, W) binary
    y_c: np.ndarray
    y_f: np.ndarray
    ids: np.ndarray | None = None
    skips: Skips | None = None  # cached frozen-encoder outputs
    p_s: np.ndarray | None = None  # cached frozen standard-decoder output


@dataclass(frozen=True)
class Schedule:
    step1_epochs: int = 50
    rounds: int = 10
    lr: float = 0.003
    batch_size: int = 16
    lambda_dis: float = 1.0


def make_batches(images, y_s, y_c=None, y_f=None, batch_size: int = 16, rng: np.random.Generator | None = None, ids=None, skips: Skips | None = None, p_s=None) -> list[TrainingBatch]:
    """Split into (optionally shuffled) batches; missing coarse/fine labels default to the standard ones."""
    n = len(images)
    y_c = y_s if y_c is None else y_c
    y_f = y_s if y_f is None else y_f
    order = rng.permutation(n) if rng is not None else np.arange(n)
    ids = np.arange(n) if ids is None else np.asarray(ids)
    out = []
    for lo in range(0, n, batch_size):
        idx = np.sort(order[lo : lo + batch_size])
        out.append(
            TrainingBatch(
                images[idx],
                y_s[idx].astype(np.float64),
                y_c[idx].astype(np.float64),
                y_f[idx].astype(np.float64),
                ids[idx],
                None if skips is None else skips.take(idx),
                None if p_s is None else p_s[idx],
            )
        )
    return out


def step_optimizer(model: DiscrepancyModel, step: int, lr: float = 0.003) -> Adam:
    """Fresh Adam over the parameters a step trains (moments reset per step)."""
    groups = ("encoder", "s") if step == 1 else ("c", "f")
    return Adam(model.parameters(*groups), lr=lr)


def _frozen_skips(model: DiscrepancyModel, batch: TrainingBatch) -> Skips:
    if batch.skips is not None:
        return batch.skips
    with no_grad():
        return model.encode(Tensor(batch.x)).detached()


def _frozen_standard(model: DiscrepancyModel, batch: TrainingBatch, skips: Skips) -> np.ndarray:
    if batch.p_s is not None:
        return batch.p_s
    with no_grad():
        return model.decode("s", skips).data


def _check(loss: float, step: int) -> None:
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss in training step {step}")


def train_step1(model: DiscrepancyModel, batches: list[TrainingBatch], optimizer: Adam) -> float:
    """One epoch of encoder + standard decoder on Y_s; returns the mean loss."""
    if not batches:
        raise ContractError("no labeled samples to train on")
    total = 0.0
    count = 0
    for b in batches:
        prob = model.decode("s", model.encode(Tensor(b.x)))
        loss = loss_ce_dice(prob, b.y_s)
        optimizer.zero_grad()
        backward(loss)
        optimizer.step()
        total += loss.item() * len(b.x)
        count += len(b.x)
    _check(total, 1)
    return total / count


def step2_loss(model: DiscrepancyModel, skips: Skips, b: TrainingBatch, lambda_dis: float) -> tuple[Tensor, float, float]:
    p_c = model.decode("c", skips)
    p_f = model.decode("f", skips)
    sup = loss_ce_dice(p_c, b.y_c) + loss_ce_dice(p_f, b.y_f)
    dis = loss_l1_dis(p_c, p_f)
    return sup - lambda_dis * dis, sup.item(), dis.item()


def train_step2(model: DiscrepancyModel, batches: list[TrainingBatch], optimizer: Adam, lambda_dis: float = 1.0) -> dict[str, float]:
    """One epoch maximizing the coarse/fine discrepancy while fitting Y_c and Y_f."""
    model.require_duplicated()
    if not batches:
        raise ContractError("no labeled samples to train on")
    sums = {"loss": 0.0, "supervised": 0.0, "discrepancy": 0.0}
    count = 0
    for b in batches:
        skips = _frozen_skips(model, b)
        loss, sup, dis = step2_loss(model, skips, b, lambda_dis)
        optimizer.zero_grad()
        backward(loss)
        optimizer.step()
        n = len(b.x)
        sums["loss"] += loss.item() * n
        sums["supervised"] += sup * n
        sums["discrepancy"] += dis * n
        count += n
    _check(sums["loss"], 2)
    model.discrepancy_rounds += 1
    return {k: v / count for k, v in sums.items()}


def step3_loss(model: DiscrepancyModel, skips: Skips, p_s: np.ndarray) -> Tensor:
    target = Tensor(p_s)
    return loss_l1_dis(model.decode("c", skips), target) + loss_l1_dis(model.decode("f", skips), target)


def train_step3(model: DiscrepancyModel, batches: list[TrainingBatch], optimizer: Adam) -> float:
    """One epoch pulling the coarse and fine predictions toward the standard one."""
    model.require_duplicated()
    if model.discrepancy_rounds < 1:
        raise ContractError("step 3 requires at least one step-2 epoch")
    if not batches:
        raise ContractError("no labeled samples to train on")
    total = 0.0
    count = 0
    for b in batches:
        skips = _frozen_skips(model, b)
        loss = step3_loss(model, skips, _frozen_standard(model, b, skips))
        optimizer.zero_grad()
        backward(loss)
        optimizer.step()
        total += loss.item() * len(b.x)
        count += len(b.x)
    _check(total, 3)
    return total / count


def train_standard(model: DiscrepancyModel, images: np.ndarray, y_s: np.ndarray, schedule: Schedule = Schedule(), seed: int = 0, curve: list[dict] | None = None) -> DiscrepancyModel:
    """Step 1 for ``schedule.step1_epochs`` epochs."""
    if len(images) == 0:
        raise ContractError("no labeled samples to train on")
    opt = step_optimizer(model, 1, schedule.lr)
    for epoch in range(schedule.step1_epochs):
        rng = stream(seed, "seg-step1", epoch)
        loss = train_step1(model, make_batches(images, y_s, batch_size=schedule.batch_size, rng=rng), opt)
        if curve is not None:
            curve.append({"step": 1, "epoch": epoch, "loss": loss, "supervised": loss, "discrepancy": 0.0})
    return model


def train_discrepancy(
    model: DiscrepancyModel,
    images: np.ndarray,
    y_s: np.ndarray,
    y_c: np.ndarray,
    y_f: np.ndarray,
    schedule: Schedule = Schedule(),
    seed: int = 0,
    curve: list[dict] | None = None,
) -> DiscrepancyModel:
    """Duplicate the standard decoder, then alternate steps 2 and 3 for ``schedule.rounds`` rounds."""
    model.duplicate_decoders()
    # encoder and standard decoder stay frozen from here on, so cache their outputs once
    with no_grad():
        skips = [model.encode(Tensor(images[lo : lo + 64])) for lo in range(0, len(images), 64)]
        p_s = np.concatenate([model.decode("s", s).data for s in skips])
        cached = Skips(*(Tensor(np.concatenate([getattr(s, f).data for s in skips])) for f in ("half", "quarter", "bottleneck")))
    opt2 = step_optimizer(model, 2, schedule.lr)
    opt3 = step_optimizer(model, 3, schedule.lr)
    for r in range(schedule.rounds):
        batches = make_batches(images, y_s, y_c, y_f, schedule.batch_size, stream(seed, "seg-step2", r), skips=cached, p_s=p_s)
        stats = train_step2(model, batches, opt2, schedule.lambda_dis)
        batches = make_batches(images, y_s, y_c, y_f, schedule.batch_size, stream(seed, "seg-step3", r), skips=cached, p_s=p_s)
        loss3 = train_step3(model, batches, opt3)
        if curve is not None:
            curve.append({"step": 2, "epoch": r, **stats})
            curve.append({"step": 3, "epoch": r, "loss": loss3, "supervised": 0.0, "discrepancy": loss3})
    return model


def train_full(
    model: DiscrepancyModel,
    images: np.ndarray,
    y_s: np.ndarray,
    y_c: np.ndarray | None = None,
    y_f: np.ndarray | None = None,
    schedule: Schedule = Schedule(),
    seed: int = 0,
    discrepancy: bool = True,
    curve: list[dict] | None = None,
) -> DiscrepancyModel:
    """Step 1, then (if ``discrepancy``) the alternating steps 2 and 3."""
    train_standard(model, images, y_s, schedule, seed, curve)
    if discrepancy:
        y_c = y_s if y_c is None else y_c
        y_f = y_s if y_f is None else y_f
        train_discrepancy(model, images, y_s, y_c, y_f, schedule, seed, curve)
    return model


CURVE_FIELDS = ("step", "epoch", "loss", "supervised", "discrepancy")


def write_curve(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CURVE_FIELDS, extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in row.items()})
