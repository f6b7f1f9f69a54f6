"""Active-learning experiments: cycles, k-fold aggregation and the ablation table."""
from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..campus import (
    Decision,
    ScoreRecord,
    dice_coefficient,
    score_samples,
    select_ground_truth,
    select_pseudo,
    write_scores,
)
from ..campus.knee import NO_KNEE
from ..cam import CamTriple
from ..errors import ConfigError, NumericError
from ..rng import stream
from ..segmodel import DiscrepancyModel, PredictionTriple, Schedule, train_discrepancy, train_standard
from ..synthgen import Dataset, fold_ids
from .labels import LabelStore, Oracle, Source
from .strategies import Strategy, select_coreset, select_dice_naive, select_entropy, select_random

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ALConfig:
    strategy: Strategy = Strategy.DEAL
    cycles: int = 3
    budget_fraction: float = 0.10
    pseudo_every_cycle: bool = False
    knee_sensitivity: float = 1.0
    entropy_full_binary: bool = False
    schedule: Schedule = Schedule()
    encoder_channels: tuple[int, int, int] = (4, 8, 8)
    decoder_channels: tuple[int, int, int] = (8, 8, 4)
    use_discrepancy: bool = True
    use_model_div: bool = True
    use_cam_div: bool = True

    def __post_init__(self):
        if not 0.0 < self.budget_fraction <= 1.0:
            raise ConfigError(f"budget_fraction must be in (0, 1], got {self.budget_fraction}")
        if self.cycles < 0:
            raise ConfigError(f"cycles must be >= 0, got {self.cycles}")


@dataclass
class CycleReport:
    strategy: str
    fold: int
    seed: int
    cycle: int
    stage: str  # initial | pseudo | gt | full
    counts: dict[str, int]
    k_p: int | None
    k_g: int
    dice: float
    wall_time: float = 0.0

    @property
    def gt_fraction(self) -> float:
        total = sum(self.counts.values())
        return self.counts.get("GT", 0) / total if total else 0.0

    def to_dict(self) -> dict:
        out = asdict(self)
        out["gt_fraction"] = round(self.gt_fraction, 6)
        return out


def evaluate(model: DiscrepancyModel, images: np.ndarray, masks: np.ndarray) -> float:
    """Mean per-sample Dice of the binarized standard prediction; empty vs empty scores 1."""
    if len(images) == 0:
        raise ConfigError("cannot evaluate on an empty fold")
    pred = model.predict_standard(images)
    if not np.all(np.isfinite(pred)):
        raise NumericError("non-finite predictions during evaluation")
    return float(np.mean([dice_coefficient(p > 0.5, m) for p, m in zip(pred, masks)]))


def _digest(*arrays: np.ndarray) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.packbits(np.asarray(a, dtype=bool)).tobytes())
        h.update(str(a.shape).encode())
    return h.hexdigest()


@dataclass
class _Fit:
    standard: DiscrepancyModel
    dice: float
    discrepancy: dict[str, DiscrepancyModel] = field(default_factory=dict)


class Trainer:
    """Trains and evaluates models for one (fold, seed); identical label sets reuse earlier results.

    Training is a pure function of (labels, seed, schedule), so a cache hit
    returns exactly what retraining would.
    """

    def __init__(self, dataset: Dataset, train_ids, test_ids, config: ALConfig, seed: int):
        self.train_ids = [int(i) for i in train_ids]
        self.images = dataset.images_nchw(self.train_ids)
        self.test_images = dataset.images_nchw(test_ids)
        self.test_masks = dataset.masks(test_ids)
        self.config = config
        self.seed = seed
        self._cache: dict[str, _Fit] = {}
        self.trainings = 0

    def _new_model(self) -> DiscrepancyModel:
        size = self.images.shape[-1]
        return DiscrepancyModel.init(self.seed, self.config.encoder_channels, self.config.decoder_channels, size)

    def fit(self, y_s, y_c=None, y_f=None, discrepancy: bool = False) -> tuple[DiscrepancyModel, float]:
        """(model, test Dice). The model carries trained coarse/fine decoders when ``discrepancy``."""
        sched = self.config.schedule
        key = _digest(y_s)
        entry = self._cache.get(key)
        if entry is None:
            model = train_standard(self._new_model(), self.images, y_s, sched, self.seed)
            if not model.is_finite():
                raise NumericError("non-finite parameters after training")
            self.trainings += 1
            entry = _Fit(model, evaluate(model, self.test_images, self.test_masks))
            self._cache[key] = entry
        if not discrepancy:
            return entry.standard, entry.dice
        y_c = y_s if y_c is None else y_c
        y_f = y_s if y_f is None else y_f
        dkey = _digest(y_c, y_f)
        if dkey not in entry.discrepancy:
            model = train_discrepancy(entry.standard.clone(), self.images, y_s, y_c, y_f, sched, self.seed)
            if not model.is_finite():
                raise NumericError("non-finite parameters after discrepancy training")
            entry.discrepancy[dkey] = model
        return entry.discrepancy[dkey], entry.dice

    def fit_store(self, store: LabelStore, discrepancy: bool) -> tuple[DiscrepancyModel, float]:
        y_s, y_c, y_f = store.label_arrays(self.train_ids)
        return self.fit(y_s, y_c, y_f, discrepancy)

    def rows(self, ids) -> np.ndarray:
        pos = {sid: k for k, sid in enumerate(self.train_ids)}
        return np.array([pos[int(i)] for i in ids], dtype=int)


def budget(config: ALConfig, n_train: int) -> int:
    return int(round(config.budget_fraction * n_train))


def _score_pool(trainer: Trainer, model: DiscrepancyModel, store: LabelStore, pool: list[int], config: ALConfig) -> list[ScoreRecord]:
    if not pool:
        return []
    pred: PredictionTriple = model.forward(trainer.images[trainer.rows(pool)])
    cams = np.stack([store.cams[i].standard for i in pool])
    return score_samples(
        pool,
        pred.standard,
        pred.coarse,
        pred.fine,
        cams,
        full_binary=config.entropy_full_binary,
        use_model_div=config.use_model_div,
        use_cam_div=config.use_cam_div,
        use_discrepancy=config.use_discrepancy,
    )


def pseudo_step(trainer: Trainer, model: DiscrepancyModel, store: LabelStore, config: ALConfig, cycle: int) -> tuple[list[int], int, list[ScoreRecord]]:
    """Score the CAM pool and turn the samples above the knee into pseudo labels (binarized P_s)."""
    pool = store.ids_by_source(Source.CAM)
    records = _score_pool(trainer, model, store, pool, config)
    chosen, knee = select_pseudo(records, config.knee_sensitivity)
    if chosen:
        masks = model.predict_standard(trainer.images[trainer.rows(chosen)]) > 0.5
        store.assign_pseudo(chosen, masks, cycle)
    return chosen, knee, records


def select_gt(strategy: Strategy, trainer: Trainer, model: DiscrepancyModel, store: LabelStore, config: ALConfig, k: int, cycle: int, records=None, exclude=()) -> list[int]:
    if strategy.uses_discrepancy:
        if records is None:
            records = _score_pool(trainer, model, store, store.ids_by_source(Source.CAM), config)
        return select_ground_truth(records, k, exclude)
    pool = [i for i in store.ids if store.records[i].source != Source.GT]
    rng = stream(trainer.seed, "select", strategy.value, cycle)
    if strategy is Strategy.RANDOM:
        return select_random(pool, k, rng)
    rows = trainer.rows(pool)
    if strategy is Strategy.CORESET_GREEDY:
        gt = store.ids_by_source(Source.GT)
        feats = model.embed(trainer.images[rows])
        labeled = model.embed(trainer.images[trainer.rows(gt)]) if gt else np.zeros((0, feats.shape[1]))
        return select_coreset(pool, feats, labeled, k, rng, first_cycle=cycle == 1)
    p_s = model.predict_standard(trainer.images[rows])
    if strategy is Strategy.DICE_NAIVE:
        return select_dice_naive(pool, p_s, np.stack([store.records[i].mask for i in pool]), k)
    if strategy is Strategy.ENTROPY:
        return select_entropy(pool, p_s, k, config.entropy_full_binary)
    raise ConfigError(f"no ground-truth selection rule for {strategy}")


def _write_decisions(out_dir: Path | None, name: str, records, pseudo, gt) -> None:
    if out_dir is None or not records:
        return
    decisions = {i: Decision.PSEUDO for i in pseudo}
    decisions.update({i: Decision.GT for i in gt})
    out_dir.mkdir(parents=True, exist_ok=True)
    write_scores(records, decisions, out_dir / name)


def run_experiment(
    dataset: Dataset,
    cams: dict[int, CamTriple],
    train_ids,
    test_ids,
    config: ALConfig,
    seed: int,
    fold: int = 0,
    trainer: Trainer | None = None,
    out_dir: str | Path | None = None,
) -> list[CycleReport]:
    """CAM-only cycle 0, optional pseudo labels, then ``config.cycles`` ground-truth cycles."""
    strategy = config.strategy
    trainer = trainer or Trainer(dataset, train_ids, test_ids, config, seed)
    out = Path(out_dir) if out_dir is not None else None
    store = LabelStore(cams, train_ids)
    oracle = Oracle(dataset, train_ids)
    k_g = budget(config, len(store))
    reports: list[CycleReport] = []

    def report(cycle, stage, dice, k_p, k, t0):
        r = CycleReport(strategy.value, fold, seed, cycle, stage, store.counts(), k_p, k, dice, time.perf_counter() - t0)
        log.info("%s fold %d seed %d cycle %d %s: dice %.4f counts %s", strategy.value, fold, seed, cycle, stage, dice, r.counts)
        reports.append(r)

    t0 = time.perf_counter()
    scoring = strategy.uses_discrepancy
    model, dice = trainer.fit_store(store, discrepancy=scoring and config.cycles > 0 or strategy.selects_pseudo)
    report(0, "initial", dice, None, 0, t0)
    if strategy.selects_pseudo:
        t0 = time.perf_counter()
        chosen, knee, records = pseudo_step(trainer, model, store, config, 0)
        _write_decisions(out, f"scores_{strategy.value}_f{fold}_s{seed}_c0.csv", records, chosen, [])
        model, dice = trainer.fit_store(store, discrepancy=config.cycles > 0)
        report(0, "pseudo", dice, None if knee == NO_KNEE else len(chosen), 0, t0)
    for cycle in range(1, config.cycles + 1):
        t0 = time.perf_counter()
        pseudo, knee, records = [], NO_KNEE, None
        if strategy.selects_pseudo and config.pseudo_every_cycle:
            pseudo, knee, records = pseudo_step(trainer, model, store, config, cycle)
        if scoring and records is None:
            records = _score_pool(trainer, model, store, store.ids_by_source(Source.CAM), config)
        gt = select_gt(strategy, trainer, model, store, config, k_g, cycle, records, exclude=pseudo)
        store.assign_gt(gt, oracle.annotate(gt), cycle)
        _write_decisions(out, f"scores_{strategy.value}_f{fold}_s{seed}_c{cycle}.csv", records, pseudo, gt)
        model, dice = trainer.fit_store(store, discrepancy=scoring and cycle < config.cycles)
        k_p = len(pseudo) if strategy.selects_pseudo and config.pseudo_every_cycle and knee != NO_KNEE else None
        report(cycle, "gt", dice, k_p, len(gt), t0)
    return reports


def full_supervision(dataset: Dataset, trainer: Trainer, strategy_name: str = "full", fold: int = 0) -> CycleReport:
    """Reference run with every training label replaced by the oracle mask."""
    t0 = time.perf_counter()
    masks = Oracle(dataset, trainer.train_ids).annotate(trainer.train_ids)
    _, dice = trainer.fit(masks)
    n = len(trainer.train_ids)
    return CycleReport(strategy_name, fold, trainer.seed, 0, "full", {"CAM": 0, "PSEUDO": 0, "GT": n}, None, n, dice, time.perf_counter() - t0)


# ---------------------------------------------------------------- k-fold


def population_std(values) -> float:
    v = np.asarray(values, dtype=np.float64)
    return float(np.sqrt(np.mean((v - v.mean()) ** 2))) if len(v) else float("nan")


@dataclass
class SummaryRow:
    strategy: str
    stage: str
    cycle: int
    gt_fraction: float
    mean: float
    std: float
    n_folds: int
    n_runs: int


def summarize(reports: list[CycleReport]) -> list[SummaryRow]:
    """Per (strategy, stage, cycle): average over seeds within a fold, then mean and population std over folds.

    With a single fold the std is taken over its seeds instead.
    """
    groups: dict[tuple, dict[int, list[float]]] = {}
    fractions: dict[tuple, list[float]] = {}
    for r in reports:
        key = (r.strategy, r.stage, r.cycle)
        groups.setdefault(key, {}).setdefault(r.fold, []).append(r.dice)
        fractions.setdefault(key, []).append(r.gt_fraction)
    rows = []
    for key in sorted(groups, key=lambda k: (k[0], k[2], ("full", "initial", "pseudo", "gt").index(k[1]))):
        per_fold = [float(np.mean(v)) for _, v in sorted(groups[key].items())]
        spread = per_fold if len(per_fold) > 1 else next(iter(groups[key].values()))
        rows.append(
            SummaryRow(
                key[0],
                key[1],
                key[2],
                round(float(np.mean(fractions[key])), 6),
                float(np.mean(per_fold)),
                population_std(spread),
                len(per_fold),
                sum(len(v) for v in groups[key].values()),
            )
        )
    return rows


def run_kfold(
    dataset: Dataset,
    cams: dict[int, CamTriple],
    strategies: list[Strategy],
    config: ALConfig,
    folds: list[int] | None = None,
    seeds=(0,),
    out_dir: str | Path | None = None,
    include_full: bool = True,
    on_report=None,
) -> list[CycleReport]:
    """Every strategy on every (fold, seed); strategies of one (fold, seed) share a trainer cache."""
    manifest = dataset.manifest
    if not manifest.folds:
        raise ConfigError("dataset has no fold assignment")
    k = len(set(manifest.folds.values()))
    if k < 2:
        raise ConfigError(f"k-fold needs k >= 2, got {k}")
    folds = list(range(k)) if folds is None else list(folds)
    reports: list[CycleReport] = []
    for fold in folds:
        train_ids, test_ids = fold_ids(manifest, fold)
        for seed in seeds:
            trainer = Trainer(dataset, train_ids, test_ids, config, seed)
            if include_full:
                r = full_supervision(dataset, trainer, fold=fold)
                reports.append(r)
                if on_report:
                    on_report(r)
            for strategy in strategies:
                cfg = replace(config, strategy=strategy)
                for r in run_experiment(dataset, cams, train_ids, test_ids, cfg, seed, fold, trainer, out_dir):
                    reports.append(r)
                    if on_report:
                        on_report(r)
            log.info("fold %d seed %d: %d trainings", fold, seed, trainer.trainings)
    return reports


# ---------------------------------------------------------------- ablation

ABLATIONS = {
    # name: (discrepancy model, model divergence, CAM divergence)
    "no_discrepancy": (False, False, True),
    "no_cam_divergence": (True, True, False),
    "no_model_divergence": (True, False, True),
    "full": (True, True, True),
}


@dataclass
class AblationRecord:
    setting: str
    fold: int
    seed: int
    initial: float
    pseudo: float
    gt: float
    k_p: int
    k_g: int

    @property
    def delta_pseudo(self) -> float:
        return self.pseudo - self.initial

    @property
    def delta_gt(self) -> float:
        return self.gt - self.initial


def run_ablation(
    dataset: Dataset,
    cams: dict[int, CamTriple],
    config: ALConfig,
    folds: list[int] | None = None,
    seeds=(0,),
    gt_fraction: float = 0.20,
    settings=tuple(ABLATIONS),
    on_record=None,
) -> list[AblationRecord]:
    """Dice change vs the CAM-only model for pseudo-only and one-shot ground-truth selection.

    The settings differ only in the switches passed to the scoring function.
    """
    manifest = dataset.manifest
    k = len(set(manifest.folds.values()))
    folds = list(range(k)) if folds is None else list(folds)
    out: list[AblationRecord] = []
    for fold in folds:
        train_ids, test_ids = fold_ids(manifest, fold)
        for seed in seeds:
            trainer = Trainer(dataset, train_ids, test_ids, config, seed)
            base = LabelStore(cams, train_ids)
            model0, dice0 = trainer.fit_store(base, discrepancy=True)
            k_g = int(round(gt_fraction * len(base)))
            for name in settings:
                disc, md, cd = ABLATIONS[name]
                cfg = replace(config, use_discrepancy=disc, use_model_div=md, use_cam_div=cd)
                store = LabelStore(cams, train_ids)
                chosen, knee, records = pseudo_step(trainer, model0, store, cfg, 0)
                _, dice_p = trainer.fit_store(store, discrepancy=False)
                store = LabelStore(cams, train_ids)
                gt = select_ground_truth(records, k_g)
                store.assign_gt(gt, Oracle(dataset, train_ids).annotate(gt), 1)
                _, dice_g = trainer.fit_store(store, discrepancy=False)
                rec = AblationRecord(name, fold, seed, dice0, dice_p, dice_g, len(chosen), len(gt))
                log.info("ablation %s fold %d seed %d: d_pseudo %+.4f d_gt %+.4f (k_p %d)", name, fold, seed, rec.delta_pseudo, rec.delta_gt, len(chosen))
                out.append(rec)
                if on_record:
                    on_record(rec)
    return out


def summarize_ablation(records: list[AblationRecord]) -> list[dict]:
    rows = []
    for name in ABLATIONS:
        rs = [r for r in records if r.setting == name]
        if not rs:
            continue
        disc, md, cd = ABLATIONS[name]
        rows.append(
            {
                "setting": name,
                "discrepancy_model": disc,
                "model_divergence": md,
                "cam_divergence": cd,
                "delta_pseudo": float(np.mean([r.delta_pseudo for r in rs])),
                "delta_gt": float(np.mean([r.delta_gt for r in rs])),
                "mean_k_p": float(np.mean([r.k_p for r in rs])),
                "n_runs": len(rs),
            }
        )
    return rows
