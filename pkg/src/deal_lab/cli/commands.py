"""Subcommand implementations; every command writes into a fresh output directory."""
from __future__ import annotations

import json
import logging
import shutil
import time
from dataclasses import asdict
from pathlib import Path

from ..alloop import Strategy, run_ablation, run_kfold, summarize_ablation
from ..alloop.experiment import budget
from ..autograd.checkpoint import save_checkpoint
from ..cam import audit_nesting, generate_cams, load_cams, save_cams, threshold_cams, train_classifier
from ..errors import ConfigError, MissingArtifactError
from ..synthgen import generate_dataset, load_dataset, save_dataset
from . import report as rp
from .config import ExperimentConfig

log = logging.getLogger("deal_lab")

OWN_MARKERS = (rp.RUN_FILE, "manifest.json", "config.toml", rp.FAILED_MARKER)


def prepare_out_dir(out: Path, force: bool) -> None:
    """Create ``out``; an existing non-empty directory is replaced only with ``force`` and only if it is ours."""
    if out.exists() and any(out.iterdir()):
        if not force:
            raise ConfigError(f"{out} already exists and is not empty; pass --force to replace it")
        if not any((out / m).exists() for m in OWN_MARKERS):
            raise ConfigError(f"refusing to replace {out}: it does not look like a deal-lab output directory")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)


def attach_log(out: Path) -> logging.Handler:
    handler = logging.FileHandler(out / "run.log", mode="w")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    logging.getLogger().addHandler(handler)
    return handler


def _require_dataset(data_dir: Path):
    if not (data_dir / "manifest.json").is_file():
        raise MissingArtifactError(f"no dataset at {data_dir} (manifest.json missing); run 'gen-data' first")
    return load_dataset(data_dir)


def _require_cams(cam_dir: Path, dataset):
    if not (cam_dir / "index.json").is_file():
        raise MissingArtifactError(f"no CAMs at {cam_dir} (index.json missing); run 'gen-cams' first")
    cams = load_cams(cam_dir)
    missing = sorted(set(int(i) for i in dataset.ids) - set(cams))
    if missing:
        raise MissingArtifactError(f"{cam_dir} lacks CAM triples for {len(missing)} samples (first {missing[0]}); rerun 'gen-cams'")
    return cams


# ---------------------------------------------------------------- gen-data


def gen_data(config: ExperimentConfig, out: Path, force: bool) -> int:
    d = config["dataset"]
    prepare_out_dir(out, force)
    handler = attach_log(out)
    try:
        config.write(out / "config.toml")
        ds = generate_dataset(d["image_size"], tuple(d["counts"]), seed=d["seed"], folds=d["folds"])
        save_dataset(ds, out)
        log.info("wrote %d samples (seed %d) to %s", len(ds), d["seed"], out)
        rp.write_run_info(out, "gen-data", "complete", samples=len(ds))
    finally:
        logging.getLogger().removeHandler(handler)
        handler.close()
    return 0


# ---------------------------------------------------------------- gen-cams


def gen_cams(config: ExperimentConfig, data_dir: Path, out: Path, force: bool) -> int:
    dataset = _require_dataset(data_dir)
    c, k = config["cam"], config["classifier"]
    prepare_out_dir(out, force)
    handler = attach_log(out)
    try:
        config.write(out / "config.toml")
        (out / "manifest.json").write_text(dataset.manifest.to_json() + "\n")
        clf, accuracy = train_classifier(dataset, epochs=k["epochs"], lr=k["lr"], seed=k["seed"], batch_size=k["batch_size"], dropout=k["dropout"])
        log.info("classifier training accuracy %.4f", accuracy)
        save_checkpoint(out / "classifier.ckpt", clf.state_dict())
        triples = generate_cams(clf, dataset, dataset.ids, config.thresholds(), config.crf(), use_crf=c["use_crf"])
        save_cams(triples, out)
        violations = audit_nesting(triples)
        log.info("%d CAM triples written; %d nesting violations", len(triples), len(violations))
        rp.write_run_info(out, "gen-cams", "complete", classifier_accuracy=accuracy, triples=len(triples), nesting_violations=len(violations))
    finally:
        logging.getLogger().removeHandler(handler)
        handler.close()
    return 0


# ---------------------------------------------------------------- audit-cams


def audit_cams(config: ExperimentConfig, cam_dir: Path) -> int:
    """Recount |C_f| <= |C_s| <= |C_c| from the stored heatmaps (pre-CRF path) and from the stored masks."""
    if not (cam_dir / "index.json").is_file():
        raise MissingArtifactError(f"no CAMs at {cam_dir} (index.json missing); run 'gen-cams' first")
    triples = load_cams(cam_dir)
    thresholds = config.thresholds()
    recomputed = {i: threshold_cams(t.heatmap, None, thresholds, t.predicted_class, i) for i, t in triples.items()}
    pre_crf = audit_nesting(recomputed)
    stored = audit_nesting(triples)
    n = len(triples)
    print(f"samples: {n}")
    print(f"pre-CRF nesting violations: {len(pre_crf)} ({100.0 * (n - len(pre_crf)) / max(n, 1):.2f}% nested)")
    print(f"stored-mask nesting violations: {len(stored)}")
    for i in (pre_crf + stored)[:20]:
        print(f"  violation: sample {i}")
    return 0 if not pre_crf and not stored else 1


# ---------------------------------------------------------------- run-al


def _plan(config: ExperimentConfig, dataset, strategies, folds, seeds, ablation: bool) -> list[str]:
    a = config["al"]
    lines = [f"dataset: {len(dataset)} samples, {len(set(dataset.manifest.folds.values()))} folds"]
    for f in folds:
        n_train = sum(1 for v in dataset.manifest.folds.values() if v != f)
        k_g = budget(config.al_config(), n_train)
        lines.append(f"fold {f}: {n_train} training samples, K_g = {k_g} per cycle")
    if ablation:
        lines.append(f"ablation: 4 settings x {len(folds)} folds x {len(seeds)} seeds, ground-truth fraction {a['ablation_gt_fraction']}")
    else:
        lines.append(f"strategies: {', '.join(s.value for s in strategies)}; cycles {a['cycles']}; seeds {list(seeds)}; full supervision {a['include_full']}")
    s = config["segmentation"]
    lines.append(f"segmentation: {s['step1_epochs']} step-1 epochs, {s['rounds']} discrepancy rounds, lr {s['lr']}")
    return lines


def run_al(
    config: ExperimentConfig,
    data_dir: Path,
    cam_dir: Path,
    out: Path,
    force: bool,
    strategies: list[str] | None,
    kfold: bool,
    ablation: bool,
    dry_run: bool,
) -> int:
    if strategies:
        # the snapshot written to the run directory must carry the override
        config = config.with_overrides("al", strategies=list(strategies))
    a = config["al"]
    chosen = [Strategy(n) for n in a["strategies"]]
    dataset = _require_dataset(data_dir)
    if not dataset.manifest.folds:
        raise ConfigError(f"dataset at {data_dir} has no fold assignment")
    k = len(set(dataset.manifest.folds.values()))
    folds = list(a["folds"]) or list(range(k))
    if any(f < 0 or f >= k for f in folds):
        raise ConfigError(f"[al] folds {folds} out of range for {k} folds")
    if not kfold and not ablation:
        folds = folds[:1]
    seeds = list(a["seeds"])
    cams = _require_cams(cam_dir, dataset)
    if dry_run:
        print("plan (dry run, nothing trained):")
        for line in _plan(config, dataset, chosen, folds, seeds, ablation):
            print("  " + line)
        return 0

    prepare_out_dir(out, force)
    handler = attach_log(out)
    command = "run-al"
    mode = "ablation" if ablation else ("kfold" if kfold else "single")
    config.write(out / "config.toml")
    (out / "manifest.json").write_text(dataset.manifest.to_json() + "\n")
    rp.write_run_info(out, command, "running", mode=mode)
    t0 = time.perf_counter()
    try:
        al = config.al_config()
        if ablation:
            sink = rp.ReportLog(out / "ablation.jsonl")
            records = run_ablation(
                dataset, cams, al, folds=folds, seeds=seeds, gt_fraction=a["ablation_gt_fraction"],
                on_record=lambda r: sink({**asdict(r), "delta_pseudo": r.delta_pseudo, "delta_gt": r.delta_gt}),
            )
            rp.write_ablation(summarize_ablation(records), out, a["ablation_gt_fraction"])
        else:
            (out / "scores").mkdir()
            sink = rp.ReportLog(out / rp.REPORTS_FILE)
            reports = run_kfold(dataset, cams, chosen, al, folds=folds, seeds=seeds, out_dir=out / "scores", include_full=a["include_full"], on_report=sink)
            rp.write_summary(reports, out)
    except BaseException as exc:
        (out / rp.FAILED_MARKER).write_text(f"{type(exc).__name__}: {exc}\n")
        rp.write_run_info(out, command, "failed", mode=mode)
        raise
    finally:
        logging.getLogger().removeHandler(handler)
        handler.close()
    log.info("run-al finished in %.1f s", time.perf_counter() - t0)
    rp.write_run_info(out, command, "complete", mode=mode)
    return 0


# ---------------------------------------------------------------- report


def report(run_dirs: list[Path], out: Path, force: bool) -> int:
    reports = rp.merge_runs(run_dirs)
    if not reports:
        raise MissingArtifactError("the given run directories contain no cycle reports")
    prepare_out_dir(out, force)
    rows = rp.write_summary(reports, out)
    (out / "sources.json").write_text(json.dumps([str(d) for d in run_dirs], indent=1) + "\n")
    rp.write_run_info(out, "report", "complete", runs=len(run_dirs))
    print((out / rp.SUMMARY_MD).read_text(), end="")
    log.info("merged %d reports from %d runs into %d rows", len(reports), len(run_dirs), len(rows))
    return 0
