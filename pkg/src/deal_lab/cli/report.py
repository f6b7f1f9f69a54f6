"""Run-directory outputs: cycle-report JSON lines, summary CSV, Markdown tables and an SVG learning curve."""
from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

from ..alloop import CycleReport, SummaryRow, summarize
from ..errors import ConfigError, MissingArtifactError
from .config import SCHEMA_VERSION

log = logging.getLogger(__name__)

RUN_FILE = "run.json"
REPORTS_FILE = "reports.jsonl"
SUMMARY_CSV = "summary.csv"
SUMMARY_MD = "summary.md"
CURVE_SVG = "learning_curve.svg"
FAILED_MARKER = "FAILED"
SUMMARY_FIELDS = ("strategy", "stage", "cycle", "gt_fraction", "mean", "std", "n_folds", "n_runs")
STRATEGY_TITLES = {
    "random": "Random",
    "dice": "Dice",
    "entropy": "Entropy",
    "coreset": "CoreSet",
    "deal_no_pseudo": "DEAL (w/o pseudo labels)",
    "deal": "DEAL",
}
CURVE_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


# ---------------------------------------------------------------- run metadata


def write_run_info(run_dir: Path, command: str, status: str, **extra) -> None:
    info = {"schema_version": SCHEMA_VERSION, "command": command, "status": status, **extra}
    (run_dir / RUN_FILE).write_text(json.dumps(info, indent=1, sort_keys=True) + "\n")


def read_run_info(run_dir: Path) -> dict:
    path = run_dir / RUN_FILE
    if not path.is_file():
        raise MissingArtifactError(f"{run_dir} is not a run directory (no {RUN_FILE}); run 'run-al' first")
    info = json.loads(path.read_text())
    if info.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"{path}: schema version {info.get('schema_version')} does not match {SCHEMA_VERSION}")
    return info


# ---------------------------------------------------------------- cycle reports


class ReportLog:
    """Append-only JSON-lines writer; each report is flushed as soon as it exists."""

    def __init__(self, path: Path):
        self.path = path
        self.path.write_text("")

    def __call__(self, report) -> None:
        with self.path.open("a") as fh:
            fh.write(json.dumps(report.to_dict() if hasattr(report, "to_dict") else report, sort_keys=True) + "\n")


def read_reports(path: Path) -> list[CycleReport]:
    out = []
    for line in path.read_text().splitlines():
        if line.strip():
            raw = json.loads(line)
            out.append(CycleReport(**{k: raw[k] for k in CycleReport.__dataclass_fields__}))
    return out


# ---------------------------------------------------------------- summary


def write_summary_csv(rows: list[SummaryRow], path: Path) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for r in rows:
            w.writerow([r.strategy, r.stage, r.cycle, f"{r.gt_fraction:.6f}", f"{r.mean:.10f}", f"{r.std:.10f}", r.n_folds, r.n_runs])


def read_summary_csv(path: Path) -> list[dict]:
    with path.open() as fh:
        return list(csv.DictReader(fh))


def _cell(row: SummaryRow | None) -> str:
    return "" if row is None else f"{row.mean:.4f} ({row.std:.4f})"


def summary_markdown(rows: list[SummaryRow]) -> str:
    """Strategies as rows, ground-truth budget as columns, mean (std) over folds."""
    full = next((r for r in rows if r.stage == "full"), None)
    strategies = [s for s in STRATEGY_TITLES if any(r.strategy == s for r in rows)]
    strategies += sorted({r.strategy for r in rows if r.stage != "full"} - set(strategies))
    cycles = sorted({r.cycle for r in rows if r.stage == "gt"})
    fractions = {c: next(r.gt_fraction for r in rows if r.stage == "gt" and r.cycle == c) for c in cycles}
    head = ["Method", "0%"] + [f"{100 * fractions[c]:.0f}%" for c in cycles] + ["100%"]
    lines = ["| " + " | ".join(head) + " |", "|" + "|".join(["---"] * len(head)) + "|"]
    for s in strategies:
        initial = next((r for r in rows if r.strategy == s and r.stage == "initial"), None)
        pseudo = next((r for r in rows if r.strategy == s and r.stage == "pseudo"), None)
        gts = {r.cycle: r for r in rows if r.strategy == s and r.stage == "gt"}
        zero = _cell(initial) if pseudo is None else f"{_cell(pseudo)} [initial {_cell(initial)}]"
        lines.append("| " + " | ".join([STRATEGY_TITLES.get(s, s), zero] + [_cell(gts.get(c)) for c in cycles] + [_cell(full)]) + " |")
    if full is not None:
        lines.append("")
        lines.append(f"95% of the fully supervised Dice: {0.95 * full.mean:.4f}")
    return "\n".join(lines) + "\n"


def learning_curve_svg(rows: list[SummaryRow], width: int = 560, height: int = 380) -> str:
    """Dice vs ground-truth fraction per strategy, with std bars and the 95%-of-full line."""
    left, right, top, bottom = 60, 150, 20, 50
    pw, ph = width - left - right, height - top - bottom
    full = next((r for r in rows if r.stage == "full"), None)
    series: dict[str, list[tuple[float, float, float]]] = {}
    for s in [s for s in STRATEGY_TITLES if any(r.strategy == s for r in rows)] + sorted({r.strategy for r in rows} - set(STRATEGY_TITLES) - {"full"}):
        pts = []
        start = next((r for r in rows if r.strategy == s and r.stage == "pseudo"), None) or next((r for r in rows if r.strategy == s and r.stage == "initial"), None)
        if start is not None:
            pts.append((0.0, start.mean, start.std))
        pts += [(r.gt_fraction, r.mean, r.std) for r in sorted((r for r in rows if r.strategy == s and r.stage == "gt"), key=lambda r: r.cycle)]
        if pts:
            series[s] = pts
    values = [m - sd for pts in series.values() for _, m, sd in pts] + [m + sd for pts in series.values() for _, m, sd in pts]
    if full is not None:
        values += [full.mean, 0.95 * full.mean]
    lo, hi = (min(values), max(values)) if values else (0.0, 1.0)
    pad = max(hi - lo, 0.01) * 0.08
    lo, hi = lo - pad, hi + pad
    xmax = max([x for pts in series.values() for x, _, _ in pts] + [0.1])

    def px(x: float) -> float:
        return left + pw * x / xmax

    def py(y: float) -> float:
        return top + ph * (hi - y) / (hi - lo)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>',
    ]
    for i in range(5):
        y = lo + (hi - lo) * i / 4
        out.append(f'<line x1="{left - 4}" y1="{py(y):.2f}" x2="{left}" y2="{py(y):.2f}" stroke="#333"/>')
        out.append(f'<text x="{left - 6}" y="{py(y) + 4:.2f}" text-anchor="end">{y:.3f}</text>')
    for x in sorted({x for pts in series.values() for x, _, _ in pts}):
        out.append(f'<text x="{px(x):.2f}" y="{top + ph + 16}" text-anchor="middle">{100 * x:.0f}%</text>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{height - 10}" text-anchor="middle">ground-truth fraction</text>')
    out.append(f'<text x="14" y="{top + ph / 2:.2f}" text-anchor="middle" transform="rotate(-90 14 {top + ph / 2:.2f})">test Dice</text>')
    if full is not None:
        y = py(0.95 * full.mean)
        out.append(f'<line x1="{left}" y1="{y:.2f}" x2="{left + pw}" y2="{y:.2f}" stroke="#777" stroke-dasharray="5,4"/>')
        out.append(f'<text x="{left + pw + 6}" y="{y + 4:.2f}">95% of full</text>')
    for i, (s, pts) in enumerate(series.items()):
        color = CURVE_COLORS[i % len(CURVE_COLORS)]
        path = " ".join(f"{px(x):.2f},{py(m):.2f}" for x, m, _ in pts)
        out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="2"/>')
        for x, m, sd in pts:
            out.append(f'<line x1="{px(x):.2f}" y1="{py(m - sd):.2f}" x2="{px(x):.2f}" y2="{py(m + sd):.2f}" stroke="{color}"/>')
            out.append(f'<circle cx="{px(x):.2f}" cy="{py(m):.2f}" r="3" fill="{color}"/>')
        ly = top + 14 + 16 * i
        out.append(f'<line x1="{left + pw + 6}" y1="{ly - 4}" x2="{left + pw + 22}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 26}" y="{ly}">{STRATEGY_TITLES.get(s, s)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_summary(reports: list[CycleReport], run_dir: Path) -> list[SummaryRow]:
    rows = summarize(reports)
    write_summary_csv(rows, run_dir / SUMMARY_CSV)
    (run_dir / SUMMARY_MD).write_text(summary_markdown(rows))
    (run_dir / CURVE_SVG).write_text(learning_curve_svg(rows))
    return rows


# ---------------------------------------------------------------- ablation

ABLATION_FIELDS = ("setting", "discrepancy_model", "model_divergence", "cam_divergence", "delta_pseudo", "delta_gt", "mean_k_p", "n_runs")


def write_ablation(rows: list[dict], run_dir: Path, gt_fraction: float) -> None:
    with (run_dir / "ablation.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ABLATION_FIELDS)
        for r in rows:
            w.writerow([r["setting"], int(r["discrepancy_model"]), int(r["model_divergence"]), int(r["cam_divergence"]), f"{r['delta_pseudo']:.10f}", f"{r['delta_gt']:.10f}", f"{r['mean_k_p']:.4f}", r["n_runs"]])
    mark = {True: "yes", False: "no"}
    lines = [
        f"| Discrepancy model | Model divergence | CAM divergence | Pseudo-label selection | Ground-truth selection ({100 * gt_fraction:.0f}%) |",
        "|---|---|---|---|---|",
    ]
    for r in rows:
        lines.append(
            f"| {mark[r['discrepancy_model']]} | {mark[r['model_divergence']]} | {mark[r['cam_divergence']]} | {100 * r['delta_pseudo']:+.2f}% | {100 * r['delta_gt']:+.2f}% |"
        )
    (run_dir / "ablation.md").write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------- merging


def merge_runs(run_dirs: list[Path]) -> list[CycleReport]:
    """Concatenate the cycle reports of several runs; a (strategy, fold, seed, stage, cycle) key seen twice must agree."""
    seen: dict[tuple, CycleReport] = {}
    for d in run_dirs:
        info = read_run_info(d)
        if info.get("command") != "run-al":
            raise ConfigError(f"{d} was produced by '{info.get('command')}', not run-al")
        path = d / REPORTS_FILE
        if not path.is_file():
            raise MissingArtifactError(f"{path} is missing")
        if (d / FAILED_MARKER).exists():
            log.warning("%s is marked FAILED; merging its partial reports", d)
        for r in read_reports(path):
            key = (r.strategy, r.fold, r.seed, r.stage, r.cycle)
            if key in seen:
                if seen[key].dice != r.dice:
                    raise ConfigError(f"conflicting results for {key} across runs ({seen[key].dice} vs {r.dice})")
                continue
            seen[key] = r
    return list(seen.values())
