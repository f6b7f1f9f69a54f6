import csv
import json

import numpy as np
import pytest

from deal_lab.cli import main
from deal_lab.cli import report as rp
from deal_lab.cli.config import DEFAULTS, ExperimentConfig, load_config, parse_config
from deal_lab.errors import ConfigError, NumericError

TINY = """
[dataset]
counts = [12, 24, 12]
folds = 2

[classifier]
epochs = 3

[segmentation]
step1_epochs = 2
rounds = 1

[al]
seeds = [0]
cycles = 2
"""


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------- config


def test_defaults_are_valid_and_explicit():
    cfg = ExperimentConfig()
    assert cfg["dataset"]["counts"] == [600, 605, 607]
    assert cfg["segmentation"]["lr"] == 0.003
    assert cfg.al_config().budget_fraction == 0.10
    assert all(isinstance(s, int) for s in cfg["al"]["seeds"])


def test_unknown_key_reports_its_line():
    text = "[dataset]\nseed = 3\n\n[al]\ncycles = 2\nbudjet_fraction = 0.2\n"
    with pytest.raises(ConfigError, match=r"exp.toml:6: unknown key 'budjet_fraction'"):
        parse_config(text, "exp.toml")


def test_unknown_section_and_bad_type_and_syntax():
    with pytest.raises(ConfigError, match=r"x.toml:1: unknown section"):
        parse_config("[training]\nlr = 1\n", "x.toml")
    with pytest.raises(ConfigError, match=r"x.toml:2: .*wrong type"):
        parse_config("[al]\ncycles = 'three'\n", "x.toml")
    with pytest.raises(ConfigError, match=r"line 2"):
        parse_config("[al]\ncycles = = 3\n", "x.toml")


@pytest.mark.parametrize(
    "text",
    [
        "[cam]\ncoarse = 0.9\n",
        "[al]\nbudget_fraction = 0.0\n",
        "[al]\nstrategies = ['vaal']\n",
        "[cam]\ncrf_iterations = 0\n",
        "[al]\nseeds = []\n",
    ],
)
def test_invalid_values_are_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_snapshot_round_trips():
    cfg = parse_config(TINY)
    again = parse_config(cfg.to_toml())
    assert again == cfg
    assert again.to_toml() == cfg.to_toml()
    assert set(again.values) == set(DEFAULTS)


# ---------------------------------------------------------------- gen-data / gen-cams


@pytest.fixture(scope="module")
def lab(tmp_path_factory):
    root = tmp_path_factory.mktemp("lab")
    (root / "tiny.toml").write_text(TINY)
    cfg = str(root / "tiny.toml")
    assert main(["gen-data", "--config", cfg, "--out", str(root / "data")]) == 0
    assert main(["gen-cams", "--config", cfg, "--data", str(root / "data"), "--out", str(root / "cams")]) == 0
    return root, cfg


def test_default_config_writes_1812_samples(tmp_path):
    assert main(["gen-data", "--out", str(tmp_path / "d")]) == 0
    manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
    assert sum(manifest["counts"].values()) == 1812
    assert len(list((tmp_path / "d" / "images").iterdir())) == 1812
    assert len(list((tmp_path / "d" / "masks").iterdir())) == 1812


def test_rerun_refuses_without_force(lab, tmp_path):
    root, cfg = lab
    out = tmp_path / "d"
    assert main(["gen-data", "--config", cfg, "--out", str(out)]) == 0
    first = (out / "images" / "00003.ppm").read_bytes()
    assert main(["gen-data", "--config", cfg, "--out", str(out)]) == 2
    assert main(["gen-data", "--config", cfg, "--out", str(out), "--force"]) == 0
    assert (out / "images" / "00003.ppm").read_bytes() == first


def test_force_never_replaces_foreign_directories(tmp_path):
    foreign = tmp_path / "mine"
    foreign.mkdir()
    (foreign / "notes.txt").write_text("keep")
    assert main(["gen-data", "--out", str(foreign), "--force"]) == 2
    assert (foreign / "notes.txt").read_text() == "keep"


def test_seed_override_changes_manifest_seed_only(lab, tmp_path):
    root, cfg = lab
    assert main(["gen-data", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["gen-data", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "99"]) == 0
    a = json.loads((tmp_path / "a" / "manifest.json").read_text())
    b = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert b["seed"] == 99 and a["seed"] == 7
    assert {k: v for k, v in a.items() if k not in ("seed", "folds")} == {k: v for k, v in b.items() if k not in ("seed", "folds")}
    ca, cb = load_config(tmp_path / "a" / "config.toml"), load_config(tmp_path / "b" / "config.toml")
    assert cb["dataset"]["seed"] == 99
    assert {s: v for s, v in ca.values.items() if s != "dataset"} == {s: v for s, v in cb.values.items() if s != "dataset"}


def test_gen_cams_outputs_and_audit(lab, capsys):
    root, cfg = lab
    index = json.loads((root / "cams" / "index.json").read_text())
    assert sorted(map(int, index)) == list(range(48))
    info = json.loads((root / "cams" / "run.json").read_text())
    assert info["triples"] == 48 and info["nesting_violations"] == 0
    assert "classifier training accuracy" in (root / "cams" / "run.log").read_text()
    assert (root / "cams" / "classifier.ckpt").read_bytes()[:4] == b"DEAL"
    assert main(["audit-cams", "--cams", str(root / "cams")]) == 0
    out = capsys.readouterr().out
    assert "pre-CRF nesting violations: 0 (100.00% nested)" in out


def test_missing_artifacts_exit_3(lab, tmp_path):
    root, cfg = lab
    assert main(["gen-cams", "--config", cfg, "--data", str(tmp_path / "nothing"), "--out", str(tmp_path / "c")]) == 3
    assert main(["run-al", "--config", cfg, "--data", str(root / "data"), "--cams", str(tmp_path / "nothing"), "--out", str(tmp_path / "r")]) == 3
    assert main(["audit-cams", "--cams", str(tmp_path)]) == 3


def test_bad_config_file_exits_2(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[al]\ncycels = 3\n")
    assert main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "d")]) == 2
    assert not (tmp_path / "d").exists()


# ---------------------------------------------------------------- run-al / report


def _run(lab, out, *extra):
    root, cfg = lab
    return main(["run-al", "--config", cfg, "--data", str(root / "data"), "--cams", str(root / "cams"), "--out", str(out), *extra])


def test_dry_run_prints_plan_and_writes_nothing(lab, tmp_path, capsys):
    assert _run(lab, tmp_path / "r", "--dry-run") == 0
    out = capsys.readouterr().out
    assert "plan" in out and "K_g = 2 per cycle" in out
    assert not (tmp_path / "r").exists()


def test_two_strategies_two_comparable_rows(lab, tmp_path):
    assert _run(lab, tmp_path / "r", "--strategy", "random", "--strategy", "deal") == 0
    rows = _rows(tmp_path / "r" / rp.SUMMARY_CSV)
    at_10 = [r for r in rows if r["stage"] == "gt" and r["cycle"] == "1"]
    assert sorted(r["strategy"] for r in at_10) == ["deal", "random"]
    assert len({r["gt_fraction"] for r in at_10}) == 1
    snap = load_config(tmp_path / "r" / "config.toml")
    assert snap["al"]["strategies"] == ["random", "deal"]
    for name in ("reports.jsonl", "summary.md", "learning_curve.svg", "manifest.json", "run.log"):
        assert (tmp_path / "r" / name).is_file()
    svg = (tmp_path / "r" / "learning_curve.svg").read_text()
    assert svg.startswith("<svg") and svg.count("<polyline") == 2
    assert "scores_deal_f0_s0_c1.csv" in {p.name for p in (tmp_path / "r" / "scores").iterdir()}


def test_rerun_with_force_is_bitwise_identical(lab, tmp_path):
    assert _run(lab, tmp_path / "r", "--strategy", "entropy") == 0
    first = (tmp_path / "r" / rp.SUMMARY_CSV).read_bytes()
    assert _run(lab, tmp_path / "r", "--strategy", "entropy") == 2
    assert _run(lab, tmp_path / "r", "--strategy", "entropy", "--force") == 0
    assert (tmp_path / "r" / rp.SUMMARY_CSV).read_bytes() == first


def test_snapshot_reproduces_the_run(lab, tmp_path):
    root, _ = lab
    assert _run(lab, tmp_path / "a", "--strategy", "random", "--seed", "4") == 0
    snap = str(tmp_path / "a" / "config.toml")
    assert main(["run-al", "--config", snap, "--data", str(root / "data"), "--cams", str(root / "cams"), "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / rp.SUMMARY_CSV).read_bytes() == (tmp_path / "b" / rp.SUMMARY_CSV).read_bytes()


def test_ablation_table_has_four_rows(lab, tmp_path):
    assert _run(lab, tmp_path / "r", "--ablation") == 0
    rows = _rows(tmp_path / "r" / "ablation.csv")
    assert [r["setting"] for r in rows] == ["no_discrepancy", "no_cam_divergence", "no_model_divergence", "full"]
    md = (tmp_path / "r" / "ablation.md").read_text().strip().splitlines()
    assert len(md) == 6 and md[0].count("|") == 6


def test_failure_leaves_partial_results_and_marker(lab, tmp_path, monkeypatch):
    from deal_lab.cli import commands

    def exploding(dataset, cams, strategies, config, folds, seeds, out_dir, include_full, on_report):
        from deal_lab.alloop import CycleReport

        on_report(CycleReport("random", 0, 0, 0, "initial", {"CAM": 24, "PSEUDO": 0, "GT": 0}, None, 0, 0.5))
        raise NumericError("NaN loss in step 1")

    monkeypatch.setattr(commands, "run_kfold", exploding)
    assert _run(lab, tmp_path / "r") == 4
    assert "NaN loss" in (tmp_path / "r" / rp.FAILED_MARKER).read_text()
    assert len((tmp_path / "r" / rp.REPORTS_FILE).read_text().splitlines()) == 1
    assert json.loads((tmp_path / "r" / rp.RUN_FILE).read_text())["status"] == "failed"


@pytest.fixture(scope="module")
def seed_runs(lab, tmp_path_factory):
    base = tmp_path_factory.mktemp("seeds")
    dirs = []
    for seed in (0, 1, 2):
        d = base / f"random_s{seed}"
        assert _run(lab, d, "--strategy", "random", "--seed", str(seed)) == 0
        dirs.append(d)
    d = base / "entropy_s0"
    assert _run(lab, d, "--strategy", "entropy", "--seed", "0") == 0
    return base, dirs, d


def test_merge_three_seeds_gives_one_row_with_hand_averages(seed_runs):
    base, dirs, _ = seed_runs
    assert main(["report", *map(str, dirs), "--out", str(base / "merged")]) == 0
    rows = [r for r in _rows(base / "merged" / rp.SUMMARY_CSV) if r["strategy"] == "random"]
    for stage, cycle in (("initial", 0), ("gt", 1), ("gt", 2)):
        row = [r for r in rows if r["stage"] == stage and int(r["cycle"]) == cycle]
        assert len(row) == 1
        dice = [
            json.loads(line)["dice"]
            for d in dirs
            for line in (d / rp.REPORTS_FILE).read_text().splitlines()
            if json.loads(line)["stage"] == stage and json.loads(line)["cycle"] == cycle
        ]
        assert len(dice) == 3 and int(row[0]["n_runs"]) == 3
        assert abs(float(row[0]["mean"]) - sum(dice) / 3) < 1e-9
        hand_std = (sum((x - sum(dice) / 3) ** 2 for x in dice) / 3) ** 0.5
        assert abs(float(row[0]["std"]) - hand_std) < 1e-9


def test_merge_disjoint_strategies(seed_runs):
    base, dirs, entropy = seed_runs
    assert main(["report", str(dirs[0]), str(entropy), "--out", str(base / "mixed")]) == 0
    rows = _rows(base / "mixed" / rp.SUMMARY_CSV)
    assert {r["strategy"] for r in rows} == {"random", "entropy", "full"}
    assert len([r for r in rows if r["stage"] == "gt" and r["cycle"] == "1"]) == 2


def test_schema_mismatch_is_an_explicit_error(seed_runs, tmp_path):
    base, dirs, _ = seed_runs
    old = tmp_path / "old"
    old.mkdir()
    info = json.loads((dirs[0] / rp.RUN_FILE).read_text())
    (old / rp.RUN_FILE).write_text(json.dumps({**info, "schema_version": 0}))
    (old / rp.REPORTS_FILE).write_text((dirs[0] / rp.REPORTS_FILE).read_text())
    assert main(["report", str(dirs[1]), str(old), "--out", str(tmp_path / "m")]) == 2
    with pytest.raises(ConfigError, match="schema version"):
        rp.read_run_info(old)
    assert main(["report", str(tmp_path / "nowhere"), "--out", str(tmp_path / "m2")]) == 3
