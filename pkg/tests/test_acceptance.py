"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line with its measurement.

Criteria 8-10 run the synthetic k-fold protocol end to end through the CLI
(about 2.5 h on one CPU core). Set DEAL_LAB_ACCEPTANCE_DIR to keep the
artifacts; otherwise they go to a pytest temporary directory.
"""
import csv
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from deal_lab.alloop import evaluate
from deal_lab.autograd import Tensor, no_grad, ops
from deal_lab.autograd.gradcheck import check_gradients
from deal_lab.cam import Classifier, CrfParams, channel_weights, crf_refine, generate_cams, grad_cam, raw_cam, train_classifier
from deal_lab.campus import cam_divergence, dice_coefficient, dice_distance, gt_score, knee_locate, model_divergence, prediction_entropy, pseudo_score, select_pseudo
from deal_lab.campus.scores import ScoreRecord
from deal_lab.cli import main
from deal_lab.rng import stream
from deal_lab.segmodel import DiscrepancyModel, Schedule, make_batches, step_optimizer, train_standard, train_step2, train_step3
from deal_lab.synthgen import generate_dataset

from test_autograd import _op_cases

PROTOCOL = """
[dataset]
image_size = 64
counts = [250, 250, 250]
seed = 7
folds = 5

[classifier]
epochs = 15
seed = 0

[segmentation]
step1_epochs = 10
rounds = 3

[al]
strategies = ["deal", "random"]
cycles = 3
budget_fraction = 0.10
seeds = [0, 1, 2]
include_full = true
ablation_gt_fraction = 0.20
"""
PROTOCOL_BUDGET_S = 4 * 3600


def _report(record_property, n, ok, detail):
    record_property("detail", detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


# ---------------------------------------------------------------- 1. autograd


def test_criterion_01_autograd_finite_differences(record_property):
    t0 = time.perf_counter()
    worst, worst_name = 0.0, ""
    for seed in range(10):
        rng = stream(seed, "acceptance-ops")
        cases = list(_op_cases(rng))
        x = Tensor(rng.normal(size=(2, 3, 7, 7)), requires_grad=True)
        w = Tensor(rng.normal(size=(4, 3, 3, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=4), requires_grad=True)
        for stride, padding, dilation in ((1, 1, 1), (2, 0, 1), (1, 2, 2)):
            with no_grad():
                shape = ops.conv2d(x, w, b, stride=stride, padding=padding, dilation=dilation).shape
            probe = Tensor(rng.normal(size=shape))

            def conv(stride=stride, padding=padding, dilation=dilation, probe=probe):
                return ops.sum(ops.conv2d(x, w, b, stride=stride, padding=padding, dilation=dilation) * probe)

            cases.append((f"conv2d s{stride} p{padding} d{dilation}", conv, [x, w, b]))
        for name, fn, inputs in cases:
            err = check_gradients(fn, inputs)
            if err > worst:
                worst, worst_name = err, name
    elapsed = time.perf_counter() - t0
    _report(record_property, 1, worst < 1e-3 and elapsed < 60, f"{len(cases)} ops x 10 seeds, max rel err {worst:.2e} ({worst_name}), {elapsed:.1f} s")


# ---------------------------------------------------------------- 2. Grad-CAM


class _ToyNet:
    def __init__(self, w):
        self.w = Tensor(np.asarray(w, dtype=np.float64).reshape(1, -1))

    def features(self, x):
        return x

    def head(self, a):
        return ops.global_avg_pool(a) @ self.w


def test_criterion_02_gradcam_fidelity(record_property):
    # finite differences of the class score w.r.t. every feature-map entry, averaged per channel
    model = Classifier.init(11)
    img = np.random.default_rng(5).random((1, 3, 64, 64))
    target = 1
    alpha, feats = channel_weights(model, img, target)
    eps = 1e-4
    c, h, w = feats.shape[1:]
    fd = np.zeros(c)
    with no_grad():
        for i in range(c):
            acc = 0.0
            for y in range(h):
                for x in range(w):
                    up, dn = feats.copy(), feats.copy()
                    up[0, i, y, x] += eps
                    dn[0, i, y, x] -= eps
                    acc += (model.head(Tensor(up)).data[0, target] - model.head(Tensor(dn)).data[0, target]) / (2 * eps)
            fd[i] = acc / (h * w)
    rel = float(np.abs(alpha[0] - fd).max() / max(np.abs(fd).max(), 1e-12))

    imgs = np.random.default_rng(6).random((6, 3, 64, 64))
    min_heat = min(float(raw_cam(model, imgs, k % 3).min()) for k in range(3))
    min_heat = min(min_heat, min(float(grad_cam(model, im, 1).min()) for im in imgs))

    toy = np.random.default_rng(7).normal(size=(1, 1, 8, 8))
    toy_err = 0.0
    for cls, wc in enumerate((0.7, -1.3)):
        want = np.maximum(wc / 64.0 * toy[0, 0], 0.0)
        toy_err = max(toy_err, float(np.abs(raw_cam(_ToyNet([0.7, -1.3]), toy, cls)[0] - want).max()))
    ok = rel < 1e-3 and min_heat >= 0.0 and toy_err <= 1e-9
    _report(record_property, 2, ok, f"alpha vs FD rel err {rel:.2e}; min heatmap {min_heat:.3g}; toy-net abs err {toy_err:.1e}")


# ---------------------------------------------------------------- 3. CRF


def test_criterion_03_crf_sanity(record_property):
    rng = np.random.default_rng(3)
    hist = []
    crf_refine(rng.random((16, 16, 3)), rng.random((16, 16)), CrfParams(iterations=6), history=hist)
    simplex = max(float(np.abs(q.sum(axis=1) - 1.0).max()) for q in hist)
    nonneg = all(np.all(q >= 0) for q in hist)

    size = 32
    yy, xx = np.mgrid[0:size, 0:size]
    blob = (yy - 14.5) ** 2 + (xx - 16.5) ** 2 < 9.0**2
    img = np.where(blob[..., None], [0.45, 0.08, 0.08], [0.80, 0.46, 0.34])
    clean = np.where(blob, 0.9, 0.1)
    flip = np.random.default_rng(8).random(blob.shape) < 0.1
    noisy = np.where(flip, 1.0 - clean, clean)
    before = int(np.sum((noisy > 0.5) != blob))
    after = int(np.sum((crf_refine(img, noisy) > 0.5) != blob))
    ok = simplex <= 1e-9 and nonneg and len(hist) == 6 and after < before
    _report(record_property, 3, ok, f"max |sum q - 1| {simplex:.1e} over {len(hist)} iterations; salt-and-pepper disagreement {before} -> {after} px")


# ---------------------------------------------------------------- 5. metric axioms


def test_criterion_05_metric_axioms(record_property):
    rng = np.random.default_rng(55)
    failures = 0
    for k in range(1000):
        shape = (int(rng.integers(1, 12)), int(rng.integers(1, 12)))
        a = rng.random(shape) < rng.uniform(0, 1)
        b = rng.random(shape) < rng.uniform(0, 1) if k % 5 else a.copy()
        d_ab, d_ba = dice_distance(a, b), dice_distance(b, a)
        ok = d_ab == d_ba and 0.0 <= d_ab <= 1.0
        ok &= (d_ab == 0.0) == bool(np.array_equal(a, b) or (not a.any() and not b.any()))
        ok &= dice_coefficient(a, b) == 1.0 - d_ab
        failures += not ok
    # evaluate() on a real model equals the per-sample mean of 1 - dice_distance, bit for bit
    ds = generate_dataset(64, (4, 8, 4), seed=2, folds=0)
    model = DiscrepancyModel.init(1)
    images, masks = ds.images_nchw(), ds.masks()
    head = model.decoders["s"]["head.w"]
    head.data = np.random.default_rng(3).normal(0.0, 2.0, head.data.shape)
    pred = model.predict_standard(images) > 0.5
    want = float(np.mean([1.0 - dice_distance(p, m) for p, m in zip(pred, masks)]))
    got = evaluate(model, images, masks)
    _report(record_property, 5, failures == 0 and got == want, f"{failures} axiom failures on 1000 pairs; evaluate {got!r} vs 1 - distance {want!r}")


# ---------------------------------------------------------------- 6. training-scheme contracts


def _params_bytes(model, *groups):
    return [p.data.tobytes() for p in model.parameters(*groups)]


def test_criterion_06_training_scheme_contracts(record_property):
    t0 = time.perf_counter()
    ds = generate_dataset(64, (100, 100, 100), seed=21, folds=0)
    clf, _ = train_classifier(ds, epochs=12, seed=0)
    cams = generate_cams(clf, ds, ds.ids)
    images = ds.images_nchw()
    y_s = np.stack([cams[i].standard for i in ds.ids])
    y_c = np.stack([cams[i].coarse for i in ds.ids])
    y_f = np.stack([cams[i].fine for i in ds.ids])

    model = DiscrepancyModel.init(0)
    train_standard(model, images, y_s, Schedule(step1_epochs=8), seed=0)
    model.duplicate_decoders()
    tri = model.forward(images)
    bitwise = tri.standard.tobytes() == tri.coarse.tobytes() == tri.fine.tobytes()
    dis_start = float(np.mean(np.abs(tri.coarse - tri.fine)))
    frozen = _params_bytes(model, "encoder", "s")

    lr = 1e-3
    rng = stream(0, "acceptance-step2")
    train_step2(model, make_batches(images, y_s, y_c, y_f, 16, rng), step_optimizer(model, 2, lr))
    tri = model.forward(images)
    dis_after = float(np.mean(np.abs(tri.coarse - tri.fine)))
    frozen2 = _params_bytes(model, "encoder", "s") == frozen

    def objective(t):
        return float(np.mean(np.abs(t.coarse - t.standard)) + np.mean(np.abs(t.fine - t.standard)))

    before = objective(tri)
    train_step3(model, make_batches(images, y_s, y_c, y_f, 16, stream(0, "acceptance-step3")), step_optimizer(model, 3, lr))
    after = objective(model.forward(images))
    frozen3 = _params_bytes(model, "encoder", "s") == frozen
    elapsed = time.perf_counter() - t0
    ok = bitwise and dis_start == 0.0 and dis_after > 0 and frozen2 and frozen3 and after < before and elapsed < 15 * 60
    _report(
        record_property,
        6,
        ok,
        f"triple bitwise {bitwise}; L_dis {dis_start} -> {dis_after:.3e}; frozen after steps 2/3 {frozen2}/{frozen3}; "
        f"step-3 objective {before:.5f} -> {after:.5f}; {elapsed:.0f} s on 300 samples",
    )


# ---------------------------------------------------------------- 7. CAMPUS values


def test_criterion_07_campus_values(record_property):
    errs = {}
    a = np.array([[1, 1, 1], [0, 0, 0]], bool)
    b = np.array([[1, 1, 0], [1, 0, 0]], bool)  # TP 2, FP 1, FN 1
    errs["dice 1/3"] = abs(dice_distance(a, b) - 1.0 / 3.0)
    half = np.full((8, 8), 0.5)
    errs["entropy 0.3466"] = abs(prediction_entropy(half) - 0.5 * math.log(2))
    errs["S_md 0.6931"] = abs(model_divergence(half, np.ones((8, 8)), np.zeros((8, 8))) - 2 * 0.5 * math.log(2))
    y = np.zeros(64, bool)
    y[:10] = True
    preds = []
    for tp, fp in ((10, 5), (6, 4), (5, 10)):
        p = np.zeros(64, bool)
        p[:tp] = True
        p[10 : 10 + fp] = True
        preds.append(p)
    errs["S_cd 0.6"] = abs(cam_divergence(*preds, y) - 0.6)
    errs["S_p 1.5"] = abs(pseudo_score(0.5, 0.6) - 1.5)
    errs["S_g 0.3"] = abs(gt_score(0.5, 0.6) - 0.3)
    x = np.linspace(0, 1, 101)
    yk = x**2
    brute = int(np.argmax(x - (yk - yk[0]) / (yk[-1] - yk[0])))
    k = knee_locate(yk)
    errs["knee x^2"] = 0.0 if k == brute and abs(x[k] - 0.5) <= 0.01 + 1e-12 else abs(x[k] - 0.5)
    rng = np.random.default_rng(5)
    s_md = np.concatenate([rng.uniform(0, 1e-3, 10), rng.uniform(0, 0.05, 90)])
    s_cd = np.concatenate([rng.uniform(1.2, 1.6, 10), rng.uniform(0, 0.02, 90)])
    recs = [ScoreRecord(i, 0.0, m, c, pseudo_score(m, c), gt_score(m, c)) for i, (m, c) in enumerate(zip(s_md, s_cd))]
    chosen, _ = select_pseudo(recs)
    errs["pool of 10"] = 0.0 if chosen == list(range(10)) else 1.0
    worst = max(errs, key=errs.get)
    _report(record_property, 7, errs[worst] <= 1e-9, f"{len(errs)} values, worst |error| {errs[worst]:.1e} ({worst})")


# ---------------------------------------------------------------- 4, 8, 9, 10. synthetic protocol


@pytest.fixture(scope="session")
def protocol(tmp_path_factory):
    env = os.environ.get("DEAL_LAB_ACCEPTANCE_DIR")
    root = Path(env) if env else tmp_path_factory.mktemp("acceptance")
    root.mkdir(parents=True, exist_ok=True)
    cfg = root / "protocol.toml"
    cfg.write_text(PROTOCOL)
    c = str(cfg)
    timings = {}

    def run(name, *args):
        t0 = time.perf_counter()
        rc = main([*args, "--config", c, "--force"])
        timings[name] = time.perf_counter() - t0
        assert rc == 0, f"{name} exited with {rc}"

    run("gen-data", "gen-data", "--out", str(root / "data"))
    run("gen-cams", "gen-cams", "--data", str(root / "data"), "--out", str(root / "cams"))
    common = ["--data", str(root / "data"), "--cams", str(root / "cams")]
    run("kfold", "run-al", *common, "--kfold", "--out", str(root / "kfold_a"))
    run("ablation", "run-al", *common, "--ablation", "--out", str(root / "ablation"))
    run("kfold-rerun", "run-al", *common, "--kfold", "--out", str(root / "kfold_b"))
    return root, timings


def _summary(path):
    with open(path) as fh:
        return {(r["strategy"], r["stage"], int(r["cycle"])): float(r["mean"]) for r in csv.DictReader(fh)}


def test_criterion_04_cam_nesting_audit(protocol, record_property, capsys):
    root, _ = protocol
    rc = main(["audit-cams", "--cams", str(root / "cams")])
    out = capsys.readouterr().out
    line = next(l for l in out.splitlines() if l.startswith("pre-CRF"))
    _report(record_property, 4, rc == 0 and "violations: 0 " in line, f"audit-cams exit {rc}; {line}")


def test_criterion_08_table1_directions(protocol, record_property):
    root, timings = protocol
    s = _summary(root / "kfold_a" / "summary.csv")
    initial, pseudo = s[("deal", "initial", 0)], s[("deal", "pseudo", 0)]
    deal = [s[("deal", "gt", c)] for c in (1, 2, 3)]
    rand = [s[("random", "gt", c)] for c in (1, 2, 3)]
    full = s[("full", "full", 0)]
    partial = [v for k, v in s.items() if k[1] != "full"]
    a = pseudo > initial
    b = deal[0] >= rand[0] - 0.005 and np.mean(deal) > np.mean(rand)
    c = all(full > v for v in partial)
    curve = [pseudo] + deal
    d = all(nxt >= prev - 0.01 for prev, nxt in zip(curve, curve[1:]))
    elapsed = timings["gen-data"] + timings["gen-cams"] + timings["kfold"]
    t = elapsed < PROTOCOL_BUDGET_S
    detail = (
        f"(a) pseudo {pseudo:.4f} vs initial {initial:.4f} {a}; "
        f"(b) DEAL {' '.join(f'{v:.4f}' for v in deal)} vs RANDOM {' '.join(f'{v:.4f}' for v in rand)} {b}; "
        f"(c) full {full:.4f} {c}; (d) {d}; runtime {elapsed / 60:.0f} min {t}"
    )
    _report(record_property, 8, a and b and c and d and t, detail)


def test_criterion_09_table2_directions(protocol, record_property):
    root, _ = protocol
    with open(root / "ablation" / "ablation.csv") as fh:
        rows = {r["setting"]: r for r in csv.DictReader(fh)}
    gt = {k: float(r["delta_gt"]) for k, r in rows.items()}
    ps = {k: float(r["delta_pseudo"]) for k, r in rows.items()}
    gt_ok = all(gt["full"] >= gt[k] for k in gt)
    ps_ok = ps["no_discrepancy"] < ps["full"]
    detail = "; ".join(f"{k}: pseudo {100 * ps[k]:+.2f}% gt {100 * gt[k]:+.2f}%" for k in rows)
    _report(record_property, 9, gt_ok and ps_ok, f"GT order {gt_ok}, pseudo sign {ps_ok}; {detail}")


def test_criterion_10_determinism(protocol, record_property):
    root, _ = protocol
    a = (root / "kfold_a" / "summary.csv").read_bytes()
    b = (root / "kfold_b" / "summary.csv").read_bytes()
    _report(record_property, 10, a == b and len(a) > 0, f"summary CSVs of two identical k-fold runs {'identical' if a == b else 'differ'} ({len(a)} bytes)")
