"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The desk-scale training runs (criteria 8 and 9) take tens of minutes on a
single CPU; they are marked ``slow`` but run by default. Set
``CRACKRESTORE_ACCEPT_WIDTH`` to shrink the network for a quicker look.
"""

import csv
import math
import os
import time

import numpy as np
import pytest
import torch

from crackrestore.cli import main
from crackrestore.config import load_config
from crackrestore.data import Split, discover_dataset, generate_synthetic_dataset
from crackrestore.detector import otsu_level, quantize, smooth_bilateral
from crackrestore.evalkit import compute_metrics, confusion_counts
from crackrestore.losses import (
    LossWeights,
    adversarial_losses,
    gms_map,
    mae_loss,
    msgms_loss,
    ssim_loss,
    ssim_map,
    style_loss,
)
from crackrestore.masks import build_mask_pool, corrupt
from crackrestore.pipeline import detect_dataset
from crackrestore.trainer import TrainConfig, fit

import oracles
from conftest import record

ACCEPT_WIDTH = int(os.environ.get("CRACKRESTORE_ACCEPT_WIDTH", "64"))


def _rel(a, b):
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-12)))


def _toy_extractor():
    g = torch.Generator().manual_seed(0)
    w1 = torch.randn(4, 3, 3, 3, generator=g, dtype=torch.float64) * 0.3
    w2 = torch.randn(6, 4, 3, 3, generator=g, dtype=torch.float64) * 0.3

    def extractor(x):
        h1 = torch.relu(torch.nn.functional.conv2d(x, w1, padding=1))
        return [h1, torch.relu(torch.nn.functional.conv2d(h1, w2, stride=2, padding=1))]

    return extractor


def test_c01_otsu_oracle():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    mismatches = 0
    for _ in range(200):
        hist = rng.integers(0, 1000, 256) * (rng.random(256) < rng.uniform(0.05, 1.0))
        if hist.sum() == 0:
            hist[rng.integers(256)] = 1
        mismatches += otsu_level(hist) != oracles.otsu(hist)
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 5
    record("C1 Otsu oracle", ok, f"{mismatches} mismatches / 200 histograms in {elapsed:.2f}s (< 5s)")
    assert ok


def test_c02_loss_oracles():
    rng = np.random.default_rng(7)
    extractor = _toy_extractor()
    start = time.perf_counter()
    worst = {k: 0.0 for k in ("mae", "ssim", "gms_map", "msgms", "style", "adv_g", "adv_d")}
    for _ in range(50):
        a = rng.random((1, 3, 16, 16))
        b = np.clip(a + rng.normal(0, rng.uniform(0.01, 0.5), a.shape), 0, 1)
        ta, tb = torch.from_numpy(a), torch.from_numpy(b)
        worst["mae"] = max(worst["mae"], _rel(float(mae_loss(ta, tb)), oracles.mae(a, b)))
        worst["ssim"] = max(worst["ssim"], _rel(float(ssim_loss(ta, tb)), oracles.ssim_loss(a[0], b[0])))
        worst["gms_map"] = max(worst["gms_map"], _rel(gms_map(ta, tb)[0, 0].numpy(), oracles.gms_map(a[0], b[0])))
        worst["msgms"] = max(worst["msgms"], _rel(float(msgms_loss(ta, tb)), oracles.msgms_loss(a[0], b[0])))
        sa, sb = ta[:, :, :8, :8], tb[:, :, :8, :8]
        with torch.no_grad():
            got = float(style_loss(sa, sb, extractor))
            fa = [f[0].numpy() for f in extractor(sa)]
            fb = [f[0].numpy() for f in extractor(sb)]
        worst["style"] = max(worst["style"], _rel(got, oracles.style_loss(fa, fb)))
        real = rng.normal(0, 3, (2, 1, 6, 6))
        fake = rng.normal(0, 3, (2, 1, 6, 6))
        g, d = adversarial_losses(torch.from_numpy(real), torch.from_numpy(fake))
        og, od = oracles.adversarial(real, fake)
        worst["adv_g"] = max(worst["adv_g"], _rel(float(g), og))
        worst["adv_d"] = max(worst["adv_d"], _rel(float(d), od))
    elapsed = time.perf_counter() - start
    ok = all(v < (1e-5 if k == "style" else 1e-6) for k, v in worst.items()) and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    record("C2 loss oracles", ok, f"max rel err {detail}; {elapsed:.1f}s (< 60s)")
    assert ok


def test_c03_identity_suite():
    rng = np.random.default_rng(3)
    extractor = _toy_extractor()
    worst = 0.0
    for _ in range(20):
        x = torch.from_numpy(rng.random((1, 3, 32, 32)))
        with torch.no_grad():
            vals = [mae_loss(x, x), ssim_loss(x, x), msgms_loss(x, x), style_loss(x, x, extractor)]
        worst = max(worst, max(abs(float(v)) for v in vals))
    ok = worst < 1e-8
    record("C3 identity suite", ok, f"max loss on (x, x) = {worst:.2e} (< 1e-8) over 20 images")
    assert ok


def _grad_rel_err(fn, rng, n_coords=12, eps=1e-6):
    a = torch.from_numpy(rng.random((1, 3, 16, 16)))
    b = torch.from_numpy(rng.random((1, 3, 16, 16)))
    a.requires_grad_(True)
    fn(a, b).backward()
    grad = a.grad.reshape(-1)
    flat = a.detach().reshape(-1)
    worst = 0.0
    for idx in rng.choice(flat.numel(), n_coords, replace=False):
        plus, minus = flat.clone(), flat.clone()
        plus[idx] += eps
        minus[idx] -= eps
        with torch.no_grad():
            num = (float(fn(plus.view_as(a), b)) - float(fn(minus.view_as(a), b))) / (2 * eps)
        ana = float(grad[idx])
        worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-12))
    return worst


def test_c04_gradient_checks():
    rng = np.random.default_rng(4)
    errs = {name: _grad_rel_err(fn, rng) for name, fn in (("ssim", ssim_loss), ("msgms", msgms_loss))}
    ok = all(v < 1e-3 for v in errs.values())
    record("C4 gradient checks", ok, ", ".join(f"{k} max rel err {v:.1e}" for k, v in errs.items()) + " (< 1e-3, float64, 12 coords)")
    assert ok


def test_c05_mask_invariants():
    pool = build_mask_pool(256, 256, (128, 64, 32))
    balanced = all(int(m.grid.sum()) * 2 == m.grid.size for m in pool.masks)
    tiles = all(((a.grid + b.grid) == 1).all() for a, b in pool.pairs())
    x = np.random.default_rng(5).random((256, 256, 3))
    exact = all(np.array_equal(corrupt(x, a) + corrupt(x, b), x) for a, b in pool.pairs())
    ok = balanced and tiles and exact and len(pool) == 6
    record("C5 mask invariants", ok, f"{len(pool)} masks, 1:1 ratio {balanced}, complements tile {tiles}, corrupt sum exact {exact}")
    assert ok


def test_c06_bilateral_oracle():
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(5):
        values = rng.random((16, 16))
        got = smooth_bilateral(values, 9, 75, 75)
        ref = oracles.bilateral(quantize(values).astype(float), 9, 75, 75)
        worst = max(worst, float(np.abs(got - ref).max()))
    ok = worst <= 1.0
    record("C6 bilateral oracle", ok, f"max |filter - brute force| = {worst:.3f} 8-bit levels (<= 1) on 5 random 16x16 maps")
    assert ok


def test_c07_metrics_oracle():
    rng = np.random.default_rng(7)
    exact = True
    all_counts, preds, gts = [], [], []
    for _ in range(100):
        pred = (rng.random((16, 16)) < rng.random()).astype(np.uint8)
        gt = (rng.random((16, 16)) < rng.random()).astype(np.uint8)
        c = confusion_counts(pred, gt)
        ref = oracles.confusion(pred, gt)
        exact &= (c.tp, c.fp, c.tn, c.fn) == ref
        exact &= compute_metrics(c).as_dict() == oracles.metrics(*ref)
        all_counts.append(c)
        preds.append(pred)
        gts.append(gt)
    micro = compute_metrics(all_counts).as_dict()
    concat = compute_metrics(confusion_counts(np.concatenate(preds), np.concatenate(gts))).as_dict()
    ok = exact and micro == concat
    record("C7 metrics oracle", ok, f"100 pairs exact {exact}, micro == concatenated {micro == concat}")
    assert ok


# -- desk-scale experiments ----------------------------------------------------

DESK_EPOCHS = 30


@pytest.fixture(scope="module")
def desk_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk") / "synthetic"
    generate_synthetic_dataset(root, 100, 20, seed=0, size=128)
    return root


def _desk_run(root, run_dir, weights, freeze_d=False):
    config = TrainConfig(epochs=DESK_EPOCHS, image_size=128, weights=weights, no_style=True,
                         base_width=ACCEPT_WIDTH, freeze_d=freeze_d)
    manifests = discover_dataset(root, 128)
    start = time.perf_counter()
    best, history = fit(config, manifests[Split.TRAIN], manifests[Split.VAL], run_dir)
    result = detect_dataset(best, root, run_dir / "detect")
    return result.report("synthetic"), result.auroc(), history, time.perf_counter() - start


@pytest.fixture(scope="module")
def all_losses_run(desk_data, tmp_path_factory):
    return _desk_run(desk_data, tmp_path_factory.mktemp("all"), LossWeights())


@pytest.mark.slow
def test_c08_desk_experiment(all_losses_run):
    report, auroc, history, seconds = all_losses_run
    ok = report.f1 >= 0.40 and report.iou >= 0.30 and auroc >= 0.85 and seconds <= 3 * 3600
    record("C8 desk-scale synthetic", ok,
           f"F1 {report.f1:.3f} (>= 0.40), IoU {report.iou:.3f} (>= 0.30), AUROC {auroc:.3f} (>= 0.85), "
           f"{len(history.rows)} epochs (best {history.best_epoch}), {seconds / 60:.1f} min CPU, width {ACCEPT_WIDTH}")
    assert ok


@pytest.mark.slow
def test_c09_ablation_direction(all_losses_run, desk_data, tmp_path_factory):
    mae_only = LossWeights(lambda_ssim=0.0, lambda_gms=0.0, lambda_style=0.0, lambda_adv=0.0)
    mae_report, _, _, _ = _desk_run(desk_data, tmp_path_factory.mktemp("mae"), mae_only, freeze_d=True)
    all_report = all_losses_run[0]
    ok = all_report.f1 >= mae_report.f1
    record("C9 ablation direction", ok, f"all-losses F1 {all_report.f1:.3f} >= MAE-only F1 {mae_report.f1:.3f}")
    assert ok


def test_c10_reproducibility(tmp_path):
    root = tmp_path / "data"
    generate_synthetic_dataset(root, 12, 2, seed=1, n_val=3, size=64)
    flags = {"image_size": "64", "epochs": "6", "patience": "2", "batch_size": "4",
             "base_width": "8", "no_style": "true", "seed": "3"}
    runs = []
    for name in ("a", "b"):
        cfg = load_config(None, {**flags, "run_dir": str(tmp_path / name)})
        m = discover_dataset(root, 64)
        runs.append(fit(cfg.train_config(), m[Split.TRAIN], m[Split.VAL], tmp_path / name)[1])
    a, b = runs
    cols = ("mae", "ssim", "msgms", "adv_g", "adv_d", "res", "total", "val_res")
    same_len = len(a.rows) == len(b.rows)
    worst = max(abs(ra[c] - rb[c]) for ra, rb in zip(a.rows, b.rows) for c in cols)
    ok = same_len and worst <= 1e-5 and a.best_epoch == b.best_epoch
    record("C10 reproducibility", ok,
           f"stop epochs {len(a.rows)} / {len(b.rows)}, best {a.best_epoch} / {b.best_epoch}, max per-epoch loss diff {worst:.1e} (<= 1e-5)")
    assert ok


def test_c11_cli_smoke(tmp_path):
    start = time.perf_counter()
    common = ["--data-root", str(tmp_path / "data"), "--run-dir", str(tmp_path / "run"), "--image-size", "64"]
    codes = [
        main(["synth", *common]),
        main(["train", *common, "--epochs", "2", "--patience", "1", "--no-style"]),
        main(["detect", *common]),
        main(["eval", *common]),
    ]
    elapsed = time.perf_counter() - start
    well_formed = False
    path = tmp_path / "run" / "metrics.csv"
    if path.is_file():
        with path.open() as fh:
            rows = list(csv.DictReader(fh))
        metrics = ("precision", "recall", "accuracy", "f1", "iou")
        well_formed = len(rows) == 1 and all(0 <= float(rows[0][m]) <= 100 for m in metrics)
        well_formed &= list(rows[0]) == ["dataset", "n_images", *metrics]
    ok = codes == [0, 0, 0, 0] and well_formed and elapsed < 300
    record("C11 CLI smoke", ok, f"exit codes {codes}, 5-metric CSV {well_formed}, {elapsed:.0f}s (< 300s)")
    assert ok
