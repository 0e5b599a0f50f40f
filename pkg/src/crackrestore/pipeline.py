"""Dataset-level detect, evaluate and ablation runs shared by the CLI and tests."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from . import figures
from .config import RunConfig
from .data import Split, discover_dataset, load_image, load_mask, save_image
from .detector import DetectParams, detect, overlay, quantize
from .errors import PairingError
from .evalkit import (
    MetricsReport,
    compute_metrics,
    confusion_counts,
    pixel_auroc,
    write_report,
)
from .model import generator_from_checkpoint, load_checkpoint
from .trainer import TrainConfig, fit

log = logging.getLogger(__name__)

N_PANELS = 4

# (name, mae, ssim, msgms, style, adv), rows of the loss ablation table
LOSS_ABLATION = (
    ("mae", 1, 0, 0, 0, 0),
    ("mae+ssim", 1, 1, 0, 0, 0),
    ("mae+msgms", 1, 0, 1, 0, 0),
    ("mae+style", 1, 0, 0, 1, 0),
    ("mae+adv", 1, 0, 0, 0, 1),
    ("mae+ssim+msgms", 1, 1, 1, 0, 0),
    ("mae+ssim+msgms+style", 1, 1, 1, 1, 0),
    ("mae+ssim+msgms+adv", 1, 1, 1, 0, 1),
    ("all", 1, 1, 1, 1, 1),
)
MASK_ABLATION = ("jumbled", "striped", "multiscale_square")
ABLATION_COLUMNS = ("config", "mae", "ssim", "msgms", "style", "adv", "mask_mode",
                    "precision", "recall", "accuracy", "f1", "iou")


@dataclass
class DetectionResult:
    stems: list[str] = field(default_factory=list)
    crack_maps: list[np.ndarray] = field(default_factory=list)
    errors: list[np.ndarray] = field(default_factory=list)
    ground_truths: list[np.ndarray | None] = field(default_factory=list)

    def report(self, dataset_id: str = "") -> MetricsReport:
        counts = [confusion_counts(p, g) for p, g in zip(self.crack_maps, self.ground_truths) if g is not None]
        return compute_metrics(counts, dataset_id)

    def auroc(self) -> float:
        pairs = [(e, g) for e, g in zip(self.errors, self.ground_truths) if g is not None]
        return pixel_auroc(np.concatenate([e.ravel() for e, _ in pairs]), np.concatenate([g.ravel() for _, g in pairs]))


def detect_dataset(
    checkpoint: str | Path,
    data_root: str | Path,
    out_dir: str | Path | None = None,
    params: DetectParams = DetectParams(),
    save_error_maps: bool = True,
) -> DetectionResult:
    """Run detection over ``data_root/test/images``; optionally write PNG outputs."""
    state = load_checkpoint(checkpoint)
    train_config = TrainConfig.from_dict(state["config"])
    generator = generator_from_checkpoint(state)
    pool = train_config.mask_pool()
    size = train_config.image_size
    manifest = discover_dataset(data_root, size)[Split.TEST]

    if out_dir is not None:
        out_dir = Path(out_dir)
        for sub in ("masks", "errors", "overlays", "figures"):
            (out_dir / sub).mkdir(parents=True, exist_ok=True)

    result = DetectionResult()
    for i, entry in enumerate(manifest.entries):
        image = load_image(entry.image, size)
        gt = load_mask(entry.ground_truth, size) if entry.ground_truth else None
        det = detect(generator, image, params, pool)
        result.stems.append(entry.stem)
        result.crack_maps.append(det.crack_map)
        result.errors.append(det.error)
        result.ground_truths.append(gt)
        if out_dir is None:
            continue
        cv2.imwrite(str(out_dir / "masks" / f"{entry.stem}.png"), det.crack_map * 255)
        if save_error_maps:
            q = quantize(det.error)
            cv2.imwrite(str(out_dir / "errors" / f"{entry.stem}.png"), q if q is not None else np.zeros_like(det.crack_map))
        over = overlay(image, det.crack_map, gt) if gt is not None else None
        if over is not None:
            save_image(out_dir / "overlays" / f"{entry.stem}.png", over)
        if i < N_PANELS:
            figures.plot_detection(image, det.restored, det.error, det.crack_map,
                                   out_dir / "figures" / f"{entry.stem}.png", gt=gt, overlay=over)
    return result


def evaluate_dirs(pred_dir: str | Path, gt_dir: str | Path, dataset_id: str = "") -> MetricsReport:
    """Micro-averaged metrics of predicted masks against ground-truth masks, paired by stem."""
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    preds = {p.stem: p for p in sorted(pred_dir.glob("*.png"))}
    gts = {p.stem: p for p in sorted(gt_dir.glob("*.png"))}
    if set(preds) != set(gts) or not gts:
        missing = sorted(set(gts) - set(preds))
        extra = sorted(set(preds) - set(gts))
        raise PairingError(
            f"{len(preds)} predictions vs {len(gts)} ground truths"
            f" (missing predictions: {missing[:5]}, unmatched predictions: {extra[:5]})"
        )
    counts = []
    for stem in sorted(gts):
        pred = load_mask(preds[stem])
        gt = load_mask(gts[stem])
        if gt.shape != pred.shape:
            # predictions live at the model resolution
            gt = cv2.resize(gt, pred.shape[::-1], interpolation=cv2.INTER_NEAREST)
        counts.append(confusion_counts(pred, gt))
    return compute_metrics(counts, dataset_id)


def ablation_configs(study: str, base: RunConfig) -> list[tuple[str, RunConfig, dict]]:
    """Named run configurations for the loss or mask-mode ablation."""
    runs = []
    if study == "losses":
        for name, mae, ssim, gms, style, adv in LOSS_ABLATION:
            if style and base["no_style"]:
                log.warning("skipping %s: style loss disabled (no_style)", name)
                continue
            overrides = {
                "lambda_mae": base["lambda_mae"] * mae,
                "lambda_ssim": base["lambda_ssim"] * ssim,
                "lambda_gms": base["lambda_gms"] * gms,
                "lambda_style": base["lambda_style"] * style,
                "lambda_adv": base["lambda_adv"] * adv,
                "freeze_d": not adv,
            }
            flags = {"mae": mae, "ssim": ssim, "msgms": gms, "style": style, "adv": adv, "mask_mode": base["mask_mode"]}
            runs.append((name, base.with_overrides(overrides, "ablate"), flags))
    elif study == "masks":
        for mode in MASK_ABLATION:
            flags = {"mae": 1, "ssim": 1, "msgms": 1, "style": int(not base["no_style"]), "adv": 1, "mask_mode": mode}
            runs.append((mode, base.with_overrides({"mask_mode": mode}, "ablate"), flags))
    else:
        raise ValueError(f"unknown ablation study {study!r}")
    return runs


def run_ablation(study: str, base: RunConfig, only: list[str] | None = None) -> Path:
    run_dir = Path(base["run_dir"])
    run_dir.mkdir(parents=True, exist_ok=True)
    manifests = discover_dataset(base["data_root"], base["image_size"])
    rows, reports, labels = [], [], []
    for name, cfg, flags in ablation_configs(study, base):
        if only and name not in only:
            continue
        sub = run_dir / name
        cfg = cfg.with_overrides({"run_dir": str(sub)}, "ablate")
        cfg.write_resolved(sub)
        log.info("ablation run %s", name)
        best, history = fit(cfg.train_config(), manifests[Split.TRAIN], manifests[Split.VAL], sub)
        figures.plot_history(history.rows, sub / "history.png", history.best_epoch)
        result = detect_dataset(best, base["data_root"], sub / "detect", cfg.detect_params(), cfg["save_error_maps"])
        report = result.report(name)
        write_report([report], sub / "metrics.csv")
        rows.append({**{"config": name}, **flags, **{m: f"{100 * v:.3f}" for m, v in report.as_dict().items()}})
        reports.append(report)
        labels.append(name)
    out = run_dir / f"ablation_{study}.csv"
    with out.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=ABLATION_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    if reports:
        figures.plot_metrics(reports, run_dir / f"ablation_{study}.png", labels)
    return out
