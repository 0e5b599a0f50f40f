"""Pixel-wise crack segmentation metrics.

Crack is the positive class. Dataset metrics are micro-averaged: confusion
counts are summed over all images before any ratio is taken. Zero
denominators yield 0 for precision, recall, F1 and IoU. Matching is strict
per pixel, with no boundary tolerance.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import ArgumentError, DimensionError

REPORT_COLUMNS = ("dataset", "n_images", "precision", "recall", "accuracy", "f1", "iou")
METRIC_NAMES = ("precision", "recall", "accuracy", "f1", "iou")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    recall: float
    accuracy: float
    f1: float
    iou: float
    dataset_id: str = ""
    n_images: int = 1

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_NAMES}


def _as_binary(name: str, arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    if not np.isin(arr, (0, 1)).all():
        raise ArgumentError(f"{name} map is not strictly binary")
    return arr.astype(bool)


def confusion_counts(pred: np.ndarray, gt: np.ndarray) -> ConfusionCounts:
    if np.shape(pred) != np.shape(gt):
        raise DimensionError(f"prediction {np.shape(pred)} and ground truth {np.shape(gt)} differ")
    p = _as_binary("prediction", pred)
    g = _as_binary("ground-truth", gt)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return ConfusionCounts(tp, fp, p.size - tp - fp - fn, fn)


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def compute_metrics(counts: ConfusionCounts | Iterable[ConfusionCounts], dataset_id: str = "", n_images: int | None = None) -> MetricsReport:
    if isinstance(counts, ConfusionCounts):
        total_counts, n = counts, 1
    else:
        items = list(counts)
        total_counts = sum(items, ConfusionCounts())
        n = len(items)
    c = total_counts
    if c.total == 0:
        raise ArgumentError("cannot compute metrics over zero pixels")
    precision = _ratio(c.tp, c.tp + c.fp)
    recall = _ratio(c.tp, c.tp + c.fn)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return MetricsReport(
        precision=precision,
        recall=recall,
        accuracy=(c.tp + c.tn) / c.total,
        f1=f1,
        iou=_ratio(c.tp, c.tp + c.fp + c.fn),
        dataset_id=dataset_id,
        n_images=n if n_images is None else n_images,
    )


def format_percent(value: float) -> str:
    return f"{100.0 * value:.3f}"


def write_report(reports: Sequence[MetricsReport], path: str | Path) -> Path:
    """CSV with percentages to three decimals; raises ValueError on NaN metrics."""
    if not reports:
        raise ArgumentError("no metrics reports to write")
    for r in reports:
        if any(math.isnan(v) for v in r.as_dict().values()):
            raise ValueError(f"NaN metric in report for {r.dataset_id!r}")
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for r in reports:
            writer.writerow([r.dataset_id, r.n_images, *(format_percent(getattr(r, m)) for m in METRIC_NAMES)])
    return path


def read_report(path: str | Path) -> list[dict[str, str]]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def pixel_auroc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Area under the ROC curve via the rank-sum statistic (ties get mid-ranks)."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).astype(bool).ravel()
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ArgumentError("AUROC needs both positive and negative pixels")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))
