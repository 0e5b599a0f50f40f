"""Crack detection from restoration residuals.

    crack map = otsu(bilateral(mean_c((restored - image) ** 2)))
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import cv2
import numpy as np
import torch

from .data import denormalize, normalize
from .errors import ArgumentError, DimensionError, StateError
from .masks import MaskPool, corrupt


class RestoreStrategy(str, enum.Enum):
    DIRECT = "direct"
    MASKED_ENSEMBLE = "masked_ensemble"


@dataclass(frozen=True)
class DetectParams:
    strategy: RestoreStrategy = RestoreStrategy.DIRECT
    bilateral_diameter: int = 9
    bilateral_sigma_intensity: float = 75.0
    bilateral_sigma_spatial: float = 75.0
    # dropout at inference, for experimentation only
    stochastic: bool = False


@dataclass
class Detection:
    restored: np.ndarray
    error: np.ndarray
    smoothed: np.ndarray
    threshold: int
    crack_map: np.ndarray
    no_anomaly: bool


def _run_generator(generator, images: np.ndarray, stochastic: bool) -> np.ndarray:
    """``N x H x W x C`` unit-range batch in, unit-range batch out."""
    x = torch.from_numpy(normalize(images).transpose(0, 3, 1, 2).copy()).float()
    was_training = generator.training
    generator.train(stochastic)
    try:
        with torch.no_grad():
            y = generator(x)
    finally:
        generator.train(was_training)
    return np.clip(denormalize(y.numpy().transpose(0, 2, 3, 1)), 0.0, 1.0)


def restore(
    generator,
    image: np.ndarray,
    strategy: RestoreStrategy | str = RestoreStrategy.DIRECT,
    pool: MaskPool | None = None,
    stochastic: bool = False,
) -> np.ndarray:
    """Restore an ``H x W x C`` unit-range image.

    ``masked_ensemble`` restores each complement pair of corruptions, keeps
    every pixel from the pass in which it was removed, and averages the
    per-scale compositions.
    """
    if generator is None:
        raise StateError("no trained generator loaded")
    strategy = RestoreStrategy(strategy)
    if strategy is RestoreStrategy.DIRECT:
        return _run_generator(generator, image[None], stochastic)[0]

    if pool is None or len(pool) == 0:
        raise StateError("masked_ensemble restoration needs a mask pool")
    pairs = pool.pairs()
    batch = np.stack([corrupt(image, m) for pair in pairs for m in pair])
    restored = _run_generator(generator, batch, stochastic)
    composed = []
    for i, (mask, comp) in enumerate(pairs):
        removed_by_first = (1 - mask.grid)[:, :, None]
        composed.append(restored[2 * i] * removed_by_first + restored[2 * i + 1] * (1 - removed_by_first))
    return np.mean(composed, axis=0).astype(np.float32)


def error_map(image: np.ndarray, restored: np.ndarray) -> np.ndarray:
    """Channel mean of the squared residual, in unit-range units."""
    if image.shape != restored.shape:
        raise DimensionError(f"shape mismatch: {image.shape} vs {restored.shape}")
    diff = restored.astype(np.float64) - image.astype(np.float64)
    sq = diff * diff
    return sq.mean(axis=2) if sq.ndim == 3 else sq


def quantize(values: np.ndarray) -> np.ndarray | None:
    """Min-max scale to 0..255 uint8; ``None`` for a constant map."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = values.min(), values.max()
    if not hi > lo:
        return None
    return np.clip(np.rint((values - lo) / (hi - lo) * 255.0), 0, 255).astype(np.uint8)


def smooth_bilateral(
    values: np.ndarray,
    diameter: int = 9,
    sigma_intensity: float = 75.0,
    sigma_spatial: float = 75.0,
) -> np.ndarray:
    """Edge-preserving smoothing of the 8-bit min-max-scaled map.

    Returns a float map in 8-bit units; a constant map is returned unchanged.
    """
    if diameter < 3 or diameter % 2 == 0:
        raise ArgumentError(f"bilateral diameter must be odd and >= 3, got {diameter}")
    q = quantize(values)
    if q is None:
        return np.array(values, dtype=np.float64, copy=True)
    out = cv2.bilateralFilter(q, diameter, sigma_intensity, sigma_spatial, borderType=cv2.BORDER_REFLECT_101)
    return out.astype(np.float64)


def otsu_level(hist: np.ndarray) -> int:
    """Level ``t`` maximizing between-class variance of classes ``<= t`` and ``> t``.

    Ties resolve to the lowest level.
    """
    hist = np.asarray(hist, dtype=np.float64)
    total = hist.sum()
    levels = np.arange(hist.size, dtype=np.float64)
    w0 = np.cumsum(hist)
    m0 = np.cumsum(hist * levels)
    mt = m0[-1]
    w1 = total - w0
    with np.errstate(divide="ignore", invalid="ignore"):
        between = (mt * w0 - m0 * total) ** 2 / (w0 * w1)
    between[(w0 == 0) | (w1 == 0)] = 0.0
    return int(np.argmax(between))


def otsu_threshold(values: np.ndarray) -> tuple[int, np.ndarray, bool]:
    """Binarize a map with Otsu's threshold on its 256-level quantization.

    Returns ``(threshold, crack_map, no_anomaly)``; a constant map yields an
    all-zero crack map with ``no_anomaly`` set.
    """
    q = quantize(values)
    if q is None:
        return 0, np.zeros(np.shape(values), np.uint8), True
    t = otsu_level(np.bincount(q.ravel(), minlength=256))
    return t, (q > t).astype(np.uint8), False


def detect(
    generator,
    image: np.ndarray,
    params: DetectParams = DetectParams(),
    pool: MaskPool | None = None,
) -> Detection:
    restored = restore(generator, image, params.strategy, pool, params.stochastic)
    return detect_from_restoration(image, restored, params)


def detect_from_restoration(image: np.ndarray, restored: np.ndarray, params: DetectParams = DetectParams()) -> Detection:
    err = error_map(image, restored)
    smoothed = smooth_bilateral(
        err, params.bilateral_diameter, params.bilateral_sigma_intensity, params.bilateral_sigma_spatial
    )
    t, crack, no_anomaly = otsu_threshold(smoothed)
    return Detection(restored, err, smoothed, t, crack, no_anomaly)


def overlay(image: np.ndarray, pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """TP green, FP blue, FN red over the unit-range image."""
    out = image.copy()
    pred, gt = pred.astype(bool), gt.astype(bool)
    out[pred & gt] = (0.0, 1.0, 0.0)
    out[pred & ~gt] = (0.0, 0.0, 1.0)
    out[~pred & gt] = (1.0, 0.0, 0.0)
    return out
