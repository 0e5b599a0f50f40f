"""Restoration and adversarial losses.

All pairwise restoration losses take ``N x C x H x W`` tensors in the unit
range [0, 1] and return a scalar mean over the batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable, Mapping, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, DimensionError, NumericError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
GMS_C = 170.0 / 255.0**2
GMS_SCALES = 4
# keeps d sqrt(.)/dx finite where the gradient vanishes
GM_EPS = 1e-12

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class LossWeights:
    lambda_mae: float = 1.0
    lambda_ssim: float = 1.0
    lambda_gms: float = 1.0
    lambda_style: float = 10.0
    lambda_res: float = 100.0
    lambda_adv: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be >= 0")


@dataclass
class LossBreakdown:
    mae: float | torch.Tensor = 0.0
    ssim: float | torch.Tensor = 0.0
    msgms: float | torch.Tensor = 0.0
    style: float | torch.Tensor = 0.0
    restoration: float | torch.Tensor = 0.0
    adversarial_g: float | torch.Tensor = 0.0
    adversarial_d: float | torch.Tensor = 0.0
    total: float | torch.Tensor = 0.0

    def detached(self) -> "LossBreakdown":
        def scalar(v):
            return float(v.detach()) if isinstance(v, torch.Tensor) else float(v)

        return LossBreakdown(**{f.name: scalar(getattr(self, f.name)) for f in fields(self)})


def _check_pair(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.ndim != 4:
        raise DimensionError(f"expected N x C x H x W tensors, got {tuple(a.shape)}")


def mae_loss(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA, dtype=torch.float32) -> torch.Tensor:
    x = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-(x**2) / (2 * sigma**2))
    g = g / g.sum()
    return torch.outer(g, g).to(dtype)


def ssim_map(a: torch.Tensor, b: torch.Tensor, data_range: float = 1.0) -> torch.Tensor:
    """Per-pixel SSIM, ``N x C x H x W``, with reflect padding at the borders."""
    _check_pair(a, b)
    if min(a.shape[-2:]) < SSIM_WINDOW:
        raise DimensionError(f"image {tuple(a.shape[-2:])} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    c = a.shape[1]
    window = gaussian_window(dtype=a.dtype).to(a.device).expand(c, 1, SSIM_WINDOW, SSIM_WINDOW)
    pad = SSIM_WINDOW // 2

    def blur(t):
        return F.conv2d(F.pad(t, (pad,) * 4, mode="reflect"), window, groups=c)

    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a, mu_b = blur(a), blur(b)
    var_a = blur(a * a) - mu_a**2
    var_b = blur(b * b) - mu_b**2
    cov = blur(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return num / den


def ssim_loss(a: torch.Tensor, b: torch.Tensor, data_range: float = 1.0) -> torch.Tensor:
    return (1 - ssim_map(a, b, data_range)).mean()


def prewitt_kernels(dtype=torch.float32) -> torch.Tensor:
    kx = torch.tensor([[1.0, 0.0, -1.0]] * 3, dtype=dtype) / 3
    return torch.stack([kx, kx.t()]).unsqueeze(1)


def gradient_magnitude(gray: torch.Tensor) -> torch.Tensor:
    k = prewitt_kernels(gray.dtype).to(gray.device)
    g = F.conv2d(F.pad(gray, (1, 1, 1, 1), mode="reflect"), k)
    return torch.sqrt((g**2).sum(1, keepdim=True) + GM_EPS)


def gms_map(a: torch.Tensor, b: torch.Tensor, c: float = GMS_C) -> torch.Tensor:
    """Gradient magnitude similarity of the channel-mean images, ``N x 1 x H x W``."""
    _check_pair(a, b)
    ga = gradient_magnitude(a.mean(1, keepdim=True))
    gb = gradient_magnitude(b.mean(1, keepdim=True))
    return (2 * ga * gb + c) / (ga**2 + gb**2 + c)


def msgms_loss(a: torch.Tensor, b: torch.Tensor, scales: int = GMS_SCALES) -> torch.Tensor:
    _check_pair(a, b)
    factor = 2 ** (scales - 1)
    if a.shape[-2] % factor or a.shape[-1] % factor:
        raise DimensionError(f"spatial size {tuple(a.shape[-2:])} must be divisible by {factor}")
    total = 0.0
    for level in range(scales):
        if level:
            a = F.avg_pool2d(a, 2)
            b = F.avg_pool2d(b, 2)
        total = total + (1 - gms_map(a, b)).mean()
    return total / scales


def gram_matrix(features: torch.Tensor) -> torch.Tensor:
    n, c, h, w = features.shape
    flat = features.reshape(n, c, h * w)
    return flat @ flat.transpose(1, 2) / (c * h * w)


def style_loss(
    a: torch.Tensor,
    b: torch.Tensor,
    extractor: Callable[[torch.Tensor], Sequence[torch.Tensor]],
) -> torch.Tensor:
    """Mean over extractor layers of the mean absolute Gram-matrix difference."""
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    feats_a = extractor(a)
    feats_b = extractor(b)
    terms = [(gram_matrix(fa) - gram_matrix(fb)).abs().mean() for fa, fb in zip(feats_a, feats_b)]
    return torch.stack(terms).mean()


def check_style_weights(weights_path: str | Path | None) -> None:
    if not weights_path or not Path(weights_path).is_file():
        raise ConfigError(
            "style loss needs VGG-16 ImageNet weights: set style_weights_path to a torchvision "
            "vgg16 state dict (e.g. vgg16-397923af.pth from download.pytorch.org/models) "
            "or disable the style term with --no-style"
        )


class VGGStyleExtractor(nn.Module):
    """Frozen VGG-16 trunk returning relu1_2, relu2_2, relu3_3 and relu4_3.

    Takes unit-range RGB input and applies ImageNet channel statistics itself.
    """

    # indices into torchvision's vgg16().features
    TAPS = (3, 8, 15, 22)

    def __init__(self, weights_path: str | Path | None):
        super().__init__()
        check_style_weights(weights_path)
        from torchvision.models import vgg16

        net = vgg16(weights=None)
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        net.load_state_dict(state)
        self.features = net.features[: self.TAPS[-1] + 1].eval()
        for p in self.parameters():
            p.requires_grad_(False)
        self.register_buffer("mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1))

    def train(self, mode: bool = True):
        # always frozen
        return super().train(False)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        h = (x - self.mean.to(x.dtype)) / self.std.to(x.dtype)
        out = []
        for i, layer in enumerate(self.features):
            h = layer(h)
            if i in self.TAPS:
                out.append(h)
        return out


def adversarial_losses(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Return ``(g_loss, d_loss)``; the generator term is the non-saturating form."""
    if real_logits.shape != fake_logits.shape:
        raise DimensionError(f"logit maps differ: {tuple(real_logits.shape)} vs {tuple(fake_logits.shape)}")
    d_loss = discriminator_loss(real_logits, fake_logits)
    g_loss = generator_adversarial_loss(fake_logits)
    return g_loss, d_loss


def discriminator_loss(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> torch.Tensor:
    bce = F.binary_cross_entropy_with_logits
    return bce(real_logits, torch.ones_like(real_logits)) + bce(fake_logits, torch.zeros_like(fake_logits))


def generator_adversarial_loss(fake_logits: torch.Tensor) -> torch.Tensor:
    return F.binary_cross_entropy_with_logits(fake_logits, torch.ones_like(fake_logits))


_RESTORATION_TERMS = (
    ("mae", "lambda_mae"),
    ("ssim", "lambda_ssim"),
    ("msgms", "lambda_gms"),
    ("style", "lambda_style"),
)


def total_generator_loss(components: Mapping[str, float | torch.Tensor], weights: LossWeights) -> LossBreakdown:
    """Combine component losses into restoration and total generator losses.

    ``components`` may hold ``mae``, ``ssim``, ``msgms``, ``style``,
    ``adversarial_g`` and ``adversarial_d``; missing ones count as zero.
    Terms whose weight is zero are left out of the sums entirely.
    """
    for name, value in components.items():
        v = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
        if not math.isfinite(v):
            raise NumericError(name, v)

    out = LossBreakdown(**{k: v for k, v in components.items() if k in LossBreakdown.__dataclass_fields__})
    restoration = 0.0
    for name, weight_name in _RESTORATION_TERMS:
        weight = getattr(weights, weight_name)
        if weight and name in components:
            restoration = restoration + weight * components[name]
    out.restoration = restoration

    total = 0.0
    if weights.lambda_res:
        total = total + weights.lambda_res * restoration
    if weights.lambda_adv and "adversarial_g" in components:
        total = total + weights.lambda_adv * components["adversarial_g"]
    out.total = total
    return out


def restoration_components(
    restored: torch.Tensor,
    target: torch.Tensor,
    weights: LossWeights,
    style_extractor=None,
) -> dict[str, torch.Tensor]:
    """Compute the non-zero-weighted restoration terms on unit-range tensors."""
    out: dict[str, torch.Tensor] = {}
    if weights.lambda_mae:
        out["mae"] = mae_loss(restored, target)
    if weights.lambda_ssim:
        out["ssim"] = ssim_loss(restored, target)
    if weights.lambda_gms:
        out["msgms"] = msgms_loss(restored, target)
    if weights.lambda_style and style_extractor is not None:
        out["style"] = style_loss(restored, target, style_extractor)
    return out
