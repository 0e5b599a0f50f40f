"""U-Net restoration generator, conditional patch discriminator and checkpoints."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

import torch
import torch.nn as nn

from .errors import CheckpointError, DimensionError

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class GeneratorSpec:
    input_channels: int = 3
    output_channels: int = 3
    base_width: int = 64
    depth: int = 8
    dropout_rate: float = 0.5
    dropout_blocks: int = 3
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("generator depth must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    def encoder_widths(self) -> list[int]:
        return [self.base_width * min(2**i, 8) for i in range(self.depth)]


@dataclass(frozen=True)
class DiscriminatorSpec:
    condition_channels: int = 3
    candidate_channels: int = 3
    base_width: int = 64
    num_downsample_blocks: int = 3
    leaky_slope: float = 0.2

    @property
    def input_channels(self) -> int:
        return self.condition_channels + self.candidate_channels


def init_weights(module: nn.Module, std: float = 0.02) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.normal_(m.weight, 0.0, std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


class UNetGenerator(nn.Module):
    """Encoder of Conv-BN-LeakyReLU blocks, decoder of ConvT-BN-[Dropout]-ReLU blocks.

    Encoder block ``i`` feeds decoder block ``depth - 1 - i`` through a
    concatenating skip connection. The outermost and innermost encoder blocks
    carry no normalization. Input and output are in the signed range [-1, 1].
    """

    def __init__(self, spec: GeneratorSpec = GeneratorSpec()):
        super().__init__()
        self.spec = spec
        widths = spec.encoder_widths()

        self.encoder = nn.ModuleList()
        in_ch = spec.input_channels
        for i, out_ch in enumerate(widths):
            norm = 0 < i < spec.depth - 1
            self.encoder.append(
                nn.Sequential(
                    nn.Conv2d(in_ch, out_ch, 4, 2, 1, bias=not norm),
                    nn.BatchNorm2d(out_ch) if norm else nn.Identity(),
                    nn.LeakyReLU(spec.leaky_slope),
                )
            )
            in_ch = out_ch

        # decoder block j upsamples to the resolution of encoder block depth-2-j
        self.decoder = nn.ModuleList()
        self.skip_sources: list[int] = []
        for j in range(spec.depth - 1):
            src = spec.depth - 2 - j
            out_ch = widths[src]
            block_in = in_ch if j == 0 else in_ch * 2
            layers: list[nn.Module] = [
                nn.ConvTranspose2d(block_in, out_ch, 4, 2, 1, bias=False),
                nn.BatchNorm2d(out_ch),
            ]
            if j < spec.dropout_blocks and spec.dropout_rate > 0:
                layers.append(nn.Dropout(spec.dropout_rate))
            layers.append(nn.ReLU())
            self.decoder.append(nn.Sequential(*layers))
            self.skip_sources.append(src)
            in_ch = out_ch

        final_in = in_ch * 2 if spec.depth > 1 else in_ch
        self.head = nn.Sequential(
            nn.ConvTranspose2d(final_in, spec.output_channels, 4, 2, 1),
            nn.Tanh(),
        )
        self._check_skips()
        init_weights(self)

    def _check_skips(self) -> None:
        consumers = sorted(self.skip_sources)
        if consumers != list(range(self.spec.depth - 1)):
            raise RuntimeError(f"skip wiring is not one-to-one: {self.skip_sources}")

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != self.spec.input_channels:
            raise DimensionError(
                f"expected N x {self.spec.input_channels} x H x W input, got {tuple(x.shape)}"
            )
        factor = 2**self.spec.depth
        if x.shape[-2] % factor or x.shape[-1] % factor:
            raise DimensionError(
                f"spatial size {tuple(x.shape[-2:])} must be divisible by 2**depth = {factor}"
            )
        features = []
        h = x
        for block in self.encoder:
            h = block(h)
            features.append(h)
        for j, block in enumerate(self.decoder):
            h = block(h if j == 0 else torch.cat([h, features[self.skip_sources[j - 1]]], 1))
        if self.spec.depth > 1:
            h = torch.cat([h, features[0]], 1)
        return self.head(h)


class PatchDiscriminator(nn.Module):
    """70x70 PatchGAN scoring (condition, candidate) pairs; returns raw logits."""

    def __init__(self, spec: DiscriminatorSpec = DiscriminatorSpec()):
        super().__init__()
        self.spec = spec
        w = spec.base_width
        layers: list[nn.Module] = [
            nn.Conv2d(spec.input_channels, w, 4, 2, 1),
            nn.LeakyReLU(spec.leaky_slope),
        ]
        ch = w
        for i in range(1, spec.num_downsample_blocks):
            out = w * min(2**i, 8)
            layers += [nn.Conv2d(ch, out, 4, 2, 1, bias=False), nn.BatchNorm2d(out), nn.LeakyReLU(spec.leaky_slope)]
            ch = out
        out = w * min(2**spec.num_downsample_blocks, 8)
        layers += [nn.Conv2d(ch, out, 4, 1, 1, bias=False), nn.BatchNorm2d(out), nn.LeakyReLU(spec.leaky_slope)]
        layers.append(nn.Conv2d(out, 1, 4, 1, 1))
        self.net = nn.Sequential(*layers)
        init_weights(self)

    def forward(self, condition: torch.Tensor, candidate: torch.Tensor) -> torch.Tensor:
        if condition.shape[-2:] != candidate.shape[-2:] or condition.shape[0] != candidate.shape[0]:
            raise DimensionError(
                f"condition {tuple(condition.shape)} and candidate {tuple(candidate.shape)} differ"
            )
        return self.net(torch.cat([condition, candidate], 1))


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def save_checkpoint(path: str | Path, **state: Any) -> None:
    """Write a versioned checkpoint.

    Expected keys: generator_spec, discriminator_spec, generator, discriminator,
    opt_g, opt_d, epoch, best_val, seed; extra keys are stored as given.
    """
    payload = dict(state)
    payload["format_version"] = CHECKPOINT_FORMAT_VERSION
    for key in ("generator_spec", "discriminator_spec"):
        if not isinstance(payload.get(key), dict):
            payload[key] = asdict(payload[key])
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint {path} has format_version {version!r}, expected {CHECKPOINT_FORMAT_VERSION}"
        )
    return payload


def generator_from_checkpoint(payload: dict[str, Any]) -> UNetGenerator:
    generator = UNetGenerator(GeneratorSpec(**payload["generator_spec"]))
    generator.load_state_dict(payload["generator"])
    generator.eval()
    return generator
