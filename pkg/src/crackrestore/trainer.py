"""Adversarial restoration training on undamaged patches."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .data import DatasetManifest, augment, load_image
from .errors import ConfigError, NumericError, StateError
from .losses import (
    LossBreakdown,
    LossWeights,
    VGGStyleExtractor,
    discriminator_loss,
    generator_adversarial_loss,
    restoration_components,
    total_generator_loss,
)
from .masks import MaskMode, MaskPool, build_mask_pool, sample_mask
from .model import (
    DiscriminatorSpec,
    GeneratorSpec,
    PatchDiscriminator,
    UNetGenerator,
    load_checkpoint,
    save_checkpoint,
)

log = logging.getLogger(__name__)

HISTORY_COLUMNS = (
    "epoch", "mae", "ssim", "msgms", "style", "adv_g", "adv_d",
    "res", "total", "val_res", "lr_g", "lr_d", "seconds",
)
_BREAKDOWN_TO_COLUMN = {
    "mae": "mae", "ssim": "ssim", "msgms": "msgms", "style": "style",
    "adversarial_g": "adv_g", "adversarial_d": "adv_d",
    "restoration": "res", "total": "total",
}

# stream tags for derive_seed
_SHUFFLE, _AUGMENT, _MASK, _VAL_MASK = 1, 2, 3, 4


def derive_seed(*keys: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    patience: int = 20
    batch_size: int = 8
    lr_g: float = 1e-4
    lr_d: float = 4e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    lr_decay_gamma: float = 0.97
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    image_size: int = 256
    mask_scales: tuple[int, ...] | None = None
    mask_mode: MaskMode = MaskMode.MULTISCALE_SQUARE
    base_width: int = 64
    depth: int | None = None
    augment: bool = True
    freeze_d: bool = False
    no_style: bool = False
    style_weights_path: str | None = None

    def __post_init__(self):
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ConfigError("learning rates must be positive")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ConfigError("Adam betas must lie in (0, 1)")
        if self.patience >= self.epochs:
            raise ConfigError("patience must be smaller than epochs")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    @property
    def scales(self) -> tuple[int, ...]:
        """Mask cell sizes; defaults to image_size / {2, 4, 8} (128, 64, 32 at 256 px)."""
        if self.mask_scales:
            return tuple(self.mask_scales)
        return tuple(self.image_size // d for d in (2, 4, 8))

    @property
    def generator_spec(self) -> GeneratorSpec:
        depth = self.depth or int(math.log2(self.image_size))
        return GeneratorSpec(base_width=self.base_width, depth=depth)

    @property
    def discriminator_spec(self) -> DiscriminatorSpec:
        return DiscriminatorSpec(base_width=self.base_width)

    @property
    def uses_style(self) -> bool:
        return not self.no_style and self.weights.lambda_style > 0

    @property
    def effective_weights(self) -> LossWeights:
        return replace(self.weights, lambda_style=0.0) if self.no_style else self.weights

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["weights"] = asdict(self.weights)
        d["mask_mode"] = MaskMode(self.mask_mode).value
        d["mask_scales"] = list(self.scales)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["weights"] = LossWeights(**d["weights"])
        d["mask_mode"] = MaskMode(d["mask_mode"])
        d["mask_scales"] = tuple(d["mask_scales"]) if d.get("mask_scales") else None
        return cls(**d)

    def mask_pool(self) -> MaskPool:
        s = self.image_size
        return build_mask_pool(s, s, self.scales, self.mask_mode, self.seed)


@dataclass
class TrainHistory:
    rows: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val: float = math.inf
    stopped_early: bool = False

    def column(self, name: str) -> list[float]:
        return [row[name] for row in self.rows]

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS)
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: row[k] for k in HISTORY_COLUMNS})

    @classmethod
    def read_csv(cls, path: str | Path) -> "TrainHistory":
        with Path(path).open(newline="") as fh:
            rows = [{k: (int(v) if k == "epoch" else float(v)) for k, v in r.items()} for r in csv.DictReader(fh)]
        h = cls(rows)
        if rows:
            best = min(rows, key=lambda r: (r["val_res"], r["epoch"]))
            h.best_epoch, h.best_val = best["epoch"], best["val_res"]
        return h


class EarlyStopping:
    """Stop once the monitored loss has not strictly improved for ``patience`` epochs."""

    def __init__(self, patience: int, best: float = math.inf, best_epoch: int = 0, stale: int = 0):
        self.patience = patience
        self.best = best
        self.best_epoch = best_epoch
        self.stale = stale

    def update(self, epoch: int, value: float) -> bool:
        """Record ``value`` for ``epoch``; returns True if it is a new best."""
        if value < self.best:
            self.best, self.best_epoch, self.stale = value, epoch, 0
            return True
        self.stale += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.stale >= self.patience


def early_stop_epoch(val_losses: Sequence[float], patience: int) -> tuple[int, int]:
    """Replay a validation sequence; returns ``(stop_epoch, best_epoch)``, 1-based."""
    stopper = EarlyStopping(patience)
    for epoch, value in enumerate(val_losses, start=1):
        stopper.update(epoch, value)
        if stopper.should_stop:
            return epoch, stopper.best_epoch
    return len(val_losses), stopper.best_epoch


def _to_tensor(images: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(images.transpose(0, 3, 1, 2))).float()


def train_step(
    images: np.ndarray,
    generator: UNetGenerator,
    discriminator: PatchDiscriminator,
    opt_g: torch.optim.Optimizer,
    opt_d: torch.optim.Optimizer,
    pool: MaskPool,
    weights: LossWeights,
    mask_seeds: Sequence[int],
    style_extractor=None,
    freeze_d: bool = False,
) -> LossBreakdown:
    """One discriminator update then one generator update on a unit-range batch."""
    generator.train()
    discriminator.train()
    grids = np.stack([sample_mask(pool, s).grid for s in mask_seeds]).astype(np.float32)
    target = _to_tensor(images)
    masks = torch.from_numpy(grids)[:, None]
    condition = 2 * (target * masks) - 1
    real = 2 * target - 1

    fake = generator(condition)

    d_loss = torch.zeros(())
    if not freeze_d:
        for p in discriminator.parameters():
            p.requires_grad_(True)
        d_loss = discriminator_loss(discriminator(condition, real), discriminator(condition, fake.detach()))
        if not torch.isfinite(d_loss):
            raise NumericError("adversarial_d", float(d_loss))
        opt_d.zero_grad(set_to_none=True)
        d_loss.backward()
        opt_d.step()

    components = restoration_components((fake + 1) / 2, target, weights, style_extractor)
    if weights.lambda_adv:
        for p in discriminator.parameters():
            p.requires_grad_(False)
        components["adversarial_g"] = generator_adversarial_loss(discriminator(condition, fake))
        for p in discriminator.parameters():
            p.requires_grad_(True)
    components["adversarial_d"] = d_loss.detach()
    breakdown = total_generator_loss(components, weights)
    opt_g.zero_grad(set_to_none=True)
    breakdown.total.backward()
    opt_g.step()
    return breakdown.detached()


class ImageBank:
    """Undamaged patches of one split, cached in memory as uint8."""

    def __init__(self, manifest: DatasetManifest, resolution: int):
        self.images = [
            np.rint(load_image(e.image, resolution) * 255).astype(np.uint8) for e in manifest.entries
        ]

    def __len__(self):
        return len(self.images)

    def get(self, index: int) -> np.ndarray:
        return self.images[index].astype(np.float32) / 255.0


def validate(
    generator: Callable,
    images: Sequence[np.ndarray],
    pool: MaskPool,
    weights: LossWeights,
    seed: int,
    style_extractor=None,
    batch_size: int = 8,
) -> float:
    """Mean restoration loss over validation images with fixed per-image masks."""
    if len(images) == 0:
        raise ConfigError("validation set is empty")
    if hasattr(generator, "eval"):
        generator.eval()
    res_weights = replace(weights, lambda_adv=0.0)
    total, count = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            idx = range(start, min(start + batch_size, len(images)))
            batch = np.stack([images[i] for i in idx])
            grids = np.stack([sample_mask(pool, derive_seed(seed, _VAL_MASK, i)).grid for i in idx])
            target = _to_tensor(batch)
            condition = 2 * (target * torch.from_numpy(grids.astype(np.float32))[:, None]) - 1
            restored = (generator(condition) + 1) / 2
            comps = restoration_components(restored, target, res_weights, style_extractor)
            res = total_generator_loss(comps, res_weights).restoration
            total += float(res) * len(idx)
            count += len(idx)
    return total / count


def build_models(config: TrainConfig) -> tuple[UNetGenerator, PatchDiscriminator]:
    torch.manual_seed(config.seed)
    return UNetGenerator(config.generator_spec), PatchDiscriminator(config.discriminator_spec)


def build_optimizers(config: TrainConfig, generator, discriminator):
    betas = (config.adam_beta1, config.adam_beta2)
    opt_g = torch.optim.Adam(generator.parameters(), lr=config.lr_g, betas=betas)
    opt_d = torch.optim.Adam(discriminator.parameters(), lr=config.lr_d, betas=betas)
    return opt_g, opt_d


def _set_lr(opt: torch.optim.Optimizer, lr: float) -> None:
    for group in opt.param_groups:
        group["lr"] = lr


def fit(
    config: TrainConfig,
    train_manifest: DatasetManifest,
    val_manifest: DatasetManifest,
    run_dir: str | Path,
    resume: bool = False,
    stop_after: int | None = None,
) -> tuple[Path, TrainHistory]:
    """Train with early stopping on validation restoration loss.

    Writes ``best.ckpt``, ``last.ckpt`` and ``history.csv`` into ``run_dir``.
    ``stop_after`` ends the run after that epoch as if interrupted.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    torch.use_deterministic_algorithms(True)

    style = VGGStyleExtractor(config.style_weights_path) if config.uses_style else None
    weights = config.effective_weights
    pool = config.mask_pool()
    train_bank = ImageBank(train_manifest, config.image_size)
    val_images = [img.astype(np.float32) / 255.0 for img in ImageBank(val_manifest, config.image_size).images]
    if len(train_bank) == 0:
        raise ConfigError("training set is empty")
    if len(val_images) == 0:
        raise ConfigError("validation set is empty")

    generator, discriminator = build_models(config)
    opt_g, opt_d = build_optimizers(config, generator, discriminator)
    history = TrainHistory()
    stopper = EarlyStopping(config.patience)
    start_epoch = 1
    last_path, best_path = run_dir / "last.ckpt", run_dir / "best.ckpt"

    if resume and last_path.is_file():
        state = load_checkpoint(last_path)
        if state["config"] != config.to_dict():
            raise ConfigError(f"{last_path} was written with a different configuration")
        generator.load_state_dict(state["generator"])
        discriminator.load_state_dict(state["discriminator"])
        opt_g.load_state_dict(state["opt_g"])
        opt_d.load_state_dict(state["opt_d"])
        torch.set_rng_state(state["rng_state"])
        history.rows = [dict(r) for r in state["history"]]
        stopper = EarlyStopping(config.patience, state["best_val"], state["best_epoch"], state["stale_epochs"])
        start_epoch = state["epoch"] + 1
        log.info("resuming from epoch %d", state["epoch"])
    else:
        torch.manual_seed(config.seed)

    n = len(train_bank)
    epoch = start_epoch - 1
    for epoch in range(start_epoch, config.epochs + 1):
        if stopper.should_stop:
            break
        lr_g = config.lr_g * config.lr_decay_gamma ** (epoch - 1)
        lr_d = config.lr_d * config.lr_decay_gamma ** (epoch - 1)
        _set_lr(opt_g, lr_g)
        _set_lr(opt_d, lr_d)
        started = time.perf_counter()

        order = np.random.default_rng(derive_seed(config.seed, _SHUFFLE, epoch)).permutation(n)
        sums = {col: 0.0 for col in _BREAKDOWN_TO_COLUMN.values()}
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            if config.augment:
                batch = np.stack([
                    augment(train_bank.get(i), derive_seed(config.seed, _AUGMENT, epoch, i), config.image_size)
                    for i in idx
                ])
            else:
                batch = np.stack([train_bank.get(i) for i in idx])
            mask_seeds = [derive_seed(config.seed, _MASK, epoch, i) for i in idx]
            try:
                step = train_step(batch, generator, discriminator, opt_g, opt_d, pool, weights,
                                  mask_seeds, style, config.freeze_d)
            except NumericError as exc:
                ref = last_path if last_path.is_file() else "none (no completed epoch)"
                raise StateError(f"training diverged at epoch {epoch}: {exc}; last good checkpoint: {ref}") from exc
            for name, col in _BREAKDOWN_TO_COLUMN.items():
                sums[col] += float(getattr(step, name)) * len(idx)

        val = validate(generator, val_images, pool, weights, config.seed, style, config.batch_size)
        row = {"epoch": epoch, **{k: v / n for k, v in sums.items()}, "val_res": val,
               "lr_g": lr_g, "lr_d": lr_d, "seconds": time.perf_counter() - started}
        history.rows.append(row)
        improved = stopper.update(epoch, val)
        log.info("epoch %d total=%.4f res=%.4f val_res=%.4f", epoch, row["total"], row["res"], val)

        state = dict(
            generator_spec=config.generator_spec,
            discriminator_spec=config.discriminator_spec,
            generator=generator.state_dict(),
            discriminator=discriminator.state_dict(),
            opt_g=opt_g.state_dict(),
            opt_d=opt_d.state_dict(),
            epoch=epoch,
            best_val=stopper.best,
            best_epoch=stopper.best_epoch,
            stale_epochs=stopper.stale,
            seed=config.seed,
            rng_state=torch.get_rng_state(),
            history=history.rows,
            config=config.to_dict(),
        )
        save_checkpoint(last_path, **state)
        if improved:
            save_checkpoint(best_path, **state)
        history.best_epoch, history.best_val = stopper.best_epoch, stopper.best
        history.write_csv(run_dir / "history.csv")
        if stopper.should_stop or (stop_after is not None and epoch >= stop_after):
            break

    history.best_epoch, history.best_val = stopper.best_epoch, stopper.best
    history.stopped_early = stopper.should_stop
    return best_path, history
