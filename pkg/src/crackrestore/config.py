"""Flat ``key = value`` run configuration with per-field provenance.

Precedence is flag > file > default. Lines starting with ``#`` and trailing
``# ...`` comments are ignored, so a written ``config.resolved`` reads back
as a config file.
"""

from __future__ import annotations

import difflib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping

from .detector import DetectParams, RestoreStrategy
from .errors import ConfigError
from .losses import LossWeights
from .masks import MaskMode
from .trainer import TrainConfig

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text: str) -> tuple[int, ...]:
    text = text.strip()
    if text in ("", "auto"):
        return ()
    return tuple(int(part) for part in text.replace(" ", "").split(","))


def _optional_str(text: str) -> str:
    return text.strip()


def _choice(values: tuple[str, ...]) -> Callable[[str], str]:
    def parse(text: str) -> str:
        text = text.strip()
        if text not in values:
            raise ValueError(f"expected one of {', '.join(values)}")
        return text

    return parse


# key -> (parser, default, help)
SCHEMA: dict[str, tuple[Callable[[str], Any], Any, str]] = {
    "data_root": (_optional_str, "data", "dataset root directory"),
    "run_dir": (_optional_str, "runs/default", "output directory of the run"),
    "seed": (int, 0, "run seed"),
    "image_size": (int, 256, "square training/inference resolution"),
    "epochs": (int, 200, "maximum training epochs"),
    "patience": (int, 20, "early-stopping patience in epochs"),
    "batch_size": (int, 8, "training batch size"),
    "lr_g": (float, 1e-4, "initial generator learning rate"),
    "lr_d": (float, 4e-4, "initial discriminator learning rate"),
    "adam_beta1": (float, 0.5, "Adam beta1"),
    "adam_beta2": (float, 0.999, "Adam beta2"),
    "lr_decay_gamma": (float, 0.97, "per-epoch learning-rate decay factor"),
    "lambda_mae": (float, 1.0, "MAE weight"),
    "lambda_ssim": (float, 1.0, "SSIM weight"),
    "lambda_gms": (float, 1.0, "MSGMS weight"),
    "lambda_style": (float, 10.0, "style weight"),
    "lambda_res": (float, 100.0, "restoration loss weight"),
    "lambda_adv": (float, 1.0, "adversarial loss weight"),
    "mask_scales": (_int_list, (), "comma-separated mask cell sizes (empty = image_size/2,/4,/8)"),
    "mask_mode": (_choice(tuple(m.value for m in MaskMode)), MaskMode.MULTISCALE_SQUARE.value, "mask mode"),
    "base_width": (int, 64, "channel width of the first conv block"),
    "depth": (int, 0, "U-Net depth (0 = log2(image_size))"),
    "augment": (_bool, True, "scale/crop/flip augmentation"),
    "freeze_d": (_bool, False, "skip discriminator updates"),
    "no_style": (_bool, False, "disable the style loss (no pretrained weights needed)"),
    "style_weights_path": (_optional_str, "", "torchvision VGG-16 state dict for the style loss"),
    "strategy": (_choice(tuple(s.value for s in RestoreStrategy)), RestoreStrategy.DIRECT.value, "restoration strategy at test time"),
    "bilateral_diameter": (int, 9, "bilateral filter diameter"),
    "bilateral_sigma_intensity": (float, 75.0, "bilateral range sigma (8-bit units)"),
    "bilateral_sigma_spatial": (float, 75.0, "bilateral spatial sigma (pixels)"),
    "stochastic_inference": (_bool, False, "keep dropout active at test time"),
    "save_error_maps": (_bool, True, "write 8-bit error-map PNGs in detect"),
    "n_train": (int, 100, "synthetic training images"),
    "n_val": (int, 10, "synthetic validation images"),
    "n_test": (int, 20, "synthetic test images"),
}


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


@dataclass
class RunConfig:
    values: dict[str, Any]
    provenance: dict[str, str]

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def train_config(self) -> TrainConfig:
        v = self.values
        weights = LossWeights(**{k: v[k] for k in LossWeights.__dataclass_fields__})
        return TrainConfig(
            epochs=v["epochs"],
            patience=v["patience"],
            batch_size=v["batch_size"],
            lr_g=v["lr_g"],
            lr_d=v["lr_d"],
            adam_beta1=v["adam_beta1"],
            adam_beta2=v["adam_beta2"],
            lr_decay_gamma=v["lr_decay_gamma"],
            weights=weights,
            seed=v["seed"],
            image_size=v["image_size"],
            mask_scales=v["mask_scales"] or None,
            mask_mode=MaskMode(v["mask_mode"]),
            base_width=v["base_width"],
            depth=v["depth"] or None,
            augment=v["augment"],
            freeze_d=v["freeze_d"],
            no_style=v["no_style"],
            style_weights_path=v["style_weights_path"] or None,
        )

    def detect_params(self) -> DetectParams:
        v = self.values
        return DetectParams(
            strategy=RestoreStrategy(v["strategy"]),
            bilateral_diameter=v["bilateral_diameter"],
            bilateral_sigma_intensity=v["bilateral_sigma_intensity"],
            bilateral_sigma_spatial=v["bilateral_sigma_spatial"],
            stochastic=v["stochastic_inference"],
        )

    def render(self) -> str:
        width = max(len(k) for k in self.values)
        lines = [f"{k.ljust(width)} = {_format(v)}  # {self.provenance[k]}" for k, v in self.values.items()]
        return "\n".join(lines) + "\n"

    def write_resolved(self, run_dir: str | Path | None = None) -> Path:
        run_dir = Path(run_dir or self.values["run_dir"])
        run_dir.mkdir(parents=True, exist_ok=True)
        path = run_dir / "config.resolved"
        path.write_text(self.render(), encoding="utf-8")
        return path

    def with_overrides(self, overrides: Mapping[str, Any], source: str = "flag") -> "RunConfig":
        values, prov = dict(self.values), dict(self.provenance)
        for key, value in overrides.items():
            _check_key(key)
            values[key] = _parse(key, value) if isinstance(value, str) else value
            prov[key] = source
        return RunConfig(values, prov)


def _check_key(key: str) -> None:
    if key not in SCHEMA:
        close = difflib.get_close_matches(key, SCHEMA, n=1)
        hint = f" (did you mean '{close[0]}'?)" if close else ""
        raise ConfigError(f"unknown config key '{key}'{hint}")


def _parse(key: str, text: str) -> Any:
    parser = SCHEMA[key][0]
    try:
        return parser(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for '{key}': {text!r} ({exc})") from None


def parse_config_text(text: str) -> dict[str, Any]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        _check_key(key)
        out[key] = _parse(key, value)
    return out


def load_config(path: str | Path | None = None, flags: Mapping[str, Any] | None = None) -> RunConfig:
    values = {k: spec[1] for k, spec in SCHEMA.items()}
    provenance = {k: "default" for k in SCHEMA}
    if path:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        for key, value in parse_config_text(path.read_text(encoding="utf-8")).items():
            values[key] = value
            provenance[key] = "file"
    config = RunConfig(values, provenance)
    if flags:
        config = config.with_overrides(flags, "flag")
    # validates cross-field constraints early
    try:
        config.train_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return config
