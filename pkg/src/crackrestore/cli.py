"""Command-line entry point.

    crackrestore synth|masks|train|detect|eval|ablate [options]

Every config key is also a flag (``lr_g`` -> ``--lr-g``). Exit codes: 0 on
success, 1 on pipeline failure, 2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
import traceback
from pathlib import Path

from . import figures
from .config import SCHEMA, RunConfig, load_config
from .errors import ConfigError, CrackRestoreError

log = logging.getLogger("crackrestore")

SUBCOMMANDS = ("synth", "masks", "train", "detect", "eval", "ablate")

# source module -> pipeline stage named in error messages
_STAGES = {
    "masks": "maskgen",
    "model": "model",
    "losses": "losses",
    "detector": "detector",
    "evalkit": "evalkit",
    "data": "datapipe",
    "trainer": "trainer",
    "pipeline": "pipeline",
    "config": "cli",
    "cli": "cli",
}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("configuration overrides")
    for key, (parse, default, help_text) in SCHEMA.items():
        flag = "--" + key.replace("_", "-")
        if isinstance(default, bool):
            group.add_argument(flag, dest=key, nargs="?", const="true", default=argparse.SUPPRESS,
                               metavar="BOOL", help=help_text)
        else:
            group.add_argument(flag, dest=key, default=argparse.SUPPRESS, metavar=key.upper(), help=help_text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crackrestore", description=__doc__.split("\n\n")[0])
    subs = parser.add_subparsers(dest="command", required=True, metavar="{" + ",".join(SUBCOMMANDS) + "}")
    helps = {
        "synth": "write a synthetic road dataset",
        "masks": "export the mask pool as PNG",
        "train": "train the restoration GAN",
        "detect": "detect cracks in the test split",
        "eval": "score detections against ground truth",
        "ablate": "train+detect+eval over loss or mask-mode variants",
    }
    for name in SUBCOMMANDS:
        sub = subs.add_parser(name, help=helps[name])
        sub.add_argument("-v", "--verbose", action="store_true", help="log progress")
        sub.add_argument("--config", help="flat key = value config file")
        sub.add_argument("--checkpoint", help="checkpoint path (default: RUN_DIR/best.ckpt)")
        if name == "train":
            sub.add_argument("--resume", action="store_true", help="continue from RUN_DIR/last.ckpt")
        if name == "eval":
            sub.add_argument("--pred-dir", help="predicted masks (default: RUN_DIR/detect/masks)")
        if name == "ablate":
            sub.add_argument("--study", choices=("losses", "masks"), default="losses")
            sub.add_argument("--only", nargs="+", help="run only these configuration names")
        _add_config_flags(sub)
    return parser


def _flags(args: argparse.Namespace) -> dict[str, str]:
    return {k: v for k, v in vars(args).items() if k in SCHEMA}


def cmd_synth(cfg: RunConfig, args) -> None:
    from .data import generate_synthetic_dataset

    manifests = generate_synthetic_dataset(
        cfg["data_root"], cfg["n_train"], cfg["n_test"], cfg["seed"], cfg["n_val"], cfg["image_size"]
    )
    for split, manifest in manifests.items():
        print(f"{split.value}: {len(manifest)} images")


def cmd_masks(cfg: RunConfig, args) -> None:
    from .masks import export_pool_png

    pool = cfg.train_config().mask_pool()
    out = Path(cfg["run_dir"]) / "masks"
    paths = export_pool_png(pool, out)
    figures.plot_mask_pool(pool, out / "mask_pool_overview.png")
    print(f"wrote {len(paths)} masks to {out}")


def cmd_train(cfg: RunConfig, args) -> None:
    from .data import Split, discover_dataset
    from .losses import check_style_weights
    from .trainer import fit

    run_dir = Path(cfg["run_dir"])
    train_config = cfg.train_config()
    if train_config.uses_style:
        check_style_weights(train_config.style_weights_path)
    cfg.write_resolved(run_dir)
    manifests = discover_dataset(cfg["data_root"], cfg["image_size"])
    best, history = fit(train_config, manifests[Split.TRAIN], manifests[Split.VAL], run_dir, resume=args.resume)
    figures.plot_history(history.rows, run_dir / "history.png", history.best_epoch)
    print(f"best epoch {history.best_epoch} (val restoration {history.best_val:.5f}); checkpoint {best}")


def cmd_detect(cfg: RunConfig, args) -> None:
    from .pipeline import detect_dataset

    run_dir = Path(cfg["run_dir"])
    cfg.write_resolved(run_dir / "detect")
    checkpoint = args.checkpoint or run_dir / "best.ckpt"
    result = detect_dataset(checkpoint, cfg["data_root"], run_dir / "detect", cfg.detect_params(), cfg["save_error_maps"])
    print(f"wrote {len(result.stems)} crack maps to {run_dir / 'detect' / 'masks'}")


def cmd_eval(cfg: RunConfig, args) -> None:
    from .evalkit import write_report
    from .pipeline import evaluate_dirs

    run_dir = Path(cfg["run_dir"])
    pred_dir = Path(args.pred_dir) if args.pred_dir else run_dir / "detect" / "masks"
    gt_dir = Path(cfg["data_root"]) / "test" / "masks"
    report = evaluate_dirs(pred_dir, gt_dir, Path(cfg["data_root"]).name)
    out = write_report([report], run_dir / "metrics.csv")
    figures.plot_metrics([report], run_dir / "metrics.png")
    print(out.read_text(), end="")


def cmd_ablate(cfg: RunConfig, args) -> None:
    from .pipeline import run_ablation

    cfg.write_resolved(cfg["run_dir"])
    out = run_ablation(args.study, cfg, args.only)
    print(out.read_text(), end="")


COMMANDS = {
    "synth": cmd_synth,
    "masks": cmd_masks,
    "train": cmd_train,
    "detect": cmd_detect,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def _origin_stage(exc: BaseException) -> str:
    stage = "cli"
    for frame, _ in traceback.walk_tb(exc.__traceback__):
        name = frame.f_globals.get("__name__", "")
        if name.startswith("crackrestore."):
            stage = _STAGES.get(name.split(".")[1], stage)
    return stage


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _flags(args))
        COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (CrackRestoreError, OSError, ValueError) as exc:
        print(f"error [{_origin_stage(exc)}]: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
