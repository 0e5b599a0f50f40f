"""Dataset layout, image I/O, patching, augmentation and synthetic road data.

Layout::

    root/train/undamaged/*.png|jpg
    root/val/undamaged/*.png|jpg
    root/test/images/*.png|jpg
    root/test/masks/<same-stem>.png     (0 = background, 255 = crack)

Images are handled as ``H x W x 3`` float32 arrays in [0, 1] (RGB order).
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .errors import DimensionError, LayoutError, PairingError

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
SPLIT_DIRS = {
    "train_undamaged": Path("train/undamaged"),
    "val_undamaged": Path("val/undamaged"),
    "test": Path("test/images"),
}
GT_DIR = Path("test/masks")


class Split(str, enum.Enum):
    TRAIN = "train_undamaged"
    VAL = "val_undamaged"
    TEST = "test"


@dataclass(frozen=True)
class Entry:
    image: Path
    ground_truth: Path | None = None

    @property
    def stem(self) -> str:
        return self.image.stem


@dataclass
class DatasetManifest:
    root: Path
    split: Split
    entries: list[Entry] = field(default_factory=list)
    resolution: int = 256

    def __len__(self) -> int:
        return len(self.entries)


def _list_images(directory: Path) -> list[Path]:
    # byte-wise lexicographic order, independent of locale and filesystem
    files = [p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES]
    return sorted(files, key=lambda p: p.name.encode("utf-8"))


def discover_dataset(root: str | Path, resolution: int = 256) -> dict[Split, DatasetManifest]:
    """Scan ``root`` and return one manifest per split."""
    root = Path(root)
    manifests = {}
    for split in Split:
        directory = root / SPLIT_DIRS[split.value]
        if not directory.is_dir():
            raise LayoutError(f"missing split directory: {directory}")
        manifests[split] = DatasetManifest(root, split, resolution=resolution)

    for split in (Split.TRAIN, Split.VAL):
        manifests[split].entries = [Entry(p) for p in _list_images(root / SPLIT_DIRS[split.value])]

    gt_dir = root / GT_DIR
    gts = {p.stem: p for p in _list_images(gt_dir)} if gt_dir.is_dir() else {}
    images = _list_images(root / SPLIT_DIRS["test"])
    stems = {p.stem for p in images}
    orphans = sorted(set(gts) - stems)
    if orphans:
        raise PairingError(f"ground-truth masks without test images: {', '.join(orphans)}")
    manifests[Split.TEST].entries = [Entry(p, gts.get(p.stem)) for p in images]
    return manifests


def load_image(path: str | Path, resolution: int | None = None) -> np.ndarray:
    bgr = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if bgr is None:
        raise OSError(f"cannot read image {path}")
    rgb = cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)
    if resolution and rgb.shape[:2] != (resolution, resolution):
        rgb = cv2.resize(rgb, (resolution, resolution), interpolation=cv2.INTER_LINEAR)
    return rgb.astype(np.float32) / 255.0


def load_mask(path: str | Path, resolution: int | None = None) -> np.ndarray:
    gray = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if gray is None:
        raise OSError(f"cannot read mask {path}")
    if resolution and gray.shape != (resolution, resolution):
        gray = cv2.resize(gray, (resolution, resolution), interpolation=cv2.INTER_NEAREST)
    return (gray >= 128).astype(np.uint8)


def save_image(path: str | Path, image: np.ndarray) -> None:
    img8 = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    if img8.ndim == 3:
        img8 = cv2.cvtColor(img8, cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(str(path), img8):
        raise OSError(f"cannot write {path}")


def extract_patches(image: np.ndarray, size: int, stride: int | None = None) -> list[np.ndarray]:
    """Row-major grid of ``size x size`` crops; partial trailing crops are dropped."""
    stride = stride or size
    h, w = image.shape[:2]
    if size > h or size > w:
        raise DimensionError(f"patch size {size} exceeds image size {h}x{w}")
    return [
        image[r : r + size, c : c + size].copy()
        for r in range(0, h - size + 1, stride)
        for c in range(0, w - size + 1, stride)
    ]


@dataclass(frozen=True)
class AugmentParams:
    scale: float
    top: int
    left: int
    hflip: bool
    vflip: bool


def draw_augment_params(seed: int, size: int, scale_range=(0.75, 1.25)) -> AugmentParams:
    rng = np.random.default_rng(seed)
    scale = float(rng.uniform(*scale_range))
    scaled = max(1, int(round(size * scale)))
    span = max(scaled, size) - size
    top = int(rng.integers(span + 1))
    left = int(rng.integers(span + 1))
    return AugmentParams(scale, top, left, bool(rng.random() < 0.5), bool(rng.random() < 0.5))


def augment(patch: np.ndarray, seed: int, size: int | None = None) -> np.ndarray:
    """Seeded random scale in [0.75, 1.25], crop back to ``size`` and random flips."""
    size = size or patch.shape[0]
    p = draw_augment_params(seed, size)
    h, w = patch.shape[:2]
    new_h, new_w = max(1, int(round(h * p.scale))), max(1, int(round(w * p.scale)))
    out = patch
    if (new_h, new_w) != (h, w):
        out = cv2.resize(patch, (new_w, new_h), interpolation=cv2.INTER_LINEAR)
    pad_h, pad_w = max(0, size - out.shape[0]), max(0, size - out.shape[1])
    if pad_h or pad_w:
        pad = ((pad_h // 2, pad_h - pad_h // 2), (pad_w // 2, pad_w - pad_w // 2))
        out = np.pad(out, pad + ((0, 0),) * (out.ndim - 2), mode="reflect")
    top = min(p.top, out.shape[0] - size)
    left = min(p.left, out.shape[1] - size)
    out = out[top : top + size, left : left + size]
    if p.hflip:
        out = out[:, ::-1]
    if p.vflip:
        out = out[::-1]
    return np.clip(np.ascontiguousarray(out), 0.0, 1.0)


_clamp_events = 0


def clamp_count() -> int:
    """Number of ``normalize`` calls that had to clamp out-of-range input."""
    return _clamp_events


def normalize(x: np.ndarray) -> np.ndarray:
    """Map unit range [0, 1] to signed range [-1, 1]; out-of-range input is clamped."""
    global _clamp_events
    x = np.asarray(x)
    if np.any(x < 0) or np.any(x > 1):
        _clamp_events += 1
        log.warning("normalize: clamping input outside [0, 1]")
        x = np.clip(x, 0.0, 1.0)
    return 2.0 * x - 1.0


def denormalize(x):
    return (x + 1.0) / 2.0


# -- synthetic road surfaces ---------------------------------------------------


def _band_noise(rng: np.random.Generator, size: int, sigma: float) -> np.ndarray:
    noise = rng.standard_normal((size, size)).astype(np.float32)
    smooth = cv2.GaussianBlur(noise, (0, 0), sigmaX=sigma, borderType=cv2.BORDER_REFLECT)
    return smooth / (smooth.std() + 1e-8)


def road_texture(rng: np.random.Generator, size: int) -> np.ndarray:
    """Asphalt-like background: multi-band noise, a brightness ramp and grain."""
    base = rng.uniform(0.45, 0.6)
    tex = (
        0.05 * _band_noise(rng, size, size / 8)
        + 0.03 * _band_noise(rng, size, 3.0)
        + 0.02 * _band_noise(rng, size, 1.0)
    )
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32) / size
    angle = rng.uniform(0, 2 * np.pi)
    ramp = rng.uniform(-0.08, 0.08) * ((xx - 0.5) * np.cos(angle) + (yy - 0.5) * np.sin(angle))
    gray = base + tex + ramp
    tint = rng.uniform(-0.02, 0.02, size=3).astype(np.float32)
    rgb = gray[:, :, None] + tint[None, None, :]
    return np.clip(rgb, 0.0, 1.0).astype(np.float32)


def crack_mask(rng: np.random.Generator, size: int) -> np.ndarray:
    """Random-walk polylines of width 1-5 px, rasterized to a {0,1} mask."""
    mask = np.zeros((size, size), np.uint8)
    for _ in range(int(rng.integers(1, 3))):
        pos = rng.uniform(0.1 * size, 0.9 * size, size=2)
        heading = rng.uniform(0, 2 * np.pi)
        step = size / 24
        points = [pos.copy()]
        for _ in range(int(rng.integers(12, 30))):
            heading += rng.normal(0, 0.35)
            pos = pos + step * np.array([np.cos(heading), np.sin(heading)])
            if not (0 <= pos[0] < size and 0 <= pos[1] < size):
                break
            points.append(pos.copy())
        width = int(rng.integers(1, 6))
        pts = np.rint(np.array(points)).astype(np.int32).reshape(-1, 1, 2)
        cv2.polylines(mask, [pts], False, 1, thickness=width, lineType=cv2.LINE_8)
    return mask


def cracked_image(rng: np.random.Generator, size: int, min_frac=0.005, max_frac=0.10):
    background = road_texture(rng, size)
    while True:
        mask = crack_mask(rng, size)
        if min_frac <= mask.mean() <= max_frac:
            break
    drop = rng.uniform(0.3, 0.6)
    image = background * (1.0 - drop * mask[:, :, None].astype(np.float32))
    return image, mask


def generate_synthetic_dataset(
    out_root: str | Path,
    n_train: int,
    n_test: int,
    seed: int = 0,
    n_val: int | None = None,
    size: int = 256,
) -> dict[Split, DatasetManifest]:
    """Write a crack-free train/val set and a cracked test set with exact masks."""
    out_root = Path(out_root)
    n_val = max(1, n_train // 10) if n_val is None else n_val
    dirs = [out_root / d for d in SPLIT_DIRS.values()] + [out_root / GT_DIR]
    for d in dirs:
        d.mkdir(parents=True, exist_ok=True)

    ss = np.random.SeedSequence(seed)
    train_ss, val_ss, test_ss = ss.spawn(3)
    for i, child in enumerate(train_ss.spawn(n_train)):
        save_image(out_root / SPLIT_DIRS["train_undamaged"] / f"train_{i:05d}.png",
                   road_texture(np.random.default_rng(child), size))
    for i, child in enumerate(val_ss.spawn(n_val)):
        save_image(out_root / SPLIT_DIRS["val_undamaged"] / f"val_{i:05d}.png",
                   road_texture(np.random.default_rng(child), size))
    for i, child in enumerate(test_ss.spawn(n_test)):
        image, mask = cracked_image(np.random.default_rng(child), size)
        save_image(out_root / SPLIT_DIRS["test"] / f"test_{i:05d}.png", image)
        cv2.imwrite(str(out_root / GT_DIR / f"test_{i:05d}.png"), mask * 255)
    return discover_dataset(out_root, resolution=size)
