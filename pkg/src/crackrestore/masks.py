"""Square-cell masks for random corruption of undamaged patches.

Masks are binary ``H x W`` arrays: 0 marks a removed pixel, 1 a retained one.
Every mask removes exactly half of the image, and every pool holds each mask
together with its complement so that, under uniform sampling, each pixel is
removed with probability exactly 1/2.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ArgumentError, DimensionError, StateError


class MaskMode(str, enum.Enum):
    MULTISCALE_SQUARE = "multiscale_square"
    STRIPED = "striped"
    JUMBLED = "jumbled"


@dataclass(frozen=True)
class Mask:
    grid: np.ndarray = field(repr=False)
    scale_k: int
    mode: MaskMode

    @property
    def height(self) -> int:
        return self.grid.shape[0]

    @property
    def width(self) -> int:
        return self.grid.shape[1]

    def complement(self) -> "Mask":
        return Mask(1 - self.grid, self.scale_k, self.mode)


@dataclass(frozen=True)
class MaskPool:
    masks: tuple[Mask, ...]
    scales: tuple[int, ...]
    rng_seed: int

    def __len__(self) -> int:
        return len(self.masks)

    def pairs(self) -> list[tuple[Mask, Mask]]:
        """Complement pairs in construction order (mask, complement)."""
        return [(self.masks[i], self.masks[i + 1]) for i in range(0, len(self.masks), 2)]


def _cell_grid(n_rows: int, n_cols: int, mode: MaskMode, rng: np.random.Generator) -> np.ndarray:
    if mode is MaskMode.MULTISCALE_SQUARE:
        r, c = np.indices((n_rows, n_cols))
        return ((r + c) % 2 == 0).astype(np.uint8)
    if mode is MaskMode.STRIPED:
        c = np.arange(n_cols)
        return np.broadcast_to((c % 2 == 0).astype(np.uint8), (n_rows, n_cols)).copy()
    cells = np.zeros(n_rows * n_cols, dtype=np.uint8)
    cells[rng.permutation(n_rows * n_cols)[: n_rows * n_cols // 2]] = 1
    return cells.reshape(n_rows, n_cols)


def build_mask_pool(
    height: int,
    width: int,
    scales: Iterable[int],
    mode: MaskMode | str = MaskMode.MULTISCALE_SQUARE,
    seed: int = 0,
) -> MaskPool:
    """Build one mask and its complement per cell size ``k``.

    ``multiscale_square`` lays a checkerboard over the ``k x k`` cell grid,
    ``striped`` alternates full-height columns of width ``k`` and ``jumbled``
    retains a seeded random half of the cells.
    """
    mode = MaskMode(mode)
    scales = tuple(sorted({int(k) for k in scales}, reverse=True))
    if not scales:
        raise ArgumentError("at least one mask scale is required")
    rng = np.random.default_rng(seed)
    masks: list[Mask] = []
    for k in scales:
        if k <= 0 or height % k or width % k:
            raise DimensionError(f"image size {height}x{width} is not divisible by mask scale {k}")
        n_rows, n_cols = height // k, width // k
        if mode is MaskMode.STRIPED:
            balanced = n_cols % 2 == 0
        else:
            balanced = (n_rows * n_cols) % 2 == 0
        if not balanced:
            raise DimensionError(
                f"a {n_rows}x{n_cols} cell grid (k={k}) cannot be split 1:1 for mode {mode.value}"
            )
        cells = _cell_grid(n_rows, n_cols, mode, rng)
        grid = np.kron(cells, np.ones((k, k), dtype=np.uint8))
        mask = Mask(grid, k, mode)
        masks.extend([mask, mask.complement()])
    return MaskPool(tuple(masks), scales, seed)


def sample_mask(pool: MaskPool, draw_seed: int) -> Mask:
    if len(pool) == 0:
        raise StateError("cannot sample from an empty mask pool")
    index = int(np.random.default_rng(draw_seed).integers(len(pool)))
    return pool.masks[index]


def corrupt(image: np.ndarray, mask: Mask | np.ndarray) -> np.ndarray:
    """Hadamard product of an ``H x W [x C]`` image with a mask, broadcast over channels."""
    grid = mask.grid if isinstance(mask, Mask) else np.asarray(mask)
    if image.shape[:2] != grid.shape:
        raise DimensionError(f"mask shape {grid.shape} does not match image shape {image.shape[:2]}")
    if image.ndim == 3:
        grid = grid[:, :, None]
    return image * grid.astype(image.dtype)


def export_pool_png(pool: MaskPool, out_dir: str | Path) -> list[Path]:
    """Write ``mask_{mode}_{k}_{index}.png`` (0 = removed, 255 = retained)."""
    import cv2

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for index, mask in enumerate(pool.masks):
        path = out_dir / f"mask_{mask.mode.value}_{mask.scale_k}_{index}.png"
        cv2.imwrite(str(path), (mask.grid * 255).astype(np.uint8))
        written.append(path)
    return written
