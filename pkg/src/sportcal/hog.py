"""Histogram-of-oriented-gradients descriptor for 320x180 edge rasters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BLOCK_EPS = 1e-3
L2HYS_CLIP = 0.2


class FeatureSizeError(ValueError):
    pass


@dataclass(frozen=True)
class HogConfig:
    cell: tuple[int, int] = (20, 20)  # (width, height) in pixels
    block: tuple[int, int] = (2, 2)  # in cells, stride one cell
    bins: int = 9  # unsigned orientations over [0, 180)
    input_size: tuple[int, int] = (320, 180)  # (width, height)

    def __post_init__(self) -> None:
        object.__setattr__(self, "cell", tuple(int(c) for c in self.cell))
        object.__setattr__(self, "block", tuple(int(c) for c in self.block))
        object.__setattr__(self, "input_size", tuple(int(c) for c in self.input_size))
        w, h = self.input_size
        cw, ch = self.cell
        if cw <= 0 or ch <= 0 or w % cw or h % ch:
            raise ValueError(f"input size {self.input_size} must be divisible by cell {self.cell}")
        if self.bins < 1:
            raise ValueError("bins must be >= 1")
        if not (1 <= self.block[0] <= self.cells[0] and 1 <= self.block[1] <= self.cells[1]):
            raise ValueError(f"block {self.block} does not fit in the cell grid {self.cells}")

    @property
    def cells(self) -> tuple[int, int]:
        return (self.input_size[0] // self.cell[0], self.input_size[1] // self.cell[1])

    @property
    def dim(self) -> int:
        nx, ny = self.cells
        bx, by = self.block
        return (nx - bx + 1) * (ny - by + 1) * bx * by * self.bins


def gradients(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central differences [-1, 0, 1] with replicated borders."""
    p = np.pad(np.asarray(img, dtype=np.float64), 1, mode="edge")
    gx = p[1:-1, 2:] - p[1:-1, :-2]
    gy = p[2:, 1:-1] - p[:-2, 1:-1]
    return gx, gy


def cell_histograms(raster: np.ndarray, cfg: HogConfig = HogConfig()) -> np.ndarray:
    """Orientation histograms per cell, shape (cells_y, cells_x, bins)."""
    raster = np.asarray(raster)
    w, h = cfg.input_size
    if raster.shape != (h, w):
        raise FeatureSizeError(f"expected a {w}x{h} raster, got shape {raster.shape}")
    gx, gy = gradients(raster)
    mag = np.hypot(gx, gy)
    ang = np.mod(np.degrees(np.arctan2(gy, gx)), 180.0)
    pos = ang * (cfg.bins / 180.0) - 0.5
    lower = np.floor(pos)
    w_hi = pos - lower
    b0 = lower.astype(np.intp) % cfg.bins
    b1 = (b0 + 1) % cfg.bins

    nx, ny = cfg.cells
    cw, ch = cfg.cell
    rows = np.arange(h) // ch
    cols = np.arange(w) // cw
    cell = (rows[:, None] * nx + cols[None, :]) * cfg.bins
    n = nx * ny * cfg.bins
    hist = (np.bincount((cell + b0).ravel(), (mag * (1.0 - w_hi)).ravel(), minlength=n)
            + np.bincount((cell + b1).ravel(), (mag * w_hi).ravel(), minlength=n))
    return hist.reshape(ny, nx, cfg.bins)


def _l2hys(blocks: np.ndarray) -> np.ndarray:
    norm = np.sqrt(np.sum(blocks * blocks, axis=-1, keepdims=True) + BLOCK_EPS**2)
    v = np.minimum(blocks / norm, L2HYS_CLIP)
    norm = np.sqrt(np.sum(v * v, axis=-1, keepdims=True) + BLOCK_EPS**2)
    return v / norm


def hog_features(raster: np.ndarray, cfg: HogConfig = HogConfig()) -> np.ndarray:
    """Globally L2-normalized float32 descriptor of length ``cfg.dim`` (zero for blank input)."""
    hist = cell_histograms(raster, cfg)
    bx, by = cfg.block
    win = np.lib.stride_tricks.sliding_window_view(hist, (by, bx), axis=(0, 1))
    # win: (blocks_y, blocks_x, bins, by, bx) -> cells row-major, then bins
    blocks = win.transpose(0, 1, 3, 4, 2).reshape(win.shape[0], win.shape[1], -1)
    v = _l2hys(blocks).ravel()
    total = np.linalg.norm(v)
    if total > 0:
        v = v / total
    return v.astype(np.float32)
