"""Truncated exact Euclidean distance images."""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from ._backend import squared_edt
from .render import EdgeImage

DEFAULT_TRUNCATE_PX = 40.0
REFERENCE_WIDTH_PX = 1280
_DUMP_MAGIC = b"DIST"


def scaled_truncation(width_px: int, truncate_at_reference: float = DEFAULT_TRUNCATE_PX) -> float:
    """Truncation threshold for a working width, proportional to 40 px at 1280 wide."""
    return truncate_at_reference * width_px / REFERENCE_WIDTH_PX


def distance_transform(edge, truncate_px: float = DEFAULT_TRUNCATE_PX) -> np.ndarray:
    """float32 image of min(distance to nearest edge pixel, truncate_px).

    Uses the separable lower-envelope algorithm (rows, then columns), which is exact.
    """
    if not truncate_px > 0:
        raise ValueError(f"truncate_px must be positive, got {truncate_px}")
    px = edge.pixels if isinstance(edge, EdgeImage) else np.asarray(edge)
    sites = np.ascontiguousarray(px != 0, dtype=np.uint8)
    d2 = squared_edt(sites)
    return np.minimum(np.sqrt(d2), truncate_px).astype(np.float32)


def save_distance_dump(path: str | os.PathLike, dist: np.ndarray, truncate_px: float) -> None:
    """Raw float32 raster behind a 16-byte header: magic, u32 width, u32 height, f32 truncation."""
    dist = np.ascontiguousarray(dist, dtype="<f4")
    h, w = dist.shape
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_DUMP_MAGIC + struct.pack("<IIf", w, h, truncate_px))
        fh.write(dist.tobytes())
    os.replace(tmp, path)


def load_distance_dump(path: str | os.PathLike) -> tuple[np.ndarray, float]:
    data = Path(path).read_bytes()
    if data[:4] != _DUMP_MAGIC:
        raise ValueError(f"{path}: not a distance dump")
    w, h, trunc = struct.unpack("<IIf", data[4:16])
    body = data[16:]
    if len(body) != 4 * w * h:
        raise ValueError(f"{path}: expected {4 * w * h} bytes of raster, found {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(h, w).astype(np.float32), float(trunc)
