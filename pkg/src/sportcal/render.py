"""Rasterize field templates under a camera pose into binary edge images."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._backend import draw_segments
from .camera import CameraPose, projection_from_pose
from .template import FieldTemplate

DEFAULT_LINE_WIDTH_PX = 4.0
FEATURE_SIZE = (320, 180)
DEPTH_EPS = 1e-6
MAX_ARC_STEP_DEG = 2.0
MAX_CHORD_ERROR_PX = 0.5
_MAX_SUBDIVISION_ROUNDS = 16


@dataclass(frozen=True, eq=False)
class EdgeImage:
    """Binary edge raster, 0 = background and 255 = edge, shape (height, width)."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        px = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if px.ndim != 2:
            raise ValueError(f"edge image must be 2D, got shape {px.shape}")
        if not np.all((px == 0) | (px == 255)):
            raise ValueError("edge image may only contain the values 0 and 255")
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other: object) -> bool:
        return isinstance(other, EdgeImage) and np.array_equal(self.pixels, other.pixels)

    def edge_count(self) -> int:
        return int(np.count_nonzero(self.pixels))


def _as_array(img) -> np.ndarray:
    return img.pixels if isinstance(img, EdgeImage) else np.asarray(img)


def _template_curves(template: FieldTemplate):
    """Initial parametric pieces: segments as one piece, arcs split at <= 2 degrees."""
    seg = np.array([[a[0], a[1], b[0], b[1]] for a, b in template.segments],
                   dtype=np.float64).reshape(-1, 4)
    arc = np.array([[c[0], c[1], r, s, e] for c, r, s, e in template.arcs],
                   dtype=np.float64).reshape(-1, 5)

    kinds, owners, t0s, t1s = [], [], [], []
    n_seg = len(seg)
    kinds.append(np.zeros(n_seg, dtype=np.int8))
    owners.append(np.arange(n_seg))
    t0s.append(np.zeros(n_seg))
    t1s.append(np.ones(n_seg))
    for i, (_, _, _, s, e) in enumerate(arc):
        n = max(1, math.ceil((e - s) / MAX_ARC_STEP_DEG - 1e-9))
        edges = np.linspace(s, e, n + 1)
        kinds.append(np.ones(n, dtype=np.int8))
        owners.append(np.full(n, i))
        t0s.append(edges[:-1])
        t1s.append(edges[1:])
    return seg, arc, np.concatenate(kinds), np.concatenate(owners), np.concatenate(t0s), np.concatenate(t1s)


def _eval_curves(seg, arc, kind, owner, t) -> np.ndarray:
    """World points (N, 3) on the z = 0 plane at parameter t."""
    out = np.zeros((len(t), 3))
    s = kind == 0
    if s.any():
        p = seg[owner[s]]
        ts = t[s][:, None]
        out[s, :2] = p[:, :2] + ts * (p[:, 2:] - p[:, :2])
    a = ~s
    if a.any():
        p = arc[owner[a]]
        ang = np.radians(t[a])
        out[a, 0] = p[:, 0] + p[:, 2] * np.cos(ang)
        out[a, 1] = p[:, 1] + p[:, 2] * np.sin(ang)
    return out


def _homog(P: np.ndarray, X: np.ndarray) -> np.ndarray:
    return X @ P[:, :3].T + P[:, 3]


def _point_segment_distance(p, a, b) -> np.ndarray:
    d = b - a
    l2 = np.einsum("ij,ij->i", d, d)
    t = np.einsum("ij,ij->i", p - a, d) / np.where(l2 > 0, l2, 1.0)
    t = np.clip(t, 0.0, 1.0)
    closest = a + t[:, None] * d
    return np.linalg.norm(p - closest, axis=1)


def project_template(template: FieldTemplate, pose: CameraPose) -> np.ndarray:
    """Image-space segments (N, 4) approximating every visible template primitive.

    Chords are split until the projected midpoint of each piece lies within
    0.5 px of its chord, then clipped at the positive-depth boundary.
    """
    P = projection_from_pose(pose)
    seg, arc, kind, owner, t0, t1 = _template_curves(template)
    final_a, final_b = [], []
    for _ in range(_MAX_SUBDIVISION_ROUNDS):
        if len(t0) == 0:
            break
        a = _eval_curves(seg, arc, kind, owner, t0)
        b = _eval_curves(seg, arc, kind, owner, t1)
        tm = 0.5 * (t0 + t1)
        m = _eval_curves(seg, arc, kind, owner, tm)
        ha, hb, hm = _homog(P, a), _homog(P, b), _homog(P, m)
        front = (ha[:, 2] > DEPTH_EPS) & (hb[:, 2] > DEPTH_EPS) & (hm[:, 2] > DEPTH_EPS)
        split = np.zeros(len(t0), dtype=bool)
        if front.any():
            pa = ha[front, :2] / ha[front, 2:]
            pb = hb[front, :2] / hb[front, 2:]
            pm = hm[front, :2] / hm[front, 2:]
            split[front] = _point_segment_distance(pm, pa, pb) >= MAX_CHORD_ERROR_PX
        keep = ~split
        final_a.append(a[keep])
        final_b.append(b[keep])
        kind = np.concatenate([kind[split], kind[split]])
        owner = np.concatenate([owner[split], owner[split]])
        t0, t1 = np.concatenate([t0[split], tm[split]]), np.concatenate([tm[split], t1[split]])
    if len(t0):
        final_a.append(_eval_curves(seg, arc, kind, owner, t0))
        final_b.append(_eval_curves(seg, arc, kind, owner, t1))
    if not final_a:
        return np.zeros((0, 4))
    A = np.concatenate(final_a)
    B = np.concatenate(final_b)
    return _clip_and_project(P, A, B)


def _clip_and_project(P: np.ndarray, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    ha, hb = _homog(P, A), _homog(P, B)
    da, db = ha[:, 2], hb[:, 2]
    visible = (da >= DEPTH_EPS) | (db >= DEPTH_EPS)
    ha, hb, da, db = ha[visible], hb[visible], da[visible], db[visible]
    # homogeneous image coordinates are affine in the world point, so clip them directly
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = np.where(da < DEPTH_EPS, (DEPTH_EPS - da) / (db - da), 0.0)
        tb = np.where(db < DEPTH_EPS, (DEPTH_EPS - db) / (da - db), 0.0)
    ca = ha + ta[:, None] * (hb - ha)
    cb = hb + tb[:, None] * (ha - hb)
    ca[:, 2] = np.maximum(ca[:, 2], DEPTH_EPS)
    cb[:, 2] = np.maximum(cb[:, 2], DEPTH_EPS)
    return np.ascontiguousarray(np.hstack([ca[:, :2] / ca[:, 2:], cb[:, :2] / cb[:, 2:]]))


def render_edge_image(template: FieldTemplate, pose: CameraPose,
                      line_width_px: float = DEFAULT_LINE_WIDTH_PX) -> EdgeImage:
    """Binary edge image of the template seen from ``pose``; lines are ``line_width_px`` wide."""
    if not line_width_px >= 1:
        raise ValueError(f"line_width_px must be >= 1, got {line_width_px}")
    img = np.zeros((pose.image_height, pose.image_width), dtype=np.uint8)
    segs = project_template(template, pose)
    if len(segs):
        draw_segments(img, segs, line_width_px / 2.0)
    return EdgeImage(img)


def _area_weights(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) matrix of fractional input coverage per output pixel, rows sum to 1."""
    edges = np.arange(n_out + 1) * (n_in / n_out)
    lo = np.arange(n_in)
    left = np.maximum(edges[:-1, None], lo[None, :])
    right = np.minimum(edges[1:, None], lo[None, :] + 1)
    w = np.clip(right - left, 0.0, None)
    return w / w.sum(axis=1, keepdims=True)


def area_resize(raster: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Area-average resample to ``size`` = (width, height); returns float64."""
    src = np.asarray(raster)
    h, w = src.shape
    ow, oh = size
    if h % oh == 0 and w % ow == 0:
        fy, fx = h // oh, w // ow
        if src.dtype == np.uint8:
            # integer block sums are exact, so this equals the float mean
            cols = src[:, 0::fx].astype(np.uint32)
            for j in range(1, fx):
                cols += src[:, j::fx]
            sums = cols[0::fy].copy()
            for i in range(1, fy):
                sums += cols[i::fy]
            return sums / float(fy * fx)
        return src.astype(np.float64).reshape(oh, fy, ow, fx).mean(axis=(1, 3))
    src = src.astype(np.float64)
    return _area_weights(h, oh) @ src @ _area_weights(w, ow).T


def resize_to_feature_scale(img, size: tuple[int, int] = FEATURE_SIZE) -> np.ndarray:
    """8-bit grayscale area-average downsample (default 320x180)."""
    out = area_resize(_as_array(img), size)
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def downsample_edges(img, size: tuple[int, int]) -> EdgeImage:
    """Edge image at a lower resolution: a pixel is set if any covered source pixel is."""
    out = area_resize(_as_array(img), size)
    return EdgeImage(np.where(out > 0.0, 255, 0).astype(np.uint8))


def binarize(raster, threshold: int = 128) -> EdgeImage:
    arr = _as_array(raster)
    return EdgeImage(np.where(arr >= threshold, 255, 0).astype(np.uint8))


class ImageFormatError(ValueError):
    pass


def write_pgm(path: str | os.PathLike, raster) -> None:
    arr = np.ascontiguousarray(_as_array(raster), dtype=np.uint8)
    h, w = arr.shape
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())
    os.replace(tmp, path)


def _pgm_tokens(data: bytes, count: int) -> tuple[list[int], int]:
    tokens: list[int] = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated PGM header")
        tok = data[start:pos]
        if not tok.isdigit():
            raise ImageFormatError(f"bad PGM header token {tok!r}")
        tokens.append(int(tok))
    return tokens, pos + 1  # exactly one whitespace byte precedes the raster


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise ImageFormatError(f"{path}: not a binary PGM (P5) file")
    (w, h, maxval), pos = _pgm_tokens(data[2:], 3)
    if maxval != 255:
        raise ImageFormatError(f"{path}: only maxval 255 is supported, got {maxval}")
    body = data[2 + pos:2 + pos + w * h]
    if len(body) != w * h:
        raise ImageFormatError(f"{path}: expected {w * h} pixel bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).copy()


def read_image(path: str | os.PathLike) -> np.ndarray:
    """Read an 8-bit grayscale raster; PGM natively, PNG when Pillow is installed."""
    if str(path).lower().endswith(".png"):
        from PIL import Image

        return np.asarray(Image.open(path).convert("L"), dtype=np.uint8)
    return read_pgm(path)


def write_image(path: str | os.PathLike, raster) -> None:
    if str(path).lower().endswith(".png"):
        from PIL import Image

        Image.fromarray(np.asarray(_as_array(raster), dtype=np.uint8)).save(path)
        return
    write_pgm(path, raster)
