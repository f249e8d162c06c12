"""IoU metrics on the template plane and the camera-displacement experiment."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .camera import CameraPose, homography_from_pose, oriented_homography
from .database import build_database, feature_for_edge_image, query_indices_batch
from .hog import HogConfig
from .lk import LkSettings, refine_pose
from .render import DEFAULT_LINE_WIDTH_PX, render_edge_image
from .sampling import MIN_CAMERA_HEIGHT_M, PoseDistribution, draw_pose, substream
from .template import FieldTemplate

logger = logging.getLogger(__name__)

MIN_REGION_AREA_M2 = 1e-6
RASTER_CELL_M = 0.1
_W_EPS = 1e-12

DB_STREAM = 0
TEST_STREAM = 1


class DegenerateRegionError(ValueError):
    pass


class ExperimentError(RuntimeError):
    def __init__(self, message: str, sample_index: int):
        super().__init__(message)
        self.sample_index = sample_index


# ---------------------------------------------------------------- polygons

def polygon_area(poly: np.ndarray) -> float:
    """Signed shoelace area (positive for counter-clockwise vertices)."""
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _ccw(poly: np.ndarray) -> np.ndarray:
    return poly[::-1].copy() if polygon_area(poly) < 0 else poly


def clip_halfplane(poly, a: float, b: float, c: float) -> np.ndarray:
    """Part of a convex polygon where a*x + b*y + c >= 0."""
    pts = [tuple(p) for p in np.asarray(poly, dtype=np.float64).reshape(-1, 2)]
    side = [a * x + b * y + c for x, y in pts]
    out = []
    for j, p in enumerate(pts):
        s_prev, s_cur = side[j - 1], side[j]
        if s_cur >= 0.0:
            if s_prev < 0.0:
                out.append(_cut(pts[j - 1], p, s_prev, s_cur))
            out.append(p)
        elif s_prev >= 0.0:
            out.append(_cut(pts[j - 1], p, s_prev, s_cur))
    return np.array(out, dtype=np.float64).reshape(-1, 2)


def clip_convex(subject: np.ndarray, clipper: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of ``subject`` against the convex ``clipper``."""
    clipper = _ccw(np.asarray(clipper, dtype=np.float64))
    out = np.asarray(subject, dtype=np.float64).reshape(-1, 2)
    n = len(clipper)
    for i in range(n):
        if len(out) == 0:
            break
        ax, ay = clipper[i]
        bx, by = clipper[(i + 1) % n]
        # left of the directed edge a -> b
        out = clip_halfplane(out, ay - by, bx - ax, (by - ay) * ax - (bx - ax) * ay)
    return out


def _cut(p, q, sp: float, sq: float) -> tuple[float, float]:
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def convex_iou(a: np.ndarray, b: np.ndarray) -> float:
    a, b = _ccw(np.asarray(a, dtype=np.float64)), _ccw(np.asarray(b, dtype=np.float64))
    area_a, area_b = polygon_area(a), polygon_area(b)
    if area_a < MIN_REGION_AREA_M2 or area_b < MIN_REGION_AREA_M2:
        raise DegenerateRegionError(f"region area below {MIN_REGION_AREA_M2} m^2 ({area_a:.3g}, {area_b:.3g})")
    inter = max(polygon_area(clip_convex(a, b)), 0.0)
    union = area_a + area_b - inter
    return min(max(inter / union, 0.0), 1.0)


def _apply(h: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Homogeneous image of 2D points, shape (n, 3)."""
    return np.column_stack([pts, np.ones(len(pts))]) @ h.T


def _field_rect(template: FieldTemplate) -> np.ndarray:
    L, W = template.length_m, template.width_m
    return np.array([[0.0, 0.0], [L, 0.0], [L, W], [0.0, W]])


def _image_rect(image_size: tuple[int, int]) -> np.ndarray:
    w, h = image_size
    return np.array([[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]], dtype=np.float64)


def _prepare(h) -> tuple[np.ndarray, np.ndarray]:
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (3, 3) or not np.all(np.isfinite(h)):
        raise ValueError("homography must be a finite 3x3 matrix")
    if not np.any(h):
        raise ValueError("homography is all zeros")
    if abs(np.linalg.det(h / np.linalg.norm(h))) < 1e-15:
        raise ValueError("homography is not invertible")
    h = oriented_homography(h / np.linalg.norm(h))
    return h, np.linalg.inv(h)


# ---------------------------------------------------------------- region membership

def _in_box(x, y, w, h) -> np.ndarray:
    return (x >= 0) & (x <= w) & (y >= 0) & (y <= h)


def _visible(h: np.ndarray, xy: np.ndarray, image_size) -> np.ndarray:
    """Template points in front of the camera whose image falls inside the frame."""
    v = _apply(h, xy)
    front = v[:, 2] > _W_EPS
    z = np.where(front, v[:, 2], 1.0)
    return front & _in_box(v[:, 0] / z, v[:, 1] / z, *image_size)


def _warped_field(h_gt: np.ndarray, h_est_inv: np.ndarray, template: FieldTemplate,
                  xy: np.ndarray) -> np.ndarray:
    """Template points whose ground-truth image is covered by the field seen through h_est."""
    v = _apply(h_gt, xy)
    front = v[:, 2] > _W_EPS
    z = np.where(front, v[:, 2], 1.0)
    q = np.column_stack([v[:, 0] / z, v[:, 1] / z, np.ones(len(xy))]) @ h_est_inv.T
    ok = front & (q[:, 2] > _W_EPS)
    qz = np.where(ok, q[:, 2], 1.0)
    return ok & _in_box(q[:, 0] / qz, q[:, 1] / qz, template.length_m, template.width_m)


_RASTER_CHUNK = 1 << 20


def raster_iou(inside_a: Callable[[np.ndarray], np.ndarray],
               inside_b: Callable[[np.ndarray], np.ndarray],
               bounds: tuple[float, float, float, float], cell: float = RASTER_CELL_M,
               allow_empty: bool = False) -> float:
    """IoU of two regions given as membership tests, sampled at cell centers inside ``bounds``."""
    x0, x1, y0, y1 = bounds
    xs = x0 + cell * (np.arange(int(math.ceil((x1 - x0) / cell))) + 0.5)
    ys = y0 + cell * (np.arange(int(math.ceil((y1 - y0) / cell))) + 0.5)
    rows = max(1, _RASTER_CHUNK // max(len(xs), 1))
    n_a = n_b = n_and = n_or = 0
    for start in range(0, len(ys), rows):
        gx, gy = np.meshgrid(xs, ys[start:start + rows])
        xy = np.column_stack([gx.ravel(), gy.ravel()])
        a, b = inside_a(xy), inside_b(xy)
        n_a += int(np.count_nonzero(a))
        n_b += int(np.count_nonzero(b))
        n_and += int(np.count_nonzero(a & b))
        n_or += int(np.count_nonzero(a | b))
    cell_area = cell * cell
    if allow_empty:
        if n_or * cell_area < MIN_REGION_AREA_M2:
            raise DegenerateRegionError("both regions are empty on the raster")
    elif n_a * cell_area < MIN_REGION_AREA_M2 or n_b * cell_area < MIN_REGION_AREA_M2:
        raise DegenerateRegionError("region has near-zero area on the raster")
    return n_and / n_or


def padded_field_bounds(template: FieldTemplate) -> tuple[float, float, float, float]:
    """Field rectangle grown by half its length on every side."""
    pad = 0.5 * max(template.length_m, template.width_m)
    return (-pad, template.length_m + pad, -pad, template.width_m + pad)


# ---------------------------------------------------------------- metrics

def iou_whole(h_gt, h_est, template: FieldTemplate, *, raster_cell: float = RASTER_CELL_M,
              force_raster: bool = False) -> float:
    """IoU of the field rectangle and the field re-projected through h_est then h_gt^-1."""
    hg, hg_inv = _prepare(h_gt)
    he, he_inv = _prepare(h_est)
    if np.array_equal(hg, he):
        return 1.0  # identical mappings; avoids round-off in the round trip
    field_rect = _field_rect(template)
    img = _apply(he, field_rect)
    if not force_raster and np.all(img[:, 2] > _W_EPS):
        back = np.column_stack([img[:, :2] / img[:, 2:], np.ones(4)]) @ hg_inv.T
        if np.all(back[:, 2] > _W_EPS):
            return convex_iou(field_rect, back[:, :2] / back[:, 2:])
    L, W = template.length_m, template.width_m
    return raster_iou(lambda xy: _in_box(xy[:, 0], xy[:, 1], L, W),
                      lambda xy: _warped_field(hg, he_inv, template, xy),
                      padded_field_bounds(template), raster_cell)


def footprint(h, image_size: tuple[int, int]) -> np.ndarray | None:
    """Template-plane quadrilateral seen by the image, or None if it reaches the horizon."""
    _, h_inv = _prepare(h)
    back = _apply(h_inv, _image_rect(image_size))
    if np.any(back[:, 2] <= _W_EPS):
        return None
    return back[:, :2] / back[:, 2:]


def visible_field(h, template: FieldTemplate, image_size: tuple[int, int]) -> np.ndarray:
    """Part of the field rectangle that projects inside the image, as a convex polygon.

    With x' = H p in homogeneous form and w > 0 for points in front of the
    camera, "inside the image" is the four linear constraints
    0 <= u <= W w and 0 <= v <= H w, so the region is exact even when the
    view reaches the horizon.
    """
    hg, _ = _prepare(h)
    w, ht = image_size
    r0, r1, r2 = hg
    poly = _field_rect(template)
    for row in (r2, r0, w * r2 - r0, r1, ht * r2 - r1):
        poly = clip_halfplane(poly, *row)
        if len(poly) == 0:
            break
    return poly


def iou_part(h_gt, h_est, template: FieldTemplate, image_size: tuple[int, int] = (1280, 720), *,
             clip_to_field: bool = True, raster_cell: float = RASTER_CELL_M,
             force_raster: bool = False,
             bounds: tuple[float, float, float, float] | None = None) -> float:
    """IoU of the template-plane regions seen by the image under both homographies.

    By default each region is the visible part of the field rectangle, as on a
    template-sized canvas; ``clip_to_field=False`` compares the raw image
    footprints instead, falling back to a raster over ``bounds`` (default:
    padded field box) when a footprint reaches the horizon.
    """
    hg, _ = _prepare(h_gt)
    he, _ = _prepare(h_est)
    if clip_to_field:
        L, W = template.length_m, template.width_m
        if force_raster:
            return raster_iou(
                lambda xy: _visible(hg, xy, image_size) & _in_box(xy[:, 0], xy[:, 1], L, W),
                lambda xy: _visible(he, xy, image_size) & _in_box(xy[:, 0], xy[:, 1], L, W),
                bounds or padded_field_bounds(template), raster_cell, allow_empty=True)
        return region_iou(visible_field(hg, template, image_size),
                          visible_field(he, template, image_size))
    if not force_raster:
        pg, pe = footprint(hg, image_size), footprint(he, image_size)
        if pg is not None and pe is not None:
            return convex_iou(pg, pe)
    return raster_iou(lambda xy: _visible(hg, xy, image_size),
                      lambda xy: _visible(he, xy, image_size),
                      bounds or padded_field_bounds(template), raster_cell)


def region_iou(a: np.ndarray, b: np.ndarray) -> float:
    """IoU of two convex regions either of which may be empty (but not both)."""
    area_a = abs(polygon_area(a)) if len(a) >= 3 else 0.0
    area_b = abs(polygon_area(b)) if len(b) >= 3 else 0.0
    inter = 0.0
    if area_a > 0.0 and area_b > 0.0:
        inter = max(polygon_area(clip_convex(_ccw(a), _ccw(b))), 0.0)
    union = area_a + area_b - inter
    if union < MIN_REGION_AREA_M2:
        raise DegenerateRegionError("neither view covers any of the field")
    return min(max(inter / union, 0.0), 1.0)


def pose_iou(gt: CameraPose, est: CameraPose, template: FieldTemplate, metric: str = "part") -> float:
    hg, he = homography_from_pose(gt), homography_from_pose(est)
    if metric == "whole":
        return iou_whole(hg, he, template)
    if metric == "part":
        return iou_part(hg, he, template, gt.image_size)
    raise ValueError(f"unknown metric {metric!r}")


@dataclass
class IoUReport:
    iou_whole: float | None
    iou_part: float | None
    items: list[dict[str, Any]] = field(default_factory=list)
    median_whole: float | None = None
    median_part: float | None = None

    def __post_init__(self) -> None:
        for name in ("iou_whole", "iou_part", "median_whole", "median_part"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    def to_dict(self) -> dict[str, Any]:
        return {
            "mean": {"iou_whole": self.iou_whole, "iou_part": self.iou_part},
            "median": {"iou_whole": self.median_whole, "iou_part": self.median_part},
            "count": len(self.items),
        }


def evaluate_poses(pred: dict[str, CameraPose], gt: dict[str, CameraPose],
                   template: FieldTemplate, metric: str = "both") -> IoUReport:
    """Per-id IoU plus mean and median; ids must match exactly."""
    if metric not in ("whole", "part", "both"):
        raise ValueError(f"unknown metric {metric!r}")
    orphans = sorted(set(pred) ^ set(gt))
    if orphans:
        raise KeyError(f"ids present in only one file: {orphans}")
    items = []
    for key in sorted(gt):
        rec: dict[str, Any] = {"id": key}
        if metric in ("whole", "both"):
            rec["iou_whole"] = pose_iou(gt[key], pred[key], template, "whole")
        if metric in ("part", "both"):
            rec["iou_part"] = pose_iou(gt[key], pred[key], template, "part")
        items.append(rec)

    def stats(name: str) -> tuple[float | None, float | None]:
        vals = [r[name] for r in items if name in r]
        if not vals:
            return None, None
        return float(np.mean(vals)), float(np.median(vals))

    mw, dw = stats("iou_whole")
    mp, dp = stats("iou_part")
    return IoUReport(mw, mp, items, dw, dp)


# ---------------------------------------------------------------- displacement experiment

def default_bins() -> tuple[float, ...]:
    return tuple(float(b) for b in range(13))


@dataclass(frozen=True)
class DisplacementExperimentConfig:
    db_size: int = 10_000
    test_size: int = 1_000
    bin_edges_m: tuple[float, ...] = field(default_factory=default_bins)
    distribution: PoseDistribution = PoseDistribution()
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "bin_edges_m", tuple(float(b) for b in self.bin_edges_m))
        if self.db_size < 1 or self.test_size < 1:
            raise ValueError("db_size and test_size must be >= 1")
        edges = self.bin_edges_m
        if len(edges) < 2 or edges[0] < 0 or any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError(f"bin edges must be >= 0 and strictly increasing, got {edges}")

    @property
    def bins(self) -> list[tuple[float, float]]:
        return list(zip(self.bin_edges_m[:-1], self.bin_edges_m[1:]))

    def to_dict(self) -> dict[str, Any]:
        return {"db_size": self.db_size, "test_size": self.test_size,
                "bin_edges_m": list(self.bin_edges_m), "seed": self.seed,
                "distribution": self.distribution.to_dict()}


@dataclass(frozen=True)
class BinSummary:
    bin_low_m: float
    bin_high_m: float
    n: int
    retrieval_mean: float
    retrieval_std: float
    refined_mean: float
    refined_std: float


@dataclass
class ExperimentResult:
    bins: list[BinSummary]
    items: list[dict[str, Any]]

    def csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["bin_low_m", "bin_high_m", "n", "retrieval_mean", "retrieval_std",
                         "refined_mean", "refined_std"])
        for b in self.bins:
            writer.writerow([_fmt(b.bin_low_m), _fmt(b.bin_high_m), b.n] +
                            [_fmt(v) for v in (b.retrieval_mean, b.retrieval_std,
                                               b.refined_mean, b.refined_std)])
        return buf.getvalue()

    def jsonl_text(self) -> str:
        return "".join(json.dumps(item, sort_keys=True) + "\n" for item in self.items)

    def table(self) -> str:
        lines = [f"{'bin (m)':>10} {'n':>5} {'retrieval':>17} {'refined':>17}"]
        for b in self.bins:
            lines.append(f"{b.bin_low_m:4.1f}-{b.bin_high_m:<5.1f} {b.n:5d} "
                         f"{b.retrieval_mean:8.4f}+-{b.retrieval_std:6.4f} "
                         f"{b.refined_mean:8.4f}+-{b.refined_std:6.4f}")
        return "\n".join(lines)


def _fmt(v: float) -> str:
    return "nan" if not math.isfinite(v) else repr(round(float(v), 10))


def displaced_center(mean: Sequence[float], rng: np.random.Generator,
                     bins: list[tuple[float, float]]) -> tuple[np.ndarray, int, float]:
    """Random direction, uniform bin, uniform magnitude within the bin; keeps height above 1 m."""
    mean = np.asarray(mean, dtype=np.float64)
    for _ in range(1000):
        d = rng.normal(size=3)
        norm = float(np.linalg.norm(d))
        b = int(rng.integers(len(bins)))
        mag = float(rng.uniform(*bins[b]))
        if norm < 1e-12:
            continue
        c = mean + d / norm * mag
        if c[2] > MIN_CAMERA_HEIGHT_M:
            return c, b, mag
        logger.info("rejected displaced center %s (height <= %.1f m)", c, MIN_CAMERA_HEIGHT_M)
    raise ValueError("could not draw a displaced camera center above 1 m")


def experiment_database_poses(cfg: DisplacementExperimentConfig) -> list[CameraPose]:
    dist = replace(cfg.distribution, center_stddev=(0.0, 0.0, 0.0))
    return [draw_pose(dist, substream(cfg.seed, i, DB_STREAM)) for i in range(cfg.db_size)]


def experiment_test_sample(cfg: DisplacementExperimentConfig, index: int) -> tuple[CameraPose, int, float]:
    rng = substream(cfg.seed, index, TEST_STREAM)
    center, b, mag = displaced_center(cfg.distribution.center_mean, rng, cfg.bins)
    pose = draw_pose(cfg.distribution, rng, center=tuple(float(x) for x in center))
    return pose, b, mag


def run_displacement_experiment(cfg: DisplacementExperimentConfig, template: FieldTemplate, *,
                                hog_cfg: HogConfig = HogConfig(),
                                lk_settings: LkSettings = LkSettings(),
                                line_width_px: float = DEFAULT_LINE_WIDTH_PX,
                                threads: int = 1,
                                progress: Callable[[str], None] | None = None) -> ExperimentResult:
    """Retrieval and retrieval+refinement IoU_part as a function of camera displacement."""
    say = progress or (lambda msg: None)
    say(f"building database of {cfg.db_size} poses")
    db = build_database(experiment_database_poses(cfg), template, line_width_px, hog_cfg,
                        metadata={"experiment": cfg.to_dict()}, threads=threads)

    say(f"rendering {cfg.test_size} test views")

    def prepare(i: int):
        try:
            pose, b, mag = experiment_test_sample(cfg, i)
            edge = render_edge_image(template, pose, line_width_px)
            return pose, b, mag, edge, feature_for_edge_image(edge, hog_cfg)
        except Exception as exc:
            raise ExperimentError(f"sample {i}: {exc}", i) from exc

    samples = _map(prepare, range(cfg.test_size), threads)
    hits = query_indices_batch(db, np.stack([s[4] for s in samples]), k=1)

    say("refining")

    def evaluate(i: int) -> dict[str, Any]:
        pose, b, mag, edge, _ = samples[i]
        idx, dist = hits[i]
        retrieved = db.pose(int(idx[0]))
        try:
            res = refine_pose(edge, retrieved, template, lk_settings)
            h_gt = homography_from_pose(pose)
            iou_r = iou_part(h_gt, homography_from_pose(retrieved), template, pose.image_size)
            iou_f = iou_part(h_gt, homography_from_pose(res.pose), template, pose.image_size)
        except Exception as exc:
            raise ExperimentError(f"sample {i}: {exc}", i) from exc
        return {"index": i, "bin": b, "displacement_m": mag, "retrieved_index": int(idx[0]),
                "retrieval_distance": float(dist[0]), "iou_part_retrieval": iou_r,
                "iou_part_refined": iou_f, "converged": bool(res.converged),
                "refined": bool(res.refined), "cause": res.cause,
                "gt_pose": pose.to_dict()}

    items = _map(evaluate, range(cfg.test_size), threads)
    return ExperimentResult(summarize(items, cfg.bins), items)


def summarize(items: list[dict[str, Any]], bins: list[tuple[float, float]]) -> list[BinSummary]:
    out = []
    for b, (lo, hi) in enumerate(bins):
        r = np.array([it["iou_part_retrieval"] for it in items if it["bin"] == b])
        f = np.array([it["iou_part_refined"] for it in items if it["bin"] == b])
        if len(r):
            out.append(BinSummary(lo, hi, len(r), float(r.mean()), float(r.std()),
                                  float(f.mean()), float(f.std())))
        else:
            nan = float("nan")
            out.append(BinSummary(lo, hi, 0, nan, nan, nan, nan))
    return out


def _map(fn, indices, threads: int) -> list:
    indices = list(indices)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, indices))
    return [fn(i) for i in indices]


def write_text_atomic(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)
