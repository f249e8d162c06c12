"""Lucas-Kanade homography alignment of truncated distance images and pose refinement."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from ._backend import lk_accumulate
from .camera import (CameraPose, DegeneratePoseError, NonPhysicalHomographyError,
                     fit_pose_to_homography, homography_from_pose, normalize_homography)
from .distance import DEFAULT_TRUNCATE_PX, distance_transform, scaled_truncation
from .render import (DEFAULT_LINE_WIDTH_PX, EdgeImage, area_resize, downsample_edges,
                     render_edge_image)
from .template import FieldTemplate

logger = logging.getLogger(__name__)

DIVERGENCE_RATIO = 1.05


@dataclass(frozen=True)
class LkSettings:
    max_iterations: int = 50
    convergence_tol: float = 1e-4
    pyramid_levels: int = 2
    truncate_px: float = DEFAULT_TRUNCATE_PX  # at 1280 px width, scaled to the working width
    working_size: tuple[int, int] = (640, 360)
    line_width_px: float = DEFAULT_LINE_WIDTH_PX

    def __post_init__(self) -> None:
        object.__setattr__(self, "working_size", tuple(int(v) for v in self.working_size))
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.convergence_tol > 0:
            raise ValueError("convergence_tol must be positive")
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")
        if not self.truncate_px > 0:
            raise ValueError("truncate_px must be positive")
        if min(self.working_size) < 8:
            raise ValueError("working_size is too small")


@dataclass
class LkDiagnostics:
    converged: bool
    iterations: int
    residual_before: float
    residual_after: float
    diverged: bool = False
    valid_pixels: int = 0


@dataclass
class RefinementResult:
    pose: CameraPose
    warp: np.ndarray  # retrieved image -> query image, full-resolution pixels
    converged: bool
    iterations: int
    residual_before: float
    residual_after: float
    refined: bool = False  # False when the retrieved pose was returned unchanged
    cause: str = ""
    details: dict[str, Any] = field(default_factory=dict)


def _normalizer(width: int, height: int) -> np.ndarray:
    s = width / 2.0
    return np.array([[1.0 / s, 0.0, -width / (2.0 * s)],
                     [0.0, 1.0 / s, -height / (2.0 * s)],
                     [0.0, 0.0, 1.0]])


def to_normalized(h_pix: np.ndarray, width: int, height: int) -> np.ndarray:
    N = _normalizer(width, height)
    return normalize_homography(N @ h_pix @ np.linalg.inv(N))


def from_normalized(h_n: np.ndarray, width: int, height: int) -> np.ndarray:
    N = _normalizer(width, height)
    return normalize_homography(np.linalg.inv(N) @ h_n @ N)


def image_gradients(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central differences in pixel units with replicated borders."""
    p = np.pad(np.asarray(img, dtype=np.float32), 1, mode="edge")
    gx = 0.5 * (p[1:-1, 2:] - p[1:-1, :-2])
    gy = 0.5 * (p[2:, 1:-1] - p[:-2, 1:-1])
    return np.ascontiguousarray(gx, np.float32), np.ascontiguousarray(gy, np.float32)


def _pyramid(img: np.ndarray, levels: int) -> list[np.ndarray]:
    out = [np.ascontiguousarray(img, dtype=np.float32)]
    for lvl in range(1, levels):
        h, w = out[-1].shape
        if min(w, h) < 16:
            break
        small = area_resize(out[-1], (w // 2, h // 2)) * (w // 2) / w
        out.append(np.ascontiguousarray(small, dtype=np.float32))
    return out


def residual(reference: np.ndarray, query: np.ndarray, h_pix: np.ndarray,
             border_px: float = 0.0) -> tuple[float, int]:
    """Mean squared difference of query(W(x)) and reference(x) over in-bounds pixels."""
    ref = np.ascontiguousarray(reference, dtype=np.float32)
    qry = np.ascontiguousarray(query, dtype=np.float32)
    h, w = ref.shape
    hn = np.ascontiguousarray(to_normalized(h_pix, w, h))
    _, _, sse, n = lk_accumulate(ref, qry, qry, qry, hn, False, border_px)
    return (sse / n if n else float("inf")), n


def _as_levels(images, levels: int) -> list[np.ndarray]:
    if isinstance(images, (list, tuple)):
        return [np.ascontiguousarray(im, dtype=np.float32) for im in images[:levels]]
    return _pyramid(images, levels)


def lk_align(reference, query, init: np.ndarray | None = None,
             settings: LkSettings = LkSettings(),
             border_px: float = 0.0) -> tuple[np.ndarray, LkDiagnostics]:
    """Forward-additive Gauss-Newton over the 8 homography entries, coarse to fine.

    Minimizes sum_x (query(W(x; h)) - reference(x))^2 over pixels whose warped
    position lies inside the query (and at least ``border_px`` from its edge).
    ``reference`` and ``query`` are distance images, or pyramids of them (finest
    first) when the caller builds the coarse levels itself. Returns the warp in
    pixel coordinates of the finest level (reference -> query) and diagnostics.
    """
    refs = _as_levels(reference, settings.pyramid_levels)
    qrys = _as_levels(query, settings.pyramid_levels)
    if len(refs) != len(qrys) or any(r.shape != q.shape for r, q in zip(refs, qrys)):
        raise ValueError("reference and query images (or pyramids) differ in shape")
    reference, query = refs[0], qrys[0]
    h, w = reference.shape
    init = np.eye(3) if init is None else np.asarray(init, dtype=np.float64)
    if abs(np.linalg.det(init)) <= 1e-12:
        raise ValueError("initial homography is singular")

    # normalized coordinates are shared by every pyramid level
    hn = to_normalized(init, w, h)

    before, _ = residual(reference, query, init, border_px)
    iterations = 0
    converged = False
    for lvl in range(len(refs) - 1, -1, -1):
        ref, qry = refs[lvl], qrys[lvl]
        gx, gy = image_gradients(qry)
        converged = False
        for _ in range(settings.max_iterations):
            A, b, _, n = lk_accumulate(ref, qry, gx, gy, np.ascontiguousarray(hn), True, border_px)
            iterations += 1
            if n < 8:
                break
            try:
                dp = np.linalg.solve(A, b)
            except np.linalg.LinAlgError:
                break
            if not np.all(np.isfinite(dp)):
                break
            hn = hn + np.append(dp, 0.0).reshape(3, 3)
            if np.linalg.norm(dp) < settings.convergence_tol:
                converged = True
                break

    h_pix = from_normalized(hn, w, h)
    after, n_after = residual(reference, query, h_pix, border_px)
    if np.isfinite(before):
        diverged = not (after <= DIVERGENCE_RATIO * before)
    else:
        diverged = not np.isfinite(after)
    diag = LkDiagnostics(converged=converged and not diverged, iterations=iterations,
                         residual_before=before, residual_after=after, diverged=diverged,
                         valid_pixels=n_after)
    return h_pix, diag


def working_truncation(settings: LkSettings) -> float:
    return scaled_truncation(settings.working_size[0], settings.truncate_px)


def level_sizes(settings: LkSettings) -> list[tuple[int, int]]:
    w, h = settings.working_size
    sizes = []
    for _ in range(settings.pyramid_levels):
        if sizes and min(w, h) < 16:
            break
        sizes.append((w, h))
        w, h = w // 2, h // 2
    return sizes


def distance_pyramid(edge, settings: LkSettings) -> list[np.ndarray]:
    """Distance images at the working size and successive halvings, finest first.

    Every level truncates at the same pixel count, so coarse levels see a
    proportionally wider basin of attraction.
    """
    trunc = working_truncation(settings)
    return [distance_transform(downsample_edges(edge, size), trunc) for size in level_sizes(settings)]


def _render_margin(pose: CameraPose, settings: LkSettings) -> tuple[int, list[int]]:
    """Full-resolution canvas margin and the matching margin at each pyramid level."""
    sizes = level_sizes(settings)
    fw, fh = pose.image_size
    ww, wh = settings.working_size
    if fw % ww or fh % wh or fw // ww != fh // wh:
        return 0, [0] * len(sizes)
    factor = fw // ww
    coarse = math.ceil(working_truncation(settings))
    per_level = [coarse * 2 ** (len(sizes) - 1 - lvl) for lvl in range(len(sizes))]
    return per_level[0] * factor, per_level


def reference_pyramid(template: FieldTemplate, pose: CameraPose,
                      settings: LkSettings) -> tuple[list[np.ndarray], EdgeImage]:
    """Distance pyramid of a rendered pose whose values account for off-frame markings.

    The pose is rendered on a canvas enlarged by the truncation radius (same
    principal point), transformed, then cropped back to the frame.
    """
    margin, level_margins = _render_margin(pose, settings)
    big = replace(pose, image_width=pose.image_width + 2 * margin,
                  image_height=pose.image_height + 2 * margin)
    canvas = render_edge_image(template, big, settings.line_width_px)
    trunc = working_truncation(settings)
    levels = []
    for (w, h), m in zip(level_sizes(settings), level_margins):
        dist = distance_transform(downsample_edges(canvas, (w + 2 * m, h + 2 * m)), trunc)
        levels.append(np.ascontiguousarray(dist[m:m + h, m:m + w]))
    frame = EdgeImage(canvas.pixels[margin:margin + pose.image_height,
                                    margin:margin + pose.image_width])
    return levels, frame


def pose_residual(pose: CameraPose, template: FieldTemplate, query_dist: np.ndarray,
                  settings: LkSettings) -> float:
    """Mean squared difference between the query distance image and the pose's rendering."""
    edge = render_edge_image(template, pose, settings.line_width_px)
    dist = distance_transform(downsample_edges(edge, settings.working_size),
                              working_truncation(settings))
    diff = dist.astype(np.float64) - query_dist
    return float(np.mean(diff * diff))


def refine_pose(query_edge, retrieved_pose: CameraPose, template: FieldTemplate,
                settings: LkSettings = LkSettings()) -> RefinementResult:
    """Align the retrieved pose's rendering to the query and chain the warp into a pose.

    Falls back to the retrieved pose (refined=False, converged=False) when the
    query has no edges, LK diverges, the refined homography is not a valid
    camera, or the refined pose fits the query worse than the retrieved one.
    """
    qpx = query_edge.pixels if isinstance(query_edge, EdgeImage) else np.asarray(query_edge)
    full_w, full_h = retrieved_pose.image_size
    identity = np.eye(3)

    def fallback(cause: str, iterations: int = 0, before: float = float("nan"),
                 after: float = float("nan"), **details) -> RefinementResult:
        logger.debug("refinement fell back to the retrieved pose: %s", cause)
        return RefinementResult(retrieved_pose, identity, False, iterations, before, after,
                                refined=False, cause=cause, details=details)

    if qpx.shape != (full_h, full_w):
        raise ValueError(f"query is {qpx.shape[1]}x{qpx.shape[0]}, pose expects {full_w}x{full_h}")
    if not np.any(qpx):
        return fallback("query edge image is empty")

    q_levels = distance_pyramid(qpx, settings)
    r_levels, r_edge = reference_pyramid(template, retrieved_pose, settings)
    if not np.any(r_edge.pixels):
        return fallback("retrieved pose renders no edges")
    q_dist = q_levels[0]

    h_lk, diag = lk_align(r_levels, q_levels, identity, settings,
                          border_px=working_truncation(settings))
    if diag.diverged:
        return fallback("alignment diverged", diag.iterations, diag.residual_before,
                        diag.residual_after)

    ww, wh = settings.working_size
    S = np.diag([ww / full_w, wh / full_h, 1.0])
    warp = normalize_homography(np.linalg.inv(S) @ h_lk @ S)
    h_refined = warp @ homography_from_pose(retrieved_pose)
    try:
        pose, transfer_rms = fit_pose_to_homography(h_refined, retrieved_pose)
        homography_from_pose(pose)
    except (NonPhysicalHomographyError, DegeneratePoseError, ValueError) as exc:
        return fallback(f"non-physical refined homography: {exc}", diag.iterations,
                        diag.residual_before, diag.residual_after)

    retrieved_fit = pose_residual(retrieved_pose, template, q_dist, settings)
    refined_fit = pose_residual(pose, template, q_dist, settings)
    details = {"retrieved_fit": retrieved_fit, "refined_fit": refined_fit,
               "transfer_rms_px": transfer_rms}
    if refined_fit > retrieved_fit:
        return fallback("refined pose fits the query worse than the retrieved pose",
                        diag.iterations, diag.residual_before, diag.residual_after, **details)
    return RefinementResult(pose, warp, diag.converged, diag.iterations, diag.residual_before,
                            diag.residual_after, refined=True, details=details)
