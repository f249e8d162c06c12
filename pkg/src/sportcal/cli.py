"""Command-line entry point: template, db, calibrate, eval and synth-experiment.

Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.
Every output file is written to a temporary name and renamed into place.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import _backend
from .camera import CameraPose
from .config import ConfigError, PipelineConfig, load_config
from .database import (DatabaseError, build_database, feature_for_edge_image, load_database,
                       query_indices, save_database)
from .evaluation import evaluate_poses, run_displacement_experiment, write_text_atomic
from .lk import distance_pyramid, pose_residual, refine_pose
from .render import binarize, read_image, render_edge_image, write_image
from .sampling import InvalidDistributionError, sample_poses
from .template import BUILTIN_TEMPLATES, TemplateError, load_template

logger = logging.getLogger("sportcal")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers

def _config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _threads(args) -> int:
    n = args.threads if args.threads is not None else (os.cpu_count() or 1)
    if n < 1:
        raise UsageError("--threads must be >= 1")
    return n


def _write_json(path: str | os.PathLike, obj: Any) -> None:
    write_text_atomic(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_pose_file(path: str | os.PathLike) -> CameraPose:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if isinstance(data, dict) and "pose" in data and isinstance(data["pose"], dict):
        data = data["pose"]
    return CameraPose.from_dict(data)


def read_pose_records(path: str | os.PathLike) -> dict[str, CameraPose]:
    """Poses keyed by id from a JSON array or one JSON object per line."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        stripped = text.lstrip()
        if stripped.startswith("["):
            records = json.loads(text)
        else:
            records = [json.loads(line) for line in text.splitlines() if line.strip()]
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    out: dict[str, CameraPose] = {}
    for n, rec in enumerate(records):
        if not isinstance(rec, dict) or "id" not in rec:
            raise ConfigError(f"{path}: record {n} has no id")
        key = str(rec["id"])
        if key in out:
            raise ConfigError(f"{path}: duplicate id {key!r}")
        pose = rec.get("pose", rec)
        out[key] = CameraPose.from_dict(pose)
    return out


# ---------------------------------------------------------------- commands

def _template_arg(name_or_path: str):
    if name_or_path in BUILTIN_TEMPLATES:
        return BUILTIN_TEMPLATES[name_or_path]()
    if not Path(name_or_path).is_file():
        raise ConfigError(f"template file {name_or_path!r} not found")
    return load_template(name_or_path)


def cmd_template_validate(args) -> int:
    t = _template_arg(args.path)
    print(f"{args.path}: ok  name={t.name} field={t.length_m:g}x{t.width_m:g} m "
          f"segments={len(t.segments)} arcs={len(t.arcs)}")
    return EXIT_OK


def cmd_template_render(args) -> int:
    cfg = _config(args)
    template = _template_arg(args.path)
    pose = _read_pose_file(args.pose)
    width = args.line_width if args.line_width is not None else cfg.database.line_width_px
    edge = render_edge_image(template, pose, width)
    write_image(args.out, edge.pixels)
    print(f"wrote {args.out} ({pose.image_width}x{pose.image_height}, {edge.edge_count()} edge pixels)")
    return EXIT_OK


def cmd_db_build(args) -> int:
    cfg = _config(args)
    template = cfg.load_template()
    size = args.size if args.size is not None else cfg.database.size
    if size < 1:
        raise UsageError("--size must be >= 1")
    threads = _threads(args)
    t0 = time.perf_counter()
    poses = sample_poses(cfg.sampling, size)
    metadata = {"template": template.to_dict(), "sampling": cfg.sampling.to_dict(),
                "features": {"cell": list(cfg.features.cell), "block": list(cfg.features.block),
                             "bins": cfg.features.bins,
                             "input_size": list(cfg.features.input_size)},
                "line_width_px": cfg.database.line_width_px, "size": size}
    db = build_database(poses, template, cfg.database.line_width_px, cfg.features, metadata,
                        threads=threads)
    save_database(db, args.out)
    elapsed = time.perf_counter() - t0
    print(f"wrote {args.out}: {len(db)} records, feature dim {db.feature_dim}, "
          f"config hash {db.config_hash:016x}, {elapsed:.1f} s")
    return EXIT_OK


def cmd_db_info(args) -> int:
    db = load_database(args.path)
    info = {"path": str(args.path), "records": len(db), "feature_dim": db.feature_dim,
            "pose_dim": int(db.poses.shape[1]), "config_hash": f"{db.config_hash:016x}",
            "checksum": "ok"}
    if len(db):
        f = db.poses[:, 0]
        info["focal_range_px"] = [float(f.min()), float(f.max())]
    print(json.dumps(info, indent=2))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _config(args)
    template = cfg.load_template()
    if args.k < 1:
        raise UsageError("--k must be >= 1")
    t0 = time.perf_counter()
    raster = read_image(args.image)
    edge = binarize(raster)
    height, width = edge.pixels.shape
    expected = (cfg.sampling.image_width, cfg.sampling.image_height)
    if (width, height) != expected:
        raise ValueError(f"image is {width}x{height} but the database poses assume "
                         f"{expected[0]}x{expected[1]}")
    db = load_database(args.db, image_size=expected)
    feature = feature_for_edge_image(edge, cfg.features)
    if feature.shape[0] != db.feature_dim:
        raise DatabaseError(f"image feature dim {feature.shape[0]} does not match "
                            f"database dim {db.feature_dim}")
    blank = edge.edge_count() == 0
    if blank:
        logger.warning("edge image %s is blank; returning the retrieval result", args.image)
    idx, dist = query_indices(db, feature, args.k)
    neighbors = [{"index": int(i), "distance": float(d)} for i, d in zip(idx, dist)]

    diagnostics: dict[str, Any] = {"neighbors": neighbors, "retrieval_index": int(idx[0]),
                                   "retrieval_distance": float(dist[0]),
                                   "backend": _backend.NAME}
    if args.no_refine:
        pose = db.pose(int(idx[0]))
        diagnostics.update(refinement="skipped", converged=False)
    else:
        results = [refine_pose(edge, db.pose(int(i)), template, cfg.refine) for i in idx]
        if len(results) > 1:
            q_dist = distance_pyramid(edge, cfg.refine)[0]
            scores = [pose_residual(r.pose, template, q_dist, cfg.refine) for r in results]
            rank = int(np.argmin(scores))
        else:
            rank = 0
        res = results[rank]
        pose = res.pose
        diagnostics.update(
            refinement="applied" if res.refined else "fell back to retrieval",
            refined_from_rank=rank, converged=bool(res.converged), refined=bool(res.refined),
            iterations=res.iterations, residual_before=_finite(res.residual_before),
            residual_after=_finite(res.residual_after), cause=res.cause,
            **{k: _finite(v) for k, v in res.details.items()})
    if blank:
        diagnostics["warning"] = "blank edge image"
        diagnostics["converged"] = False
    diagnostics["wall_time_s"] = time.perf_counter() - t0
    _write_json(args.out, {"pose": pose.to_dict(), "diagnostics": diagnostics})
    print(f"wrote {args.out}: f={pose.focal_length:.1f} pan={pose.pan_deg:.3f} "
          f"tilt={pose.tilt_deg:.3f} ({diagnostics.get('refinement')})")
    return EXIT_OK


def _finite(v):
    return float(v) if isinstance(v, (int, float)) and np.isfinite(v) else None


def cmd_eval(args) -> int:
    cfg = _config(args)
    template = cfg.load_template()
    pred = read_pose_records(args.pred)
    gt = read_pose_records(args.gt)
    orphans = sorted(set(pred) ^ set(gt))
    if orphans:
        only_pred = sorted(set(pred) - set(gt))
        only_gt = sorted(set(gt) - set(pred))
        print(f"error: ids do not match; only in predictions: {only_pred}; "
              f"only in ground truth: {only_gt}", file=sys.stderr)
        return EXIT_RUNTIME
    report = evaluate_poses(pred, gt, template, args.metric)
    body = report.to_dict()
    body["metric"] = args.metric
    body["items"] = report.items
    _write_json(args.out, body)
    for name in ("iou_whole", "iou_part"):
        mean, median = body["mean"][name], body["median"][name]
        if mean is not None:
            print(f"{name}: mean {mean:.4f}  median {median:.4f}  (n={len(report.items)})")
    return EXIT_OK


def cmd_synth_experiment(args) -> int:
    cfg = _config(args)
    template = cfg.load_template()
    exp = cfg.experiment
    if args.db_size is not None:
        exp = replace(exp, db_size=args.db_size)
    if args.test_size is not None:
        exp = replace(exp, test_size=args.test_size)
    refine = cfg.refine
    t0 = time.perf_counter()
    result = run_displacement_experiment(
        exp, template, hog_cfg=cfg.features, lk_settings=refine,
        line_width_px=cfg.database.line_width_px, threads=_threads(args),
        progress=lambda msg: logger.info("%s (%.1f s)", msg, time.perf_counter() - t0))
    write_text_atomic(args.out, result.csv_text())
    if args.items:
        write_text_atomic(args.items, result.jsonl_text())
    print(result.table())
    print(f"wrote {args.out} ({time.perf_counter() - t0:.1f} s)")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML pipeline config (all sections optional)")
    common.add_argument("--seed", type=int, help="override the sampling and experiment seed")
    common.add_argument("--threads", type=int, help="worker threads (default: CPU count)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="sportcal", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    tmpl = sub.add_parser("template", help="field template utilities")
    tsub = tmpl.add_subparsers(dest="action", required=True)
    p = tsub.add_parser("validate", parents=[common], help="check a template file")
    p.add_argument("path")
    p.set_defaults(func=cmd_template_validate)
    p = tsub.add_parser("render", parents=[common], help="render an edge image for a pose")
    p.add_argument("path", help="template file or builtin name")
    p.add_argument("--pose", required=True, help="pose record (JSON)")
    p.add_argument("--out", required=True, help="output image (.pgm, or .png with Pillow)")
    p.add_argument("--line-width", type=float, help="line width in pixels")
    p.set_defaults(func=cmd_template_render)

    db = sub.add_parser("db", help="feature-pose database")
    dsub = db.add_subparsers(dest="action", required=True)
    p = dsub.add_parser("build", parents=[common], help="sample, render, describe and save")
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, help="number of poses (overrides [database] size)")
    p.set_defaults(func=cmd_db_build)
    p = dsub.add_parser("info", parents=[common], help="print a database header summary")
    p.add_argument("path")
    p.set_defaults(func=cmd_db_info)

    p = sub.add_parser("calibrate", parents=[common], help="calibrate one edge image")
    p.add_argument("--db", required=True)
    p.add_argument("--image", required=True, help="binary edge image (PGM P5 or PNG)")
    p.add_argument("--out", required=True, help="pose result (JSON)")
    p.add_argument("--k", type=int, default=1, help="retrieval depth; each hit is refined")
    p.add_argument("--no-refine", action="store_true", help="retrieval only")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("eval", parents=[common], help="IoU of predicted vs ground-truth poses")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--metric", choices=("whole", "part", "both"), default="both")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth-experiment", parents=[common],
                       help="IoU_part versus camera displacement")
    p.add_argument("--out", required=True, help="per-bin CSV")
    p.add_argument("--items", help="optional per-sample JSON lines")
    p.add_argument("--db-size", type=int)
    p.add_argument("--test-size", type=int)
    p.set_defaults(func=cmd_synth_experiment)
    return parser


CONFIG_ERRORS = (ConfigError, TemplateError, InvalidDistributionError, UsageError)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:
        if args.verbose:
            logger.exception("command failed")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
