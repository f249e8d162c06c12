"""Feature-pose database: packed (descriptor, pose) records with exact k-NN search.

File layout (little-endian)::

    "FPDB" | u32 version=1 | u32 record_count | u32 feature_dim | u32 pose_dim=9 | u64 config_hash
    record_count x (9 x f64 pose, feature_dim x f32 feature)
    u32 CRC32 of the record body
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .camera import POSE_DIM, CameraPose
from .hog import HogConfig, hog_features
from .render import DEFAULT_LINE_WIDTH_PX, render_edge_image, resize_to_feature_scale
from .template import FieldTemplate

MAGIC = b"FPDB"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIQ")
_F32_EPS = float(np.finfo(np.float32).eps)


class DatabaseError(ValueError):
    pass


class DatabaseVersionError(DatabaseError):
    pass


class DatabaseTruncatedError(DatabaseError):
    def __init__(self, message: str, record_index: int):
        super().__init__(message)
        self.record_index = record_index


class DatabaseChecksumError(DatabaseError):
    pass


class DatabaseBuildError(RuntimeError):
    def __init__(self, message: str, pose_index: int):
        super().__init__(message)
        self.pose_index = pose_index


def config_hash(metadata: dict[str, Any]) -> int:
    blob = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


@dataclass(eq=False)
class FeaturePoseDatabase:
    features: np.ndarray  # (n, dim) float32
    poses: np.ndarray  # (n, 9) float64
    metadata: dict[str, Any] = field(default_factory=dict)
    image_size: tuple[int, int] = (1280, 720)
    config_hash: int | None = None

    def __post_init__(self) -> None:
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        self.poses = np.ascontiguousarray(self.poses, dtype=np.float64)
        if self.features.ndim != 2 or self.poses.ndim != 2:
            raise DatabaseError("features and poses must be 2D arrays")
        if self.poses.shape[1] != POSE_DIM:
            raise DatabaseError(f"pose records must have {POSE_DIM} scalars")
        if len(self.features) != len(self.poses):
            raise DatabaseError(
                f"{len(self.features)} features but {len(self.poses)} poses"
            )
        if self.config_hash is None:
            self.config_hash = config_hash(self.metadata)
        self._norms2 = np.einsum("ij,ij->i", self.features.astype(np.float64),
                                 self.features.astype(np.float64))

    def __len__(self) -> int:
        return len(self.features)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def pose(self, index: int) -> CameraPose:
        return CameraPose.from_vector(self.poses[index], *self.image_size)


def feature_for_edge_image(edge, hog_cfg: HogConfig = HogConfig()) -> np.ndarray:
    return hog_features(resize_to_feature_scale(edge, hog_cfg.input_size), hog_cfg)


def feature_for_pose(pose: CameraPose, template: FieldTemplate,
                     line_width_px: float = DEFAULT_LINE_WIDTH_PX,
                     hog_cfg: HogConfig = HogConfig()) -> np.ndarray:
    return feature_for_edge_image(render_edge_image(template, pose, line_width_px), hog_cfg)


def build_database(poses: Sequence[CameraPose], template: FieldTemplate,
                   line_width_px: float = DEFAULT_LINE_WIDTH_PX,
                   hog_cfg: HogConfig = HogConfig(),
                   metadata: dict[str, Any] | None = None,
                   threads: int = 1) -> FeaturePoseDatabase:
    """Render, resize and describe every pose; record order equals pose order."""
    if len(poses) == 0:
        raise DatabaseError("cannot build a database from zero poses")
    size = poses[0].image_size

    def one(item: tuple[int, CameraPose]) -> np.ndarray:
        i, pose = item
        try:
            return feature_for_pose(pose, template, line_width_px, hog_cfg)
        except Exception as exc:
            raise DatabaseBuildError(f"pose {i}: {exc}", i) from exc

    features = np.empty((len(poses), hog_cfg.dim), dtype=np.float32)
    items = list(enumerate(poses))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for i, f in enumerate(pool.map(one, items)):
                features[i] = f
    else:
        for item in items:
            features[item[0]] = one(item)
    pose_arr = np.stack([p.to_vector() for p in poses])
    return FeaturePoseDatabase(features, pose_arr, dict(metadata or {}), size)


def _as_query(db: FeaturePoseDatabase, feature) -> np.ndarray:
    if len(db) == 0:
        raise DatabaseError("database is empty")
    q = np.asarray(feature, dtype=np.float64).ravel()
    if q.shape[0] != db.feature_dim:
        raise DatabaseError(f"feature dim {q.shape[0]} does not match database dim {db.feature_dim}")
    return q


def _exact_sqdist(rows: np.ndarray, q: np.ndarray) -> np.ndarray:
    # one fixed evaluation order shared by the full scan and the re-ranking step
    diff = rows.astype(np.float64) - q
    return np.add.reduce(diff * diff, axis=1)


def _rank(dist: np.ndarray, idx: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.lexsort((idx, dist))[:k]
    return idx[order], dist[order]


def query_bruteforce(db: FeaturePoseDatabase, feature, k: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Reference semantics: full scan, ascending squared L2, ties to the lower index."""
    q = _as_query(db, feature)
    dist = _exact_sqdist(db.features, q)
    return _rank(dist, np.arange(len(db)), k)


def _shortlist(db: FeaturePoseDatabase, approx: np.ndarray, qnorm: float, k: int) -> np.ndarray:
    # worst-case float32 dot-product error plus the float32 cast of the query
    max_norm = float(np.sqrt(db._norms2.max()))
    margin = 4.0 * (db.feature_dim + 2) * _F32_EPS * (max_norm + qnorm) ** 2 + 1e-12
    kth = np.partition(approx, k - 1)[k - 1]
    return np.flatnonzero(approx <= kth + margin)


def query_indices_batch(db: FeaturePoseDatabase, features, k: int = 1) -> list[tuple[np.ndarray, np.ndarray]]:
    """Exact k-NN for several queries: float32 GEMM shortlist, then exact re-ranking."""
    Q = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if len(db) == 0:
        raise DatabaseError("database is empty")
    if Q.shape[1] != db.feature_dim:
        raise DatabaseError(f"feature dim {Q.shape[1]} does not match database dim {db.feature_dim}")
    k = max(1, min(int(k), len(db)))
    dots = (Q.astype(np.float32) @ db.features.T).astype(np.float64)
    out = []
    for qi, q in enumerate(Q):
        qn2 = float(q @ q)
        approx = db._norms2 + qn2 - 2.0 * dots[qi]
        cand = _shortlist(db, approx, float(np.sqrt(qn2)), k)
        dist = _exact_sqdist(db.features[cand], q)
        out.append(_rank(dist, cand, k))
    return out


def query_indices(db: FeaturePoseDatabase, feature, k: int = 1) -> tuple[np.ndarray, np.ndarray]:
    q = _as_query(db, feature)
    return query_indices_batch(db, q[None, :], k)[0]


def query_nearest(db: FeaturePoseDatabase, feature, k: int = 1) -> list[tuple[CameraPose, float]]:
    """k nearest records as (pose, squared L2 distance), ascending."""
    idx, dist = query_indices(db, feature, k)
    return [(db.pose(int(i)), float(d)) for i, d in zip(idx, dist)]


def _record_dtype(dim: int) -> np.dtype:
    return np.dtype([("pose", "<f8", (POSE_DIM,)), ("feature", "<f4", (dim,))])


def database_bytes(db: FeaturePoseDatabase) -> bytes:
    rec = np.empty(len(db), dtype=_record_dtype(db.feature_dim))
    rec["pose"] = db.poses
    rec["feature"] = db.features
    body = rec.tobytes()
    header = _HEADER.pack(MAGIC, VERSION, len(db), db.feature_dim, POSE_DIM, db.config_hash)
    return header + body + struct.pack("<I", zlib.crc32(body))


def save_database(db: FeaturePoseDatabase, path: str | os.PathLike) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(database_bytes(db))
    os.replace(tmp, path)


def parse_database(data: bytes, image_size: tuple[int, int] = (1280, 720)) -> FeaturePoseDatabase:
    if len(data) < _HEADER.size:
        raise DatabaseTruncatedError("file is shorter than the header", 0)
    magic, version, count, dim, pose_dim, chash = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise DatabaseVersionError(f"bad magic {magic!r}; not a feature-pose database")
    if version != VERSION:
        raise DatabaseVersionError(f"unsupported database version {version}")
    if pose_dim != POSE_DIM:
        raise DatabaseVersionError(f"unsupported pose dimension {pose_dim}")
    dtype = _record_dtype(dim)
    expected = count * dtype.itemsize
    if len(data) < _HEADER.size + expected + 4:
        available = max(0, len(data) - _HEADER.size)
        index = min(available // dtype.itemsize, count)
        raise DatabaseTruncatedError(
            f"file truncated in record {index} of {count}", index
        )
    body = data[_HEADER.size:_HEADER.size + expected]
    (crc,) = struct.unpack_from("<I", data, _HEADER.size + expected)
    if zlib.crc32(body) != crc:
        raise DatabaseChecksumError("record body checksum mismatch")
    if len(data) != _HEADER.size + expected + 4:
        raise DatabaseError("trailing bytes after the checksum")
    rec = np.frombuffer(body, dtype=dtype, count=count)
    return FeaturePoseDatabase(
        features=rec["feature"].copy(), poses=rec["pose"].copy(),
        metadata={"config_hash": f"{chash:016x}"}, image_size=image_size, config_hash=chash,
    )


def load_database(path: str | os.PathLike, image_size: tuple[int, int] = (1280, 720)) -> FeaturePoseDatabase:
    return parse_database(Path(path).read_bytes(), image_size)
