"""Random PTZ camera poses from a location prior and uniform pan/tilt/focal ranges."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from .camera import CameraPose

logger = logging.getLogger(__name__)

MIN_CAMERA_HEIGHT_M = 1.0
_MAX_REJECTIONS = 1000


class InvalidDistributionError(ValueError):
    pass


def _interval(v) -> tuple[float, float]:
    lo, hi = (float(x) for x in v)
    return (lo, hi)


@dataclass(frozen=True)
class PoseDistribution:
    center_mean: tuple[float, float, float] = (52.0, -45.0, 17.0)
    center_stddev: tuple[float, float, float] = (2.0, 9.0, 3.0)
    pan_range_deg: tuple[float, float] = (-35.0, 35.0)
    tilt_range_deg: tuple[float, float] = (-15.0, -5.0)
    focal_range_px: tuple[float, float] = (1000.0, 6000.0)
    roll_range_deg: tuple[float, float] = (-0.1, 0.1)
    base_tilt_deg: float = -90.0
    image_width: int = 1280
    image_height: int = 720
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "center_mean", tuple(float(x) for x in self.center_mean))
        object.__setattr__(self, "center_stddev", tuple(float(x) for x in self.center_stddev))
        for name in ("pan_range_deg", "tilt_range_deg", "focal_range_px", "roll_range_deg"):
            object.__setattr__(self, name, _interval(getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        if len(self.center_mean) != 3 or len(self.center_stddev) != 3:
            raise InvalidDistributionError("center mean and stddev need 3 components")
        if any(s < 0 for s in self.center_stddev):
            raise InvalidDistributionError(f"stddev must be >= 0, got {self.center_stddev}")
        for name in ("pan_range_deg", "tilt_range_deg", "focal_range_px", "roll_range_deg"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise InvalidDistributionError(f"{name}: lower bound {lo} exceeds upper {hi}")
        if self.focal_range_px[0] <= 0:
            raise InvalidDistributionError("focal range must be positive")
        if not (-90.0 < self.tilt_range_deg[0] and self.tilt_range_deg[1] < 0.0):
            raise InvalidDistributionError("tilt range must lie inside (-90, 0)")
        if max(abs(r) for r in self.roll_range_deg) > 0.5:
            raise InvalidDistributionError("roll range must lie inside [-0.5, 0.5]")
        if self.image_width <= 0 or self.image_height <= 0:
            raise InvalidDistributionError("image size must be positive")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PoseDistribution":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidDistributionError(f"unknown sampling keys: {sorted(unknown)}")
        kwargs = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()}
        return cls(**kwargs)


WORLD_CUP = PoseDistribution()


def substream(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for one sample: depends only on (seed, stream, index)."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(int(stream), int(index)))
    return np.random.Generator(np.random.PCG64(ss))


def draw_pose(dist: PoseDistribution, rng: np.random.Generator,
              center: tuple[float, float, float] | None = None) -> CameraPose:
    """One pose; ``center`` overrides the Gaussian location draw."""
    if center is None:
        for _ in range(_MAX_REJECTIONS):
            c = rng.normal(dist.center_mean, dist.center_stddev)
            if c[2] > MIN_CAMERA_HEIGHT_M:
                break
            logger.info("rejected sampled camera center %s (height <= %.1f m)", c, MIN_CAMERA_HEIGHT_M)
        else:
            raise InvalidDistributionError("camera height distribution is almost entirely below 1 m")
        center = (float(c[0]), float(c[1]), float(c[2]))
    pan = rng.uniform(*dist.pan_range_deg)
    tilt = rng.uniform(*dist.tilt_range_deg)
    focal = rng.uniform(*dist.focal_range_px)
    roll = rng.uniform(*dist.roll_range_deg)
    return CameraPose(
        focal_length=float(focal), pan_deg=float(pan), tilt_deg=float(tilt),
        roll_deg=float(roll), base_tilt_deg=dist.base_tilt_deg, center=center,
        image_width=dist.image_width, image_height=dist.image_height,
    )


def sample_pose(dist: PoseDistribution, index: int, stream: int = 0) -> CameraPose:
    return draw_pose(dist, substream(dist.seed, index, stream))


def sample_poses(dist: PoseDistribution, n: int, stream: int = 0) -> list[CameraPose]:
    """``n`` poses; sample i depends only on (seed, i), never on iteration order."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    dist.validate()
    return [sample_pose(dist, i, stream) for i in range(n)]
