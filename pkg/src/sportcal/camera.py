"""PTZ camera model: pose record, projection, and pose <-> ground-plane homography.

Coordinate systems:
    - World: origin at the left-bottom corner of the field template, X along
      the field length, Y along the width, Z up. Markings lie on z = 0.
    - Camera: X right, Y down, Z forward (view direction).
    - Image: continuous pixel coordinates, pixel (row r, col c) covers
      [c, c+1) x [r, r+1); the principal point is (w/2, h/2).

The rotation is decomposed as R = Q_tilt @ Q_pan @ S_roll @ S_base where the
base tilt of -90 degrees turns world +Y into the camera view direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

POSE_DIM = 9
MAX_ABS_ROLL_DEG = 0.5
_BEHIND_EPS = 1e-9


class DegeneratePoseError(ValueError):
    """The pose does not induce an invertible ground-plane homography."""


class NonPhysicalHomographyError(ValueError):
    """The homography cannot be produced by a camera of this model."""


@dataclass(frozen=True)
class CameraPose:
    focal_length: float
    pan_deg: float
    tilt_deg: float
    roll_deg: float = 0.0
    base_tilt_deg: float = -90.0
    center: tuple[float, float, float] = (52.0, -45.0, 17.0)
    image_width: int = 1280
    image_height: int = 720
    reserved: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if len(self.center) != 3:
            raise ValueError(f"center must have 3 components, got {len(self.center)}")
        if not self.focal_length > 0:
            raise ValueError(f"focal_length must be positive, got {self.focal_length}")
        if self.image_width <= 0 or self.image_height <= 0:
            raise ValueError(
                f"image size must be positive, got {self.image_width}x{self.image_height}"
            )
        if abs(self.roll_deg) > MAX_ABS_ROLL_DEG:
            raise ValueError(f"|roll_deg| must be <= {MAX_ABS_ROLL_DEG}, got {self.roll_deg}")
        values = (self.focal_length, self.pan_deg, self.tilt_deg, self.roll_deg,
                  self.base_tilt_deg, *self.center)
        if not all(math.isfinite(v) for v in values):
            raise ValueError("pose parameters must be finite")

    @property
    def image_size(self) -> tuple[int, int]:
        return (self.image_width, self.image_height)

    def to_vector(self) -> np.ndarray:
        """Fixed-width record: (f, pan, tilt, roll, base_tilt, Cx, Cy, Cz, reserved)."""
        return np.array(
            [self.focal_length, self.pan_deg, self.tilt_deg, self.roll_deg,
             self.base_tilt_deg, *self.center, self.reserved],
            dtype=np.float64,
        )

    @classmethod
    def from_vector(cls, v, image_width: int = 1280, image_height: int = 720) -> "CameraPose":
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (POSE_DIM,):
            raise ValueError(f"pose vector must have {POSE_DIM} entries, got shape {v.shape}")
        return cls(
            focal_length=float(v[0]), pan_deg=float(v[1]), tilt_deg=float(v[2]),
            roll_deg=float(v[3]), base_tilt_deg=float(v[4]),
            center=(float(v[5]), float(v[6]), float(v[7])),
            image_width=image_width, image_height=image_height, reserved=float(v[8]),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "focal_length": self.focal_length,
            "pan_deg": self.pan_deg,
            "tilt_deg": self.tilt_deg,
            "roll_deg": self.roll_deg,
            "base_tilt_deg": self.base_tilt_deg,
            "center": list(self.center),
            "image_size": [self.image_width, self.image_height],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "CameraPose":
        known = {"focal_length", "pan_deg", "tilt_deg", "roll_deg", "base_tilt_deg",
                 "center", "image_size", "id"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown pose keys: {sorted(unknown)}")
        missing = {"focal_length", "pan_deg", "tilt_deg", "center"} - set(d)
        if missing:
            raise ValueError(f"pose record is missing keys: {sorted(missing)}")
        width, height = d.get("image_size", (1280, 720))
        return cls(
            focal_length=float(d["focal_length"]),
            pan_deg=float(d["pan_deg"]),
            tilt_deg=float(d["tilt_deg"]),
            roll_deg=float(d.get("roll_deg", 0.0)),
            base_tilt_deg=float(d.get("base_tilt_deg", -90.0)),
            center=tuple(d["center"]),
            image_width=int(width),
            image_height=int(height),
        )


def _rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def base_rotation(base_tilt_deg: float) -> np.ndarray:
    return _rot_x(-math.radians(base_tilt_deg))


def rotation_from_pose(pose: CameraPose) -> np.ndarray:
    """World-to-camera rotation.

    Negative tilt looks down at the field, positive pan turns toward world +X.
    """
    tilt = _rot_x(-math.radians(pose.tilt_deg))
    pan = _rot_y(-math.radians(pose.pan_deg))
    roll = _rot_z(math.radians(pose.roll_deg))
    return tilt @ pan @ roll @ base_rotation(pose.base_tilt_deg)


def intrinsic_matrix(focal_length: float, width: int, height: int) -> np.ndarray:
    return np.array([
        [focal_length, 0.0, width / 2.0],
        [0.0, focal_length, height / 2.0],
        [0.0, 0.0, 1.0],
    ])


def projection_from_pose(pose: CameraPose) -> np.ndarray:
    """3x4 matrix P = K R [I | -C]."""
    K = intrinsic_matrix(pose.focal_length, pose.image_width, pose.image_height)
    R = rotation_from_pose(pose)
    C = np.asarray(pose.center, dtype=np.float64)
    return K @ R @ np.hstack([np.eye(3), -C[:, None]])


def project_point(proj: np.ndarray, world) -> np.ndarray | None:
    """Project a world point to pixels; None when it is not in front of the camera."""
    X = np.append(np.asarray(world, dtype=np.float64), 1.0)
    x = proj @ X
    if x[2] <= _BEHIND_EPS:
        return None
    return x[:2] / x[2]


def project_points(proj: np.ndarray, world: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection of (N, 3) points.

    Returns (pixels (N, 2), in_front mask). Pixels of points behind the camera are NaN.
    """
    world = np.asarray(world, dtype=np.float64)
    x = world @ proj[:, :3].T + proj[:, 3]
    front = x[:, 2] > _BEHIND_EPS
    px = np.full((len(world), 2), np.nan)
    px[front] = x[front, :2] / x[front, 2:3]
    return px, front


def normalize_homography(m: np.ndarray) -> np.ndarray:
    """Scale so m[2, 2] == 1 when nonzero, otherwise to unit Frobenius norm."""
    m = np.asarray(m, dtype=np.float64)
    if m[2, 2] != 0.0:
        return m / m[2, 2]
    return m / np.linalg.norm(m)


def oriented_homography(m: np.ndarray) -> np.ndarray:
    """Rescale a plane-to-image homography so in-front points get positive w.

    For H = lam * K [r1 r2 t] with the camera above the plane,
    det(H) = -lam^3 f^2 C_z, so the sign of lam is -sign(det H).
    """
    m = np.asarray(m, dtype=np.float64)
    d = np.linalg.det(m)
    if d == 0.0:
        raise DegeneratePoseError("singular homography")
    return -m if d > 0 else m


def homography_from_pose(pose: CameraPose) -> np.ndarray:
    if pose.center[2] <= 0:
        raise DegeneratePoseError(f"camera center must be above the plane, got z={pose.center[2]}")
    P = projection_from_pose(pose)
    H = normalize_homography(P[:, [0, 1, 3]])
    if abs(np.linalg.det(H)) <= 1e-12:
        raise DegeneratePoseError("pose induces a singular ground-plane homography")
    return H


def _nearest_rotation(m: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r


def _self_calibrate(h: np.ndarray, image_width: int, image_height: int,
                    base_tilt_deg: float) -> tuple[float, float, float, float, np.ndarray]:
    """(f, pan, tilt, roll, C) from a plane homography, with no range check on roll."""
    h = np.asarray(h, dtype=np.float64)
    if not np.all(np.isfinite(h)):
        raise NonPhysicalHomographyError("homography has non-finite entries")
    T = np.array([[1.0, 0.0, -image_width / 2.0],
                  [0.0, 1.0, -image_height / 2.0],
                  [0.0, 0.0, 1.0]])
    ht = T @ h
    ht = ht / np.linalg.norm(ht)
    h1, h2, h3 = ht[:, 0], ht[:, 1], ht[:, 2]

    # Both orthogonality constraints are linear in u = 1/f^2: a*u + b = 0.
    a = np.array([h1[0] * h2[0] + h1[1] * h2[1],
                  h1[0] ** 2 + h1[1] ** 2 - h2[0] ** 2 - h2[1] ** 2])
    b = np.array([h1[2] * h2[2], h1[2] ** 2 - h2[2] ** 2])
    denom = float(a @ a)
    if denom <= 0.0:
        raise NonPhysicalHomographyError("focal length is unobservable from this homography")
    u = -float(a @ b) / denom
    if not u > 0:
        raise NonPhysicalHomographyError(f"focal length squared solves non-positive (1/f^2={u})")
    f = 1.0 / math.sqrt(u)

    k_inv = np.diag([1.0 / f, 1.0 / f, 1.0])
    c1, c2, c3 = k_inv @ h1, k_inv @ h2, k_inv @ h3
    scale = np.linalg.norm(c1)
    r1 = c1 / scale
    r2 = c2 / np.linalg.norm(c2)
    t = c3 / scale
    R = _nearest_rotation(np.column_stack([r1, r2, np.cross(r1, r2)]))
    C = -R.T @ t
    if C[2] < 0:
        # Flipping the homogeneous sign negates r1, r2 and t.
        R = _nearest_rotation(np.column_stack([-r1, -r2, np.cross(r1, r2)]))
        C = -R.T @ (-t)
    if not C[2] > 0:
        raise NonPhysicalHomographyError(f"recovered camera height is not positive ({C[2]})")

    # R @ S_base^T = Rx(-tilt) Ry(-pan) Rz(roll)
    m = R @ base_rotation(base_tilt_deg).T
    b_ang = math.asin(max(-1.0, min(1.0, m[0, 2])))
    a_ang = math.atan2(-m[1, 2], m[2, 2])
    c_ang = math.atan2(-m[0, 1], m[0, 0])
    return f, -math.degrees(b_ang), -math.degrees(a_ang), math.degrees(c_ang), C


def pose_from_homography(h: np.ndarray, image_width: int, image_height: int,
                         base_tilt_deg: float = -90.0) -> CameraPose:
    """Self-calibrate focal length and recover the PTZ pose from a plane homography."""
    f, pan, tilt, roll, C = _self_calibrate(h, image_width, image_height, base_tilt_deg)
    if abs(roll) > MAX_ABS_ROLL_DEG:
        raise NonPhysicalHomographyError(f"recovered roll {roll:.3f} deg is outside the model")
    return CameraPose(
        focal_length=f, pan_deg=pan, tilt_deg=tilt, roll_deg=roll, base_tilt_deg=base_tilt_deg,
        center=(float(C[0]), float(C[1]), float(C[2])),
        image_width=image_width, image_height=image_height,
    )


def _image_grid(width: int, height: int, n: int = 5) -> np.ndarray:
    u, v = np.meshgrid(np.linspace(0.0, width, n), np.linspace(0.0, height, n))
    return np.column_stack([u.ravel(), v.ravel(), np.ones(n * n)])


def _transfer_residual(x: np.ndarray, target_inv: np.ndarray, grid: np.ndarray,
                       template: CameraPose) -> np.ndarray:
    K = intrinsic_matrix(math.exp(x[0]), template.image_width, template.image_height)
    R = (_rot_x(-math.radians(x[2])) @ _rot_y(-math.radians(x[1]))
         @ _rot_z(math.radians(x[3])) @ base_rotation(template.base_tilt_deg))
    H = K @ np.column_stack([R[:, 0], R[:, 1], -R @ x[4:7]])
    m = grid @ (H @ target_inv).T
    return (m[:, :2] / m[:, 2:] - grid[:, :2]).ravel()


def _pose_params(pose: CameraPose) -> np.ndarray:
    return np.array([math.log(pose.focal_length), pose.pan_deg, pose.tilt_deg, pose.roll_deg,
                     *pose.center])


def _pose_from_params(x: np.ndarray, template: CameraPose) -> CameraPose:
    return CameraPose(
        focal_length=math.exp(x[0]), pan_deg=float(x[1]), tilt_deg=float(x[2]),
        roll_deg=float(min(max(x[3], -MAX_ABS_ROLL_DEG), MAX_ABS_ROLL_DEG)),
        base_tilt_deg=template.base_tilt_deg, center=(float(x[4]), float(x[5]), float(x[6])),
        image_width=template.image_width, image_height=template.image_height,
    )


def fit_pose_to_homography(h: np.ndarray, init: CameraPose,
                           max_evaluations: int = 200) -> tuple[CameraPose, float]:
    """Closest PTZ pose to a plane homography, by image transfer error.

    Minimizes the pixel displacement of a 5x5 image grid under
    H(pose) @ h^-1 with roll held inside the model range and the camera
    above the plane. Starts from ``init`` and from the closed-form
    self-calibration when that exists; returns the best pose and its RMS
    transfer error in pixels.
    """
    from scipy.optimize import least_squares

    h = np.asarray(h, dtype=np.float64)
    h_inv = np.linalg.inv(h / np.linalg.norm(h))
    w, hh = init.image_size
    grid = _image_grid(w, hh)
    starts = [_pose_params(init)]
    try:
        f, pan, tilt, roll, C = _self_calibrate(h, w, hh, init.base_tilt_deg)
        roll = min(max(roll, -MAX_ABS_ROLL_DEG), MAX_ABS_ROLL_DEG)
        starts.append(np.array([math.log(f), pan, tilt, roll, *C]))
    except NonPhysicalHomographyError:
        pass
    lo = np.array([-np.inf, -np.inf, -np.inf, -MAX_ABS_ROLL_DEG, -np.inf, -np.inf, 1e-3])
    hi = np.array([np.inf, np.inf, np.inf, MAX_ABS_ROLL_DEG, np.inf, np.inf, np.inf])
    best = None
    for x0 in starts:
        x0 = np.clip(x0, lo + 1e-12, hi - 1e-12)
        try:
            sol = least_squares(_transfer_residual, x0, bounds=(lo, hi), x_scale="jac",
                                max_nfev=max_evaluations, args=(h_inv, grid, init))
        except (DegeneratePoseError, ValueError, FloatingPointError):
            continue
        if np.all(np.isfinite(sol.fun)) and (best is None or sol.cost < best.cost):
            best = sol
    if best is None:
        raise NonPhysicalHomographyError("no PTZ pose fits the homography")
    rms = float(np.sqrt(np.mean(best.fun ** 2)))
    return _pose_from_params(best.x, init), rms
