"""Calibrated pinhole camera model and closed-form 3D ball localization.

Coordinate conventions used throughout the package:

- World frame: right-handed, z up, z = 0 is the court plane, origin at a
  court corner, units in meters.
- Camera frame: x right, y down, z forward along the optical axis.
- Image frame: origin at the top-left pixel, x right, y down, units in
  pixels.
- ``rotation`` maps world coordinates to camera coordinates; ``center`` is
  the camera position expressed in the world frame.

A ball seen at pixel ``(bx, by)`` with apparent diameter ``d`` px defines
three camera-frame rays (center and the two vertical edge points). Knowing
the real ball diameter in meters fixes the scale along the center ray and
therefore the full 3D position.

All types are immutable after construction and all operations are pure.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "GeometryError",
    "RectificationError",
    "DistortionCoefficients",
    "CameraIntrinsics",
    "CameraPose",
    "CalibratedCamera",
    "PixelBall",
    "WorldPoint",
    "ProjectionLocalization",
    "ProjectionLocus",
    "rectify",
    "distort_normalized",
    "ball_ray",
    "localize_from_diameter",
    "project_ball",
    "project_pixel",
    "localize_from_projection",
    "projection_locus",
    "intersect_ray_with_floor",
    "rotation_look_at",
    "camera_to_dict",
    "camera_from_dict",
    "load_camera",
    "save_camera",
    "DEFAULT_BALL_DIAMETER_M",
]

# Regulation basketball; every operation takes the true diameter explicitly,
# this is only the shared default.
DEFAULT_BALL_DIAMETER_M = 0.24

_UNDISTORT_TOL = 1e-10
_UNDISTORT_MAX_ITER = 50
_EPS_PARALLEL = 1e-12


class GeometryError(Exception):
    """A projection or localization problem is degenerate."""


class RectificationError(GeometryError):
    """Iterative undistortion did not converge."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class DistortionCoefficients:
    """Brown polynomial lens distortion: 3 radial + 2 tangential terms."""

    radial: tuple[float, float, float] = (0.0, 0.0, 0.0)
    tangential: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        radial = tuple(float(k) for k in self.radial)
        tangential = tuple(float(p) for p in self.tangential)
        if len(radial) != 3:
            raise ValueError(f"expected 3 radial coefficients, got {len(radial)}")
        if len(tangential) != 2:
            raise ValueError(f"expected 2 tangential coefficients, got {len(tangential)}")
        object.__setattr__(self, "radial", radial)
        object.__setattr__(self, "tangential", tangential)

    @property
    def is_zero(self) -> bool:
        return all(k == 0.0 for k in self.radial) and all(p == 0.0 for p in self.tangential)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics: focal lengths x pixel density, skew, principal point."""

    fx: float
    fy: float
    skew: float = 0.0
    px: float = 0.0
    py: float = 0.0
    distortion: DistortionCoefficients = field(default_factory=DistortionCoefficients)

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @cached_property
    def matrix(self) -> np.ndarray:
        """The 3x3 camera matrix K (upper triangular, invertible)."""
        return _readonly(
            np.array(
                [
                    [self.fx, self.skew, self.px],
                    [0.0, self.fy, self.py],
                    [0.0, 0.0, 1.0],
                ]
            )
        )

    def normalized(self, u: float, v: float) -> tuple[float, float]:
        """Pixel -> normalized image coordinates (K^-1 applied, z dropped)."""
        y = (v - self.py) / self.fy
        x = (u - self.px - self.skew * y) / self.fx
        return x, y

    def pixel(self, x: float, y: float) -> tuple[float, float]:
        """Normalized image coordinates -> pixel (K applied, z dropped)."""
        return self.fx * x + self.skew * y + self.px, self.fy * y + self.py


@dataclass(frozen=True, eq=False)
class CameraPose:
    """Rigid camera pose: world->camera rotation and world-frame center."""

    rotation: np.ndarray
    center: np.ndarray

    def __post_init__(self) -> None:
        rotation = np.asarray(self.rotation, dtype=float)
        center = np.asarray(self.center, dtype=float).reshape(3)
        if rotation.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {rotation.shape}")
        if np.max(np.abs(rotation.T @ rotation - np.eye(3))) > 1e-9:
            raise ValueError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(rotation) - 1.0) > 1e-9:
            raise ValueError("rotation must have determinant +1 within 1e-9")
        object.__setattr__(self, "rotation", _readonly(rotation))
        object.__setattr__(self, "center", _readonly(center))


@dataclass(frozen=True)
class CalibratedCamera:
    """Intrinsics + pose + sensor size; the full single-view calibration."""

    intrinsics: CameraIntrinsics
    pose: CameraPose
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image size must be at least 1x1, got {self.width}x{self.height}")

    def contains_pixel(self, u: float, v: float) -> bool:
        return 0.0 <= u < self.width and 0.0 <= v < self.height


@dataclass(frozen=True)
class PixelBall:
    """Ball observation in image space: center pixel and apparent diameter."""

    bx: float
    by: float
    d: float

    def __post_init__(self) -> None:
        if not self.d > 0:
            raise ValueError(f"apparent diameter must be positive, got {self.d}")


@dataclass(frozen=True)
class WorldPoint:
    """A point in the world frame, meters, z up (z = 0 on the court)."""

    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(c) for c in (self.x, self.y, self.z)):
            raise ValueError(f"world point must be finite, got ({self.x}, {self.y}, {self.z})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @classmethod
    def from_array(cls, a: Sequence[float]) -> "WorldPoint":
        return cls(float(a[0]), float(a[1]), float(a[2]))


# ---------------------------------------------------------------------------
# Lens distortion


def distort_normalized(
    x: float, y: float, distortion: DistortionCoefficients
) -> tuple[float, float]:
    """Apply forward lens distortion to normalized image coordinates."""
    k1, k2, k3 = distortion.radial
    p1, p2 = distortion.tangential
    r2 = x * x + y * y
    f = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    xd = x * f + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
    yd = y * f + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
    return xd, yd


def _undistort_normalized(
    xd: float,
    yd: float,
    distortion: DistortionCoefficients,
    pixel: tuple[float, float],
) -> tuple[float, float]:
    """Invert the distortion polynomial by fixed-point iteration.

    Raises RectificationError naming the offending pixel when the iteration
    does not settle within the step tolerance.
    """
    k1, k2, k3 = distortion.radial
    p1, p2 = distortion.tangential
    x, y = xd, yd
    for _ in range(_UNDISTORT_MAX_ITER):
        r2 = x * x + y * y
        f = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
        dx = 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
        dy = p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
        x_new = (xd - dx) / f
        y_new = (yd - dy) / f
        step = math.hypot(x_new - x, y_new - y)
        x, y = x_new, y_new
        if step < _UNDISTORT_TOL:
            return x, y
    fx, fy = distort_normalized(x, y, distortion)
    residual = math.hypot(fx - xd, fy - yd)
    raise RectificationError(
        f"undistortion did not converge for pixel ({pixel[0]}, {pixel[1]}): "
        f"residual {residual:.3e} after {_UNDISTORT_MAX_ITER} iterations"
    )


def _rectified_normalized(
    intrinsics: CameraIntrinsics, u: float, v: float
) -> tuple[float, float]:
    """Pixel -> undistorted normalized coordinates (K^-1 after rectification)."""
    x, y = intrinsics.normalized(u, v)
    if intrinsics.distortion.is_zero:
        return x, y
    return _undistort_normalized(x, y, intrinsics.distortion, (u, v))


def rectify(intrinsics: CameraIntrinsics, pixel: Sequence[float]) -> np.ndarray:
    """Map an observed (distorted) pixel to ideal pinhole pixel coordinates.

    Returns the homogeneous pixel vector with third component exactly 1.
    With all-zero distortion the input vector is returned unchanged.
    """
    u, v = float(pixel[0]), float(pixel[1])
    if not (math.isfinite(u) and math.isfinite(v)):
        raise ValueError(f"pixel coordinates must be finite, got ({u}, {v})")
    if intrinsics.distortion.is_zero:
        return np.array([u, v, 1.0])
    x, y = _rectified_normalized(intrinsics, u, v)
    uu, vv = intrinsics.pixel(x, y)
    return np.array([uu, vv, 1.0])


# ---------------------------------------------------------------------------
# Rays and projection


def _ray_camera(intrinsics: CameraIntrinsics, u: float, v: float) -> np.ndarray:
    """Camera-frame viewing ray of a pixel, scaled to third component 1."""
    x, y = _rectified_normalized(intrinsics, u, v)
    return np.array([x, y, 1.0])


def _ray_world(camera: CalibratedCamera, u: float, v: float) -> np.ndarray:
    """World-frame direction of a pixel's viewing ray (not normalized)."""
    return camera.pose.rotation.T @ _ray_camera(camera.intrinsics, u, v)


def project_pixel(camera: CalibratedCamera, point: Sequence[float]) -> np.ndarray:
    """Project a world point to its observed (distorted) pixel.

    Raises GeometryError for points at or behind the camera plane.
    """
    p = np.asarray(point, dtype=float).reshape(3)
    pc = camera.pose.rotation @ (p - camera.pose.center)
    if pc[2] <= _EPS_PARALLEL:
        raise GeometryError(
            f"point ({p[0]:.3f}, {p[1]:.3f}, {p[2]:.3f}) is behind the camera (depth {pc[2]:.3e})"
        )
    x, y = pc[0] / pc[2], pc[1] / pc[2]
    xd, yd = distort_normalized(x, y, camera.intrinsics.distortion)
    return np.array(camera.intrinsics.pixel(xd, yd))


def ball_ray(
    camera: CalibratedCamera, ball: PixelBall
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Camera-frame rays of the ball center and its two vertical edge points.

    The edge pixels offset the center by +-d/2 along image y. All three rays
    are scaled so their third component is 1.
    """
    intr = camera.intrinsics
    b = _ray_camera(intr, ball.bx, ball.by)
    e_minus = _ray_camera(intr, ball.bx, ball.by - ball.d / 2.0)
    e_plus = _ray_camera(intr, ball.bx, ball.by + ball.d / 2.0)
    return b, e_minus, e_plus


def localize_from_diameter(
    camera: CalibratedCamera, ball: PixelBall, phi: float = DEFAULT_BALL_DIAMETER_M
) -> WorldPoint:
    """3D ball position from its pixel center and apparent diameter.

    The real diameter ``phi`` fixes the scale of the center ray through the
    y-gap of the two edge rays.
    """
    if not phi > 0:
        raise ValueError(f"real ball diameter must be positive, got {phi}")
    b, e_minus, e_plus = ball_ray(camera, ball)
    gap = e_plus[1] - e_minus[1]
    if abs(gap) < _EPS_PARALLEL:
        raise GeometryError(
            f"degenerate edge rays for ball at ({ball.bx}, {ball.by}): y-gap {gap:.3e}"
        )
    p = camera.pose.rotation.T @ (phi / gap * b) + camera.pose.center
    return WorldPoint.from_array(p)


def _edge_gap(camera: CalibratedCamera, bx: float, by: float, d: float) -> float:
    """y-gap of the rectified edge rays for a candidate pixel diameter."""
    intr = camera.intrinsics
    _, y_minus = _rectified_normalized(intr, bx, by - d / 2.0)
    _, y_plus = _rectified_normalized(intr, bx, by + d / 2.0)
    return y_plus - y_minus


def project_ball(
    camera: CalibratedCamera,
    position: WorldPoint,
    phi: float = DEFAULT_BALL_DIAMETER_M,
) -> PixelBall:
    """Inverse of localize_from_diameter: pixel center + apparent diameter.

    The diameter is the one localize_from_diameter would need to recover
    ``position`` exactly, solved along the image y direction.
    """
    if not phi > 0:
        raise ValueError(f"real ball diameter must be positive, got {phi}")
    p = position.as_array()
    pc = camera.pose.rotation @ (p - camera.pose.center)
    depth = pc[2]
    if depth <= _EPS_PARALLEL:
        raise GeometryError(
            f"ball at ({position.x:.3f}, {position.y:.3f}, {position.z:.3f}) "
            f"is behind the camera (depth {depth:.3e})"
        )
    center = project_pixel(camera, p)
    bx, by = float(center[0]), float(center[1])
    target = phi / depth
    d = phi * camera.intrinsics.fy / depth
    if camera.intrinsics.distortion.is_zero:
        return PixelBall(bx, by, float(d))
    # Distorted case: the y-gap is nonlinear in d; iterate d against the
    # rectified gap. The gap is near-proportional to d, so the multiplicative
    # update converges in a handful of steps.
    for _ in range(100):
        gap = _edge_gap(camera, bx, by, d)
        if gap <= 0:
            raise GeometryError(f"non-positive edge-ray gap for diameter candidate {d:.3f} px")
        d_new = d * target / gap
        if abs(d_new - d) < 1e-12 * max(1.0, d):
            return PixelBall(bx, by, float(d_new))
        d = d_new
    raise GeometryError(f"pixel diameter solve did not converge (last candidate {d:.6f} px)")


# ---------------------------------------------------------------------------
# Center + vertical-projection annotation geometry


@dataclass(frozen=True)
class ProjectionLocalization:
    """Result of the center+projection construction.

    ``gap_m`` is the residual distance between the returned point on the
    vertical line and the center ray (the two are generically skew);
    ``warning`` is set when the gap exceeds the caller's tolerance.
    """

    point: WorldPoint
    gap_m: float
    warning: Optional[str] = None


def intersect_ray_with_floor(camera: CalibratedCamera, pixel: Sequence[float]) -> np.ndarray:
    """Intersection of a pixel's viewing ray with the court plane z = 0."""
    u, v = float(pixel[0]), float(pixel[1])
    direction = _ray_world(camera, u, v)
    if abs(direction[2]) < _EPS_PARALLEL:
        raise GeometryError(
            f"ray of pixel ({u}, {v}) is parallel to the court plane (dz {direction[2]:.3e})"
        )
    c = camera.pose.center
    t = -c[2] / direction[2]
    hit = c + t * direction
    return np.array([hit[0], hit[1], 0.0])


def localize_from_projection(
    camera: CalibratedCamera,
    center_px: Sequence[float],
    ground_px: Sequence[float],
    gap_tolerance_m: float = 0.5,
) -> ProjectionLocalization:
    """3D ball position from its center pixel and vertical-projection pixel.

    The ground pixel pins the vertical line {(x, y, t)} through its floor
    intersection; the returned point is the one on that line closest to the
    center-pixel ray. A gap beyond ``gap_tolerance_m`` sets ``warning``.
    """
    floor = intersect_ray_with_floor(camera, ground_px)
    c = camera.pose.center
    ray = _ray_world(camera, float(center_px[0]), float(center_px[1]))
    # Closest points between the vertical line (floor + s*ez) and the center
    # ray (c + t*ray): linear 2x2 system in (s, t).
    w0 = floor - c
    b = ray[2]
    cc = float(ray @ ray)
    dd = w0[2]
    ee = float(ray @ w0)
    denom = cc - b * b  # = ray_x^2 + ray_y^2
    if denom < 1e-18:
        raise GeometryError("center ray is vertical: ball height is unobservable")
    s = (b * ee - cc * dd) / denom
    t = (ee - b * dd) / denom
    point = np.array([floor[0], floor[1], s])
    on_ray = c + t * ray
    gap = float(np.linalg.norm(point - on_ray))
    warning = None
    if gap > gap_tolerance_m:
        warning = (
            f"center ray misses the vertical projection line by {gap:.3f} m "
            f"(tolerance {gap_tolerance_m:.3f} m); annotations may be inconsistent"
        )
    return ProjectionLocalization(WorldPoint.from_array(point), gap, warning)


@dataclass(frozen=True, eq=False)
class ProjectionLocus:
    """Pixel curve of candidate vertical projections for one center pixel."""

    heights: np.ndarray
    pixels: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "heights", _readonly(self.heights))
        object.__setattr__(self, "pixels", _readonly(self.pixels))


def projection_locus(
    camera: CalibratedCamera,
    center_px: Sequence[float],
    heights: Sequence[float],
) -> ProjectionLocus:
    """Sample the curve of possible ground-projection pixels.

    For each candidate ball height the ball is placed on the center-pixel
    ray, dropped to the court plane, and projected back to pixels. The UI
    snaps the annotator's second click to this curve.
    """
    hs = np.asarray(list(heights), dtype=float)
    if hs.size == 0:
        raise GeometryError("height range for the projection locus is empty")
    c = camera.pose.center
    ray = _ray_world(camera, float(center_px[0]), float(center_px[1]))
    if abs(ray[2]) < _EPS_PARALLEL:
        raise GeometryError("center ray is parallel to the court plane")
    kept_h = []
    kept_px = []
    for h in hs:
        u = (h - c[2]) / ray[2]
        if u <= 0:  # ball would be behind the camera
            continue
        ball = c + u * ray
        try:
            px = project_pixel(camera, np.array([ball[0], ball[1], 0.0]))
        except GeometryError:
            continue
        kept_h.append(h)
        kept_px.append(px)
    if not kept_h:
        raise GeometryError("no locus sample lies in front of the camera")
    return ProjectionLocus(np.array(kept_h), np.array(kept_px))


# ---------------------------------------------------------------------------
# Fixtures and the calibration-file contract


def rotation_look_at(
    position: Sequence[float],
    target: Sequence[float],
    up: Sequence[float] = (0.0, 0.0, 1.0),
) -> np.ndarray:
    """World->camera rotation for a camera at ``position`` looking at ``target``."""
    p = np.asarray(position, dtype=float)
    t = np.asarray(target, dtype=float)
    forward = t - p
    norm = np.linalg.norm(forward)
    if norm < _EPS_PARALLEL:
        raise GeometryError("look-at target coincides with the camera position")
    forward = forward / norm
    upv = np.asarray(up, dtype=float)
    right = np.cross(forward, upv)
    norm = np.linalg.norm(right)
    if norm < _EPS_PARALLEL:
        raise GeometryError("look-at direction is parallel to the up vector")
    right = right / norm
    down = np.cross(forward, right)
    return np.stack([right, down, forward])


def camera_to_dict(camera: CalibratedCamera) -> dict:
    """Serialize to the on-disk calibration schema (shared field names)."""
    intr = camera.intrinsics
    return {
        "fx": intr.fx,
        "fy": intr.fy,
        "skew": intr.skew,
        "px": intr.px,
        "py": intr.py,
        "radial": list(intr.distortion.radial),
        "tangential": list(intr.distortion.tangential),
        "R": camera.pose.rotation.tolist(),
        "c": camera.pose.center.tolist(),
        "width": camera.width,
        "height": camera.height,
    }


def camera_from_dict(data: dict) -> CalibratedCamera:
    """Parse the on-disk calibration schema."""
    try:
        intr = CameraIntrinsics(
            fx=float(data["fx"]),
            fy=float(data["fy"]),
            skew=float(data["skew"]),
            px=float(data["px"]),
            py=float(data["py"]),
            distortion=DistortionCoefficients(
                radial=tuple(data["radial"]), tangential=tuple(data["tangential"])
            ),
        )
        pose = CameraPose(rotation=np.array(data["R"]), center=np.array(data["c"]))
        return CalibratedCamera(
            intrinsics=intr, pose=pose, width=int(data["width"]), height=int(data["height"])
        )
    except KeyError as exc:
        raise ValueError(f"calibration is missing field {exc.args[0]!r}") from exc


def load_camera(path: str | Path) -> CalibratedCamera:
    with open(path, encoding="utf-8") as fh:
        return camera_from_dict(json.load(fh))


def save_camera(camera: CalibratedCamera, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(camera_to_dict(camera), fh, indent=2, sort_keys=True)
        fh.write("\n")
