"""Classical diameter estimation on detector heatmaps.

Pipeline: morphological opening with a disc filter, gradient-magnitude edge
detection with hysteresis thresholding, then a bounded Hough circle
transform. Candidate diameters are constrained by the physical extent of
the court volume seen from the camera.

Works on square heatmap patches (64x64 by default) cut around a detection
candidate; patch coordinates carry the offset of the patch in the source
image so estimates can be reported in the source frame.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image
from scipy import ndimage

from .geometry import CalibratedCamera

__all__ = [
    "DEFAULT_PATCH_SIDE",
    "HeatmapPatch",
    "HoughParams",
    "CircleEstimate",
    "CourtBounds",
    "BaselineResult",
    "morphological_opening",
    "gradient_magnitude",
    "hysteresis_edges",
    "hough_circle",
    "diameter_bounds",
    "baseline_estimate",
    "render_disc",
    "load_heatmap",
    "save_heatmap",
    "RAW_MAGIC",
]

DEFAULT_PATCH_SIDE = 64

# Values tuned on a validation set for segmentation-detector heatmap
# patches; all overridable.
DEFAULT_RHO = 37.0
DEFAULT_TAU_LOW = 10.0
DEFAULT_TAU_HIGH = 20.0
DEFAULT_D_STEP = 0.5


@dataclass(frozen=True, eq=False)
class HeatmapPatch:
    """Square intensity patch plus its pixel offset in the source image."""

    values: np.ndarray
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValueError(f"patch must be square, got shape {values.shape}")
        if values.size and (values.min() < 0 or values.max() > 255):
            raise ValueError(
                f"patch intensities must lie in [0, 255], got "
                f"[{values.min():.3f}, {values.max():.3f}]"
            )
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def side(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class HoughParams:
    """Knobs of the opening + hysteresis + Hough pipeline."""

    rho: float = DEFAULT_RHO
    tau_low: float = DEFAULT_TAU_LOW
    tau_high: float = DEFAULT_TAU_HIGH
    d_min: float = 10.0
    d_max: float = 40.0
    d_step: float = DEFAULT_D_STEP

    def __post_init__(self) -> None:
        if not (0 < self.tau_low < self.tau_high):
            raise ValueError(
                f"need 0 < tau_low < tau_high, got ({self.tau_low}, {self.tau_high})"
            )
        if not (0 < self.d_min < self.d_max):
            raise ValueError(f"need 0 < d_min < d_max, got ({self.d_min}, {self.d_max})")
        if not self.d_step > 0:
            raise ValueError(f"d_step must be positive, got {self.d_step}")
        if not self.rho >= 1:
            raise ValueError(f"opening diameter must be >= 1 px, got {self.rho}")


@dataclass(frozen=True)
class CircleEstimate:
    """Hough peak: center, diameter, and normalized vote fraction."""

    center: tuple[float, float]
    diameter: float
    score: float


@dataclass(frozen=True)
class CourtBounds:
    """Axis-aligned volume the ball can occupy, world frame, meters.

    The court rectangle spans [0, length] x [0, width] on the floor and is
    expanded by ``margin`` on all horizontal sides; ball heights range over
    [min_height, max_height].
    """

    length: float = 28.0
    width: float = 15.0
    margin: float = 2.0
    min_height: float = 0.0
    max_height: float = 5.0

    def box(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([-self.margin, -self.margin, self.min_height])
        hi = np.array([self.length + self.margin, self.width + self.margin, self.max_height])
        if np.any(hi < lo):
            raise ValueError("court volume has negative extent")
        return lo, hi


@dataclass(frozen=True)
class BaselineResult:
    """Baseline output: the circle estimate (None when no edges survive)
    and the parameters that were actually used."""

    estimate: Optional[CircleEstimate]
    params: HoughParams


# ---------------------------------------------------------------------------
# Pipeline stages


def _disc_footprint(rho: float) -> np.ndarray:
    side = int(math.ceil(rho))
    if side % 2 == 0:
        side += 1
    c = (side - 1) / 2.0
    yy, xx = np.mgrid[0:side, 0:side]
    return (yy - c) ** 2 + (xx - c) ** 2 <= (rho / 2.0) ** 2


def morphological_opening(patch: HeatmapPatch, rho: float) -> HeatmapPatch:
    """Grayscale opening with a disc structuring element of diameter rho.

    Border pixels are replicated so the patch edge does not erode away.
    """
    if rho < 1:
        raise ValueError(f"opening diameter must be >= 1 px, got {rho}")
    footprint = _disc_footprint(rho)
    eroded = ndimage.grey_erosion(patch.values, footprint=footprint, mode="nearest")
    opened = ndimage.grey_dilation(eroded, footprint=footprint, mode="nearest")
    return HeatmapPatch(values=opened, origin=patch.origin)


def gradient_magnitude(values: np.ndarray) -> np.ndarray:
    """Central-difference gradient magnitude with replicated borders."""
    padded = np.pad(values, 1, mode="edge")
    gx = (padded[1:-1, 2:] - padded[1:-1, :-2]) / 2.0
    gy = (padded[2:, 1:-1] - padded[:-2, 1:-1]) / 2.0
    return np.hypot(gx, gy)


def hysteresis_edges(patch: HeatmapPatch, tau_low: float, tau_high: float) -> np.ndarray:
    """Two-threshold edge map on the gradient magnitude.

    Pixels at or above tau_high seed edges; pixels at or above tau_low
    survive only when 8-connected to a seed.
    """
    if not (0 < tau_low < tau_high):
        raise ValueError(f"need 0 < tau_low < tau_high, got ({tau_low}, {tau_high})")
    mag = gradient_magnitude(patch.values)
    weak = mag >= tau_low
    strong = mag >= tau_high
    if not strong.any():
        return np.zeros_like(weak)
    labels, _ = ndimage.label(weak, structure=np.ones((3, 3), dtype=int))
    seed_labels = np.unique(labels[strong])
    seed_labels = seed_labels[seed_labels > 0]
    return np.isin(labels, seed_labels)


@lru_cache(maxsize=512)
def _circle_offsets(diameter: float) -> np.ndarray:
    """Integer cells of the circle of a given pixel diameter.

    A cell belongs to the circle when its center lies within half a pixel of
    the ideal radius; the same criterion defines the "ideal circumference"
    used to normalize vote counts.
    """
    r = diameter / 2.0
    reach = int(math.ceil(r + 0.5))
    yy, xx = np.mgrid[-reach : reach + 1, -reach : reach + 1]
    dist = np.hypot(yy, xx)
    mask = np.abs(dist - r) <= 0.5
    offs = np.stack([yy[mask], xx[mask]], axis=1)
    offs.flags.writeable = False
    return offs


def hough_circle(edges: np.ndarray, params: HoughParams) -> Optional[CircleEstimate]:
    """Full-circle Hough vote over (center, diameter).

    Centers are resolved at 1 px, diameters at params.d_step. The returned
    score is the peak vote count over the ideal circumference cell count,
    clamped to [0, 1]. Ties are broken toward the smaller diameter, then
    scanline (row-major) center order. Returns None when the edge map is
    empty, which is distinct from a valid low-score estimate.
    """
    edges = np.asarray(edges, dtype=bool)
    ys, xs = np.nonzero(edges)
    if ys.size == 0:
        return None
    h, w = edges.shape
    n_diam = int(math.floor((params.d_max - params.d_min) / params.d_step + 1e-9)) + 1
    best_ratio = -1.0
    best = None
    for k in range(n_diam):
        d = params.d_min + k * params.d_step
        offs = _circle_offsets(round(d, 9))
        cy = ys[:, None] - offs[None, :, 0]
        cx = xs[:, None] - offs[None, :, 1]
        valid = (cy >= 0) & (cy < h) & (cx >= 0) & (cx < w)
        flat = cy[valid] * w + cx[valid]
        acc = np.bincount(flat, minlength=h * w)
        peak = int(np.argmax(acc))
        ratio = float(acc[peak]) / float(len(offs))
        if ratio > best_ratio:
            best_ratio = ratio
            best = (d, peak // w, peak % w)
    assert best is not None
    d, cy, cx = best
    return CircleEstimate(
        center=(float(cx), float(cy)), diameter=float(d), score=min(1.0, best_ratio)
    )


def diameter_bounds(
    camera: CalibratedCamera,
    scene: CourtBounds,
    phi: float,
    patch_side: int = DEFAULT_PATCH_SIDE,
) -> tuple[float, float]:
    """Pixel-diameter interval implied by the court volume.

    The smallest apparent diameter comes from the farthest corner of the
    volume, the largest from the nearest point. A camera inside the volume
    has no positive nearest distance; the upper bound is then clamped to
    the patch side.
    """
    lo, hi = scene.box()
    c = camera.pose.center
    nearest = np.clip(c, lo, hi)
    dist_min = float(np.linalg.norm(c - nearest))
    corners = np.array(
        [[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])]
    )
    dist_max = float(np.max(np.linalg.norm(corners - c, axis=1)))
    fy = camera.intrinsics.fy
    d_min = phi * fy / dist_max if dist_max > 0 else float(patch_side)
    d_max = phi * fy / dist_min if dist_min > 0 else float(patch_side)
    return d_min, d_max


def baseline_estimate(
    patch: HeatmapPatch,
    camera: CalibratedCamera,
    scene: CourtBounds,
    phi: float,
    rho: float = DEFAULT_RHO,
    tau_low: float = DEFAULT_TAU_LOW,
    tau_high: float = DEFAULT_TAU_HIGH,
    d_step: float = DEFAULT_D_STEP,
) -> BaselineResult:
    """Opening -> hysteresis edges -> bounded Hough circle on one patch.

    Diameter bounds come from the court volume; the estimate center is
    reported in the source-image frame via the patch origin.
    """
    d_min, d_max = diameter_bounds(camera, scene, phi, patch_side=patch.side)
    params = HoughParams(
        rho=rho, tau_low=tau_low, tau_high=tau_high, d_min=d_min, d_max=d_max, d_step=d_step
    )
    opened = morphological_opening(patch, params.rho)
    edges = hysteresis_edges(opened, params.tau_low, params.tau_high)
    estimate = hough_circle(edges, params)
    if estimate is not None:
        estimate = CircleEstimate(
            center=(
                estimate.center[0] + patch.origin[0],
                estimate.center[1] + patch.origin[1],
            ),
            diameter=estimate.diameter,
            score=estimate.score,
        )
    return BaselineResult(estimate=estimate, params=params)


# ---------------------------------------------------------------------------
# Heatmap rendering and file formats


def render_disc(
    side_or_shape,
    center: tuple[float, float],
    diameter: float,
    value: float = 255.0,
) -> np.ndarray:
    """Anti-aliased solid disc on a black background.

    Pixel intensity approximates the disc's coverage of the pixel cell, so
    sub-pixel centers and diameters render smoothly.
    """
    if np.isscalar(side_or_shape):
        h = w = int(side_or_shape)
    else:
        h, w = side_or_shape
    yy, xx = np.mgrid[0:h, 0:w]
    dist = np.hypot(yy - center[1], xx - center[0])
    coverage = np.clip(diameter / 2.0 + 0.5 - dist, 0.0, 1.0)
    return coverage * value


RAW_MAGIC = b"BALLHMP1"


def save_heatmap(values: np.ndarray, path: str | Path) -> None:
    """Write an intensity grid as 8-bit grayscale PNG or raw (by extension).

    The raw format is a 16-byte header (8-byte magic, uint32 LE width and
    height) followed by row-major uint8 samples.
    """
    path = Path(path)
    data = np.asarray(values)
    if data.dtype != np.uint8:
        data = np.clip(np.round(data), 0, 255).astype(np.uint8)
    if path.suffix.lower() == ".png":
        Image.fromarray(data, mode="L").save(path, format="PNG")
        return
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(RAW_MAGIC)
        fh.write(struct.pack("<II", w, h))
        fh.write(data.tobytes())


def load_heatmap(path: str | Path) -> np.ndarray:
    """Read a heatmap written by save_heatmap; returns a float array."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        with Image.open(path) as img:
            return np.asarray(img.convert("L"), dtype=float)
    raw = path.read_bytes()
    if len(raw) < 16 or raw[:8] != RAW_MAGIC:
        raise ValueError(f"{path}: not a raw heatmap (bad magic or truncated header)")
    w, h = struct.unpack("<II", raw[8:16])
    body = raw[16:]
    if len(body) != w * h:
        raise ValueError(f"{path}: expected {w * h} samples, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).astype(float).reshape(h, w)
