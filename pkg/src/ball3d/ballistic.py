"""Free-fall motion model, trajectory fitting, and annotation denoising.

The motion model is a constant-gravity parabola: position(t) = p0 + v0*t -
(0, 0, g)*t^2/2. Fitting is exact linear least squares: subtracting the
known gravity term from the z observations leaves a model linear in
(p0, v0), solved by orthogonal decomposition, never normal equations.

Denoising a hand-annotated trajectory means fitting the model to the noisy
3D annotations and reading back the fitted positions at the annotation
timestamps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .geometry import (
    CalibratedCamera,
    PixelBall,
    WorldPoint,
    localize_from_diameter,
    localize_from_projection,
    project_ball,
    project_pixel,
)

__all__ = [
    "GRAVITY",
    "FitError",
    "BallisticTrajectory",
    "TimedObservation",
    "FitResult",
    "evaluate",
    "positions",
    "fit",
    "flag_outliers",
    "denoise_sequence",
    "timestamps_from_frames",
    "ComparisonScene",
    "MethodStats",
    "AnnotationComparison",
    "compare_annotation_methods",
    "default_comparison_scene",
    "observations_to_dict",
    "observations_from_dict",
    "fit_result_to_dict",
]

GRAVITY = 9.81


class FitError(ValueError):
    """Trajectory fitting is impossible on the given observations."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class BallisticTrajectory:
    """Free-fall parameters: initial position, initial velocity, gravity."""

    p0: np.ndarray
    v0: np.ndarray
    g: float = GRAVITY

    def __post_init__(self) -> None:
        if not self.g > 0:
            raise ValueError(f"gravity must be positive, got {self.g}")
        object.__setattr__(self, "p0", _readonly(np.reshape(self.p0, 3)))
        object.__setattr__(self, "v0", _readonly(np.reshape(self.v0, 3)))


@dataclass(frozen=True)
class TimedObservation:
    """One noisy 3D annotation with its timestamp."""

    t: float
    position: WorldPoint

    def __post_init__(self) -> None:
        if not np.isfinite(self.t):
            raise ValueError(f"timestamp must be finite, got {self.t}")


@dataclass(frozen=True, eq=False)
class FitResult:
    """Least-squares fit output: parameters, per-observation residuals, RMS,
    and the denoised (fitted) positions at the input timestamps."""

    trajectory: BallisticTrajectory
    residuals: np.ndarray
    rms: float
    denoised: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "residuals", _readonly(self.residuals))
        object.__setattr__(self, "denoised", _readonly(self.denoised))


def evaluate(trajectory: BallisticTrajectory, t: float) -> WorldPoint:
    """Position of the model at time t."""
    if not np.isfinite(t):
        raise ValueError(f"time must be finite, got {t}")
    p = trajectory.p0 + trajectory.v0 * t
    return WorldPoint(p[0], p[1], p[2] - trajectory.g * t * t / 2.0)


def positions(trajectory: BallisticTrajectory, ts: Sequence[float]) -> np.ndarray:
    """Vectorized evaluate: (n, 3) positions for an array of times."""
    ts = np.asarray(ts, dtype=float)
    out = trajectory.p0[None, :] + trajectory.v0[None, :] * ts[:, None]
    out[:, 2] -= trajectory.g * ts * ts / 2.0
    return out


def fit(observations: Sequence[TimedObservation], g: float = GRAVITY) -> FitResult:
    """Exact least-squares fit of (p0, v0) to timed 3D annotations.

    Requires at least two observations with two distinct timestamps;
    otherwise the linear system is rank deficient.
    """
    obs = list(observations)
    if len(obs) < 2:
        raise FitError(f"need at least 2 observations, got {len(obs)}")
    ts = np.array([o.t for o in obs])
    if np.unique(ts).size < 2:
        raise FitError("need at least 2 distinct timestamps (rank-deficient fit)")
    pts = np.stack([o.position.as_array() for o in obs])
    # Remove the known gravity term; what is left is linear in (p0, v0).
    rhs = pts.copy()
    rhs[:, 2] += g * ts * ts / 2.0
    design = np.stack([np.ones_like(ts), ts], axis=1)
    params, *_ = np.linalg.lstsq(design, rhs, rcond=None)
    trajectory = BallisticTrajectory(p0=params[0], v0=params[1], g=g)
    denoised = positions(trajectory, ts)
    residuals = denoised - pts
    rms = float(np.sqrt(np.mean(np.sum(residuals**2, axis=1))))
    return FitResult(trajectory=trajectory, residuals=residuals, rms=rms, denoised=denoised)


def flag_outliers(result: FitResult, factor: float = 3.0) -> np.ndarray:
    """Boolean mask of observations whose residual norm exceeds factor*RMS.

    Informational only: flagged annotations are surfaced for manual review,
    never rejected automatically.
    """
    norms = np.linalg.norm(result.residuals, axis=1)
    return norms > factor * result.rms


def denoise_sequence(
    annotations: Sequence[tuple[str, TimedObservation]], g: float = GRAVITY
) -> list[tuple[str, WorldPoint]]:
    """Fit the motion model and return the fitted position per image."""
    result = fit([obs for _, obs in annotations], g=g)
    return [
        (image_id, WorldPoint.from_array(p))
        for (image_id, _), p in zip(annotations, result.denoised)
    ]


def timestamps_from_frames(frames: Sequence[int], fps: float) -> list[float]:
    """Timestamps in seconds for frame-indexed sources without capture times."""
    if not fps > 0:
        raise ValueError(f"fps must be positive, got {fps}")
    return [frame / fps for frame in frames]


# ---------------------------------------------------------------------------
# Annotation-approach comparison (Monte Carlo)


@dataclass(frozen=True)
class ComparisonScene:
    """Synthetic scene for the annotation comparison: one calibrated camera
    plus ballistic trajectories sampled at fixed times."""

    camera: CalibratedCamera
    trajectories: tuple[BallisticTrajectory, ...]
    sample_times: tuple[float, ...]
    phi: float = 0.24

    def sample_positions(self) -> list[WorldPoint]:
        """All ball positions in the scene; every one must be in frame."""
        if not self.trajectories:
            raise ValueError("comparison scene contains no trajectories")
        out = []
        for traj in self.trajectories:
            for t in self.sample_times:
                p = evaluate(traj, t)
                px = project_pixel(self.camera, p.as_array())
                if not self.camera.contains_pixel(px[0], px[1]):
                    raise ValueError(
                        f"scene sample at t={t} projects outside the frame: "
                        f"({px[0]:.1f}, {px[1]:.1f})"
                    )
                out.append(p)
        return out


@dataclass(frozen=True, eq=False)
class MethodStats:
    """Error distribution of one annotation method, in diameter-equivalent
    pixels, plus the signed depth bias of the 3D estimates."""

    errors_px: np.ndarray
    mean_px: float
    std_px: float
    hist_counts: np.ndarray
    hist_edges: np.ndarray
    mean_depth_error_m: float


@dataclass(frozen=True)
class AnnotationComparison:
    diameter: MethodStats
    projection: MethodStats
    click_noise_px: float
    draws: int


def _method_stats(errors: list[float], depth_errors: list[float], bins: int) -> MethodStats:
    errs = np.asarray(errors)
    counts, edges = np.histogram(errs, bins=bins)
    return MethodStats(
        errors_px=errs,
        mean_px=float(np.mean(errs)),
        std_px=float(np.std(errs)),
        hist_counts=counts,
        hist_edges=edges,
        mean_depth_error_m=float(np.mean(depth_errors)),
    )


def compare_annotation_methods(
    scene: ComparisonScene,
    click_noise_px: float,
    seeds: int,
    base_seed: int = 0,
    diameter_bias_px: float = 0.0,
    hist_bins: int = 50,
) -> AnnotationComparison:
    """Monte Carlo comparison of the two single-image annotation approaches.

    For each scene position and each noise draw, both methods are simulated:

    - diameter method: the annotator clicks the ball center and the two
      vertically opposed edge points; the diameter is the distance between
      the edge clicks. Localization uses the diameter relation.
    - projection method: the annotator clicks the ball center and its
      vertical projection on the court; localization intersects the
      projection ray with the court and lifts along the vertical line.

    Every click is perturbed with isotropic Gaussian noise of scale
    ``click_noise_px``. Each resulting 3D estimate is converted back to the
    pixel diameter it implies, so both methods are scored on the same
    diameter-equivalent axis.
    """
    samples = scene.sample_positions()
    camera, phi = scene.camera, scene.phi
    rng = np.random.default_rng(base_seed)
    errs_d: list[float] = []
    errs_p: list[float] = []
    depth_d: list[float] = []
    depth_p: list[float] = []
    c0 = camera.pose.center
    for truth in samples:
        true_ball = project_ball(camera, truth, phi)
        ground_truth_px = project_pixel(
            camera, np.array([truth.x, truth.y, 0.0])
        )
        true_depth = float(np.linalg.norm(truth.as_array() - c0))
        true_d = true_ball.d
        for _ in range(seeds):
            noise = rng.normal(scale=click_noise_px, size=8) if click_noise_px > 0 else np.zeros(8)
            # Diameter method: center click + two edge clicks.
            center_d = (true_ball.bx + noise[0], true_ball.by + noise[1])
            top = np.array([true_ball.bx + noise[2], true_ball.by - true_d / 2 + noise[3]])
            bottom = np.array([true_ball.bx + noise[4], true_ball.by + true_d / 2 + noise[5]])
            d_hat = float(np.linalg.norm(bottom - top)) + diameter_bias_px
            est_d = localize_from_diameter(camera, PixelBall(center_d[0], center_d[1], d_hat), phi)
            errs_d.append(abs(project_ball(camera, est_d, phi).d - true_d))
            depth_d.append(float(np.linalg.norm(est_d.as_array() - c0)) - true_depth)
            # Projection method: center click + ground-projection click.
            center_p = (true_ball.bx + noise[0], true_ball.by + noise[1])
            ground = (ground_truth_px[0] + noise[6], ground_truth_px[1] + noise[7])
            est_p = localize_from_projection(camera, center_p, ground).point
            errs_p.append(abs(project_ball(camera, est_p, phi).d - true_d))
            depth_p.append(float(np.linalg.norm(est_p.as_array() - c0)) - true_depth)
    return AnnotationComparison(
        diameter=_method_stats(errs_d, depth_d, hist_bins),
        projection=_method_stats(errs_p, depth_p, hist_bins),
        click_noise_px=click_noise_px,
        draws=seeds,
    )


def default_comparison_scene(phi: float = 0.24) -> ComparisonScene:
    """Basketball-scale fixture: elevated side camera, three arcing passes."""
    from .geometry import CameraIntrinsics, CameraPose, CalibratedCamera, rotation_look_at

    position = np.array([14.0, -12.0, 6.0])
    rotation = rotation_look_at(position, target=(14.0, 7.5, 1.8))
    camera = CalibratedCamera(
        intrinsics=CameraIntrinsics(fx=1700.0, fy=1700.0, px=960.0, py=540.0),
        pose=CameraPose(rotation=rotation, center=position),
        width=1920,
        height=1080,
    )
    trajectories = (
        BallisticTrajectory(p0=(8.0, 5.0, 2.0), v0=(3.0, 1.0, 4.5)),
        BallisticTrajectory(p0=(14.0, 9.0, 1.8), v0=(-2.5, -1.5, 5.0)),
        BallisticTrajectory(p0=(19.0, 6.0, 2.2), v0=(-3.0, 2.0, 4.0)),
    )
    sample_times = tuple(np.linspace(0.0, 0.7, 8))
    return ComparisonScene(
        camera=camera, trajectories=trajectories, sample_times=sample_times, phi=phi
    )


# ---------------------------------------------------------------------------
# Trajectory file format


def observations_to_dict(
    annotations: Iterable[tuple[str, TimedObservation]], g: float = GRAVITY
) -> dict:
    return {
        "g": g,
        "observations": [
            {
                "image_id": image_id,
                "t": obs.t,
                "x": obs.position.x,
                "y": obs.position.y,
                "z": obs.position.z,
            }
            for image_id, obs in annotations
        ],
    }


def observations_from_dict(data: dict) -> tuple[list[tuple[str, TimedObservation]], float]:
    g = float(data.get("g", GRAVITY))
    annotations = [
        (
            str(entry["image_id"]),
            TimedObservation(
                t=float(entry["t"]),
                position=WorldPoint(float(entry["x"]), float(entry["y"]), float(entry["z"])),
            ),
        )
        for entry in data["observations"]
    ]
    return annotations, g


def fit_result_to_dict(result: FitResult, image_ids: Optional[Sequence[str]] = None) -> dict:
    out = {
        "p0": result.trajectory.p0.tolist(),
        "v0": result.trajectory.v0.tolist(),
        "g": result.trajectory.g,
        "rms": result.rms,
        "residuals": result.residuals.tolist(),
        "denoised": result.denoised.tolist(),
        "outliers": flag_outliers(result).tolist(),
    }
    if image_ids is not None:
        out["image_ids"] = list(image_ids)
    return out
