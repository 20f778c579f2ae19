"""Monocular 3D ball localization toolkit.

Localizes a ball in world coordinates from a single calibrated image given
its pixel position and apparent diameter, plus the supporting pipeline:
a Hough-circle diameter baseline, ballistic-trajectory annotation denoising,
an evaluation harness, and an HTTP annotation service.
"""

from .geometry import (
    CalibratedCamera,
    CameraIntrinsics,
    CameraPose,
    DistortionCoefficients,
    GeometryError,
    PixelBall,
    WorldPoint,
    localize_from_diameter,
    localize_from_projection,
    project_ball,
    projection_locus,
    rectify,
)
from .ballistic import BallisticTrajectory, FitResult, TimedObservation, fit
from .estimation import Detection, LossParams
from .metrics import EvaluationReport, EvaluationSample, RocPoint, roc

__version__ = "0.1.0"

__all__ = [
    "CalibratedCamera",
    "CameraIntrinsics",
    "CameraPose",
    "DistortionCoefficients",
    "GeometryError",
    "PixelBall",
    "WorldPoint",
    "localize_from_diameter",
    "localize_from_projection",
    "project_ball",
    "projection_locus",
    "rectify",
    "BallisticTrajectory",
    "FitResult",
    "TimedObservation",
    "fit",
    "Detection",
    "LossParams",
    "EvaluationReport",
    "EvaluationSample",
    "RocPoint",
    "roc",
    "__version__",
]
