"""Evaluation harness: diameter MAE in pixels, meters, and percent, plus the
detection ROC curve and its area.

MAE[m] localizes each prediction with the diameter relation and measures the
horizontal-plane distance to the true 3D position; MAE[%] expresses that
distance relative to the camera-to-ball distance. The ROC plots the fraction
of images whose ball is found against the mean number of false candidates
per image as the confidence threshold sweeps.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .geometry import CalibratedCamera, GeometryError, PixelBall, WorldPoint, localize_from_diameter
from .estimation import Detection

__all__ = [
    "EvaluationSample",
    "RocPoint",
    "RocCurve",
    "RocImage",
    "EvaluationReport",
    "mae_px",
    "mae_m",
    "mae_pct",
    "roc",
    "evaluate_samples",
    "report_to_dict",
    "format_report_table",
    "roc_points_csv",
]


@dataclass(frozen=True)
class EvaluationSample:
    """Ground truth (pixel ball + 3D position) paired with a prediction."""

    true_ball: PixelBall
    true_position: WorldPoint
    predicted: Detection
    camera: CalibratedCamera


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    tp_rate: float
    fp_rate: float


@dataclass(frozen=True)
class RocCurve:
    points: tuple[RocPoint, ...]
    auc: float
    fp_max: float


@dataclass(frozen=True)
class RocImage:
    """Detection candidates of one image and its ground truth (None when no
    ball is visible in the image)."""

    candidates: tuple[Detection, ...]
    truth: Optional[PixelBall]


@dataclass(frozen=True)
class EvaluationReport:
    mae_px: float
    mae_m: float
    mae_pct: float
    auc: Optional[float]
    n: int
    excluded: int


def _usable(samples: Sequence[EvaluationSample]) -> list[EvaluationSample]:
    return [s for s in samples if s.predicted.diameter is not None]


def mae_px(samples: Sequence[EvaluationSample]) -> float:
    """Mean absolute diameter error in pixels."""
    usable = _usable(samples)
    if not usable:
        raise ValueError("mae_px needs at least one sample with a predicted diameter")
    return float(np.mean([abs(s.true_ball.d - s.predicted.diameter) for s in usable]))


def _horizontal_error_m(sample: EvaluationSample, phi: float, use_predicted_center: bool) -> float:
    """Horizontal-plane distance between the localized prediction and truth."""
    if use_predicted_center:
        ball = PixelBall(sample.predicted.x, sample.predicted.y, sample.predicted.diameter)
    else:
        ball = PixelBall(sample.true_ball.bx, sample.true_ball.by, sample.predicted.diameter)
    estimated = localize_from_diameter(sample.camera, ball, phi)
    return math.hypot(
        estimated.x - sample.true_position.x, estimated.y - sample.true_position.y
    )


def mae_m(
    samples: Sequence[EvaluationSample], phi: float, use_predicted_center: bool = False
) -> float:
    """Mean horizontal projection error in meters.

    By default predictions are localized with the true pixel center so the
    metric isolates diameter error; ``use_predicted_center`` switches to the
    end-to-end variant. Samples whose localization is degenerate are skipped.
    """
    errors = []
    for sample in _usable(samples):
        try:
            errors.append(_horizontal_error_m(sample, phi, use_predicted_center))
        except GeometryError:
            continue
    if not errors:
        raise ValueError("mae_m has no localizable samples")
    return float(np.mean(errors))


def mae_pct(
    samples: Sequence[EvaluationSample], phi: float, use_predicted_center: bool = False
) -> float:
    """Mean horizontal projection error relative to camera distance, percent."""
    ratios = []
    for sample in _usable(samples):
        try:
            err = _horizontal_error_m(sample, phi, use_predicted_center)
        except GeometryError:
            continue
        dist = float(
            np.linalg.norm(sample.true_position.as_array() - sample.camera.pose.center)
        )
        ratios.append(err / dist * 100.0)
    if not ratios:
        raise ValueError("mae_pct has no localizable samples")
    return float(np.mean(ratios))


# ---------------------------------------------------------------------------
# ROC / AuC


def _match_radius(truth: PixelBall, match_radius: Optional[float]) -> float:
    # Default: within the true ball radius of the true center.
    return truth.d / 2.0 if match_radius is None else match_radius


def roc(
    images: Sequence[RocImage],
    match_radius: Optional[float] = None,
    fp_max: Optional[float] = None,
) -> RocCurve:
    """ROC over the sorted set of candidate confidences.

    At each threshold a candidate is kept when its confidence is at least
    the threshold; one kept candidate within the match radius of the truth
    counts the image as detected, every other kept candidate is a false
    positive. tp_rate is detected images over all images; fp_rate is false
    positives per image. The area is the trapezoid integral of tp over
    fp in [0, fp_max], with the curve extended at its last tp, normalized
    by fp_max (defaulting to the largest per-image candidate count).
    """
    if not images:
        raise ValueError("roc needs at least one image")
    n_images = len(images)
    confidences = sorted(
        {c.confidence for img in images for c in img.candidates}, reverse=True
    )
    if fp_max is None:
        fp_max = float(max(len(img.candidates) for img in images))
    points = [RocPoint(threshold=math.inf, tp_rate=0.0, fp_rate=0.0)]
    for threshold in confidences:
        tp_images = 0
        false_candidates = 0
        for img in images:
            kept = [c for c in img.candidates if c.confidence >= threshold]
            matched = False
            if img.truth is not None:
                radius = _match_radius(img.truth, match_radius)
                matched = any(
                    math.hypot(c.x - img.truth.bx, c.y - img.truth.by) <= radius for c in kept
                )
            if matched:
                tp_images += 1
            false_candidates += len(kept) - (1 if matched else 0)
        points.append(
            RocPoint(
                threshold=threshold,
                tp_rate=tp_images / n_images,
                fp_rate=false_candidates / n_images,
            )
        )
    if fp_max <= 0:
        # No candidates anywhere: degenerate single-point curve.
        return RocCurve(points=tuple(points[:1]), auc=0.0, fp_max=0.0)
    area = 0.0
    for prev, cur in zip(points, points[1:]):
        area += (cur.fp_rate - prev.fp_rate) * (cur.tp_rate + prev.tp_rate) / 2.0
    area += (fp_max - points[-1].fp_rate) * points[-1].tp_rate
    return RocCurve(points=tuple(points), auc=area / fp_max, fp_max=fp_max)


# ---------------------------------------------------------------------------
# Aggregated report


def evaluate_samples(
    samples: Sequence[EvaluationSample],
    phi: float,
    roc_images: Optional[Sequence[RocImage]] = None,
    use_predicted_center: bool = False,
    match_radius: Optional[float] = None,
) -> EvaluationReport:
    """All metrics over one dataset; unlocalizable samples are excluded and
    counted."""
    if not samples:
        raise ValueError("evaluation needs at least one sample")
    px_errors = []
    m_errors = []
    pct_errors = []
    excluded = 0
    for sample in samples:
        if sample.predicted.diameter is None:
            excluded += 1
            continue
        try:
            err_m = _horizontal_error_m(sample, phi, use_predicted_center)
        except GeometryError:
            excluded += 1
            continue
        px_errors.append(abs(sample.true_ball.d - sample.predicted.diameter))
        m_errors.append(err_m)
        dist = float(
            np.linalg.norm(sample.true_position.as_array() - sample.camera.pose.center)
        )
        pct_errors.append(err_m / dist * 100.0)
    if not px_errors:
        raise ValueError(f"all {len(samples)} samples were excluded; nothing to evaluate")
    auc = None
    if roc_images:
        auc = roc(roc_images, match_radius=match_radius).auc
    return EvaluationReport(
        mae_px=float(np.mean(px_errors)),
        mae_m=float(np.mean(m_errors)),
        mae_pct=float(np.mean(pct_errors)),
        auc=auc,
        n=len(px_errors),
        excluded=excluded,
    )


def report_to_dict(report: EvaluationReport) -> dict:
    return {
        "mae_px": report.mae_px,
        "mae_m": report.mae_m,
        "mae_pct": report.mae_pct,
        "auc": report.auc,
        "n": report.n,
        "excluded": report.excluded,
    }


def format_report_table(report: EvaluationReport) -> str:
    rows = [
        ("MAE [px]", f"{report.mae_px:.3f}"),
        ("MAE [m]", f"{report.mae_m:.3f}"),
        ("MAE [%]", f"{report.mae_pct:.2f}"),
        ("AuC", "-" if report.auc is None else f"{report.auc:.4f}"),
        ("samples", str(report.n)),
        ("excluded", str(report.excluded)),
    ]
    width = max(len(label) for label, _ in rows)
    return "\n".join(f"{label:<{width}}  {value}" for label, value in rows)


def roc_points_csv(curve: RocCurve) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["threshold", "tp_rate", "fp_rate"])
    for point in curve.points:
        writer.writerow([point.threshold, point.tp_rate, point.fp_rate])
    return buf.getvalue()
