"""Diameter-estimator seam, training losses as pure math, and candidate
selection.

No network lives here: the estimator registry is the seam where a learned
regressor would plug in. Built-ins are the classical Hough baseline, an
oracle that reads ground truth (to isolate diameter accuracy from detection
accuracy), and a constant stub for tests.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional, Protocol, Sequence

import numpy as np

from .geometry import CalibratedCamera, PixelBall
from .imageproc import (
    DEFAULT_PATCH_SIDE,
    CourtBounds,
    HeatmapPatch,
    baseline_estimate,
)

__all__ = [
    "Detection",
    "LossParams",
    "bce_loss",
    "huber_loss",
    "combined_loss",
    "select_candidate",
    "extract_patch",
    "peak_candidates",
    "DiameterEstimator",
    "ConstantEstimator",
    "OracleEstimator",
    "HoughBaselineEstimator",
    "build_estimator",
    "ESTIMATOR_NAMES",
    "estimate_diameter",
    "load_detections",
    "save_detections",
]

_PROB_EPS = 1e-7


@dataclass(frozen=True)
class Detection:
    """One ball candidate: pixel center, confidence, optional diameter."""

    x: float
    y: float
    confidence: float
    diameter: Optional[float] = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")
        if self.diameter is not None and not self.diameter > 0:
            raise ValueError(f"diameter must be positive when present, got {self.diameter}")


@dataclass(frozen=True)
class LossParams:
    """Huber threshold and classification/regression mixing weight."""

    delta: float = 1.0
    alpha: float = 0.5

    def __post_init__(self) -> None:
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")


def bce_loss(c: int, c_hat: float) -> float:
    """Binary cross entropy with the prediction clamped away from {0, 1}."""
    if c not in (0, 1):
        raise ValueError(f"target class must be 0 or 1, got {c}")
    p = min(max(c_hat, _PROB_EPS), 1.0 - _PROB_EPS)
    return -(c * math.log(p) + (1 - c) * math.log(1.0 - p))


def huber_loss(d: float, d_hat: float, delta: float) -> float:
    """Quadratic near zero, linear beyond delta; continuous at the switch."""
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    err = abs(d - d_hat)
    if err <= delta:
        return 0.5 * err * err
    return delta * (err - 0.5 * delta)


def combined_loss(
    c: int,
    c_hat: float,
    d: Optional[float],
    d_hat: Optional[float],
    params: LossParams,
) -> float:
    """Weighted sum of the regression and classification losses.

    For non-ball samples (c = 0) the diameter term is dropped entirely, not
    zero-filled, so the result cannot depend on d or d_hat.
    """
    classification = (1.0 - params.alpha) * bce_loss(c, c_hat)
    if c == 0:
        return classification
    if d is None or d_hat is None:
        raise ValueError("ball sample (c=1) requires both target and predicted diameter")
    return params.alpha * huber_loss(d, d_hat, params.delta) + classification


def select_candidate(candidates: Sequence[Detection]) -> tuple[int, Detection]:
    """Pick the candidate with maximum confidence; ties go to the lowest index."""
    if not candidates:
        raise ValueError("cannot select from an empty candidate list")
    best = 0
    for i, cand in enumerate(candidates):
        if cand.confidence > candidates[best].confidence:
            best = i
    return best, candidates[best]


def _round_half_away(x: float) -> int:
    return int(math.floor(x + 0.5)) if x >= 0 else int(math.ceil(x - 0.5))


def extract_patch(
    image: np.ndarray, center: tuple[float, float], side: int = DEFAULT_PATCH_SIDE
) -> HeatmapPatch:
    """side x side crop centered on the rounded center pixel.

    Regions outside the image are zero-filled; the patch records its origin
    offset in the source image. Center rounding is half-away-from-zero.
    """
    if side < 1:
        raise ValueError(f"patch side must be >= 1, got {side}")
    image = np.asarray(image, dtype=float)
    cx = _round_half_away(float(center[0]))
    cy = _round_half_away(float(center[1]))
    x0 = cx - side // 2
    y0 = cy - side // 2
    out = np.zeros((side, side))
    h, w = image.shape
    sy0, sy1 = max(y0, 0), min(y0 + side, h)
    sx0, sx1 = max(x0, 0), min(x0 + side, w)
    if sy1 > sy0 and sx1 > sx0:
        out[sy0 - y0 : sy1 - y0, sx0 - x0 : sx1 - x0] = image[sy0:sy1, sx0:sx1]
    return HeatmapPatch(values=out, origin=(float(x0), float(y0)))


def peak_candidates(
    heatmap: np.ndarray, k: int = 1, min_distance: float = 32.0
) -> list[Detection]:
    """Top-k peaks of a heatmap as detection candidates.

    Greedy selection by intensity with a minimum separation; confidence is
    the peak intensity on a [0, 1] scale. Stand-in for an external
    detector's candidate list.
    """
    values = np.asarray(heatmap, dtype=float)
    h, w = values.shape
    order = np.argsort(-values, axis=None, kind="stable")
    picked: list[Detection] = []
    for flat in order:
        if len(picked) >= k:
            break
        y, x = divmod(int(flat), w)
        if values[y, x] <= 0:
            break
        if any(math.hypot(x - p.x, y - p.y) < min_distance for p in picked):
            continue
        picked.append(Detection(x=float(x), y=float(y), confidence=min(1.0, values[y, x] / 255.0)))
    return picked


# ---------------------------------------------------------------------------
# Estimator registry


class DiameterEstimator(Protocol):
    name: str

    def estimate(self, patch: HeatmapPatch, image_id: Optional[str] = None) -> Detection:
        """Diameter + confidence for the ball assumed near the patch center."""


class ConstantEstimator:
    """Fixed output regardless of input; test stub."""

    name = "constant"

    def __init__(self, diameter: float = 20.0, confidence: float = 1.0):
        self.diameter = diameter
        self.confidence = confidence

    def estimate(self, patch: HeatmapPatch, image_id: Optional[str] = None) -> Detection:
        cx = patch.origin[0] + (patch.side - 1) / 2.0
        cy = patch.origin[1] + (patch.side - 1) / 2.0
        return Detection(x=cx, y=cy, confidence=self.confidence, diameter=self.diameter)


class OracleEstimator:
    """Reads the ground-truth ball for the patch's image; upper bound for
    any estimator, used to decouple diameter metrics from detection."""

    name = "oracle"

    def __init__(self, truths: dict[str, PixelBall]):
        self._truths = dict(truths)

    def estimate(self, patch: HeatmapPatch, image_id: Optional[str] = None) -> Detection:
        if image_id is None or image_id not in self._truths:
            raise ValueError(f"oracle estimator has no ground truth for image {image_id!r}")
        ball = self._truths[image_id]
        return Detection(x=ball.bx, y=ball.by, confidence=1.0, diameter=ball.d)


class HoughBaselineEstimator:
    """Classical baseline: bounded Hough circle transform on the patch."""

    name = "hct"

    def __init__(
        self,
        camera: CalibratedCamera,
        scene: CourtBounds,
        phi: float,
        rho: float = 37.0,
        tau_low: float = 10.0,
        tau_high: float = 20.0,
        d_step: float = 0.5,
    ):
        self.camera = camera
        self.scene = scene
        self.phi = phi
        self.rho = rho
        self.tau_low = tau_low
        self.tau_high = tau_high
        self.d_step = d_step

    def estimate(self, patch: HeatmapPatch, image_id: Optional[str] = None) -> Detection:
        result = baseline_estimate(
            patch,
            self.camera,
            self.scene,
            self.phi,
            rho=self.rho,
            tau_low=self.tau_low,
            tau_high=self.tau_high,
            d_step=self.d_step,
        )
        if result.estimate is None:
            cx = patch.origin[0] + (patch.side - 1) / 2.0
            cy = patch.origin[1] + (patch.side - 1) / 2.0
            return Detection(x=cx, y=cy, confidence=0.0, diameter=None)
        est = result.estimate
        return Detection(
            x=est.center[0], y=est.center[1], confidence=est.score, diameter=est.diameter
        )


_FACTORIES: dict[str, Callable[..., DiameterEstimator]] = {
    "constant": ConstantEstimator,
    "oracle": OracleEstimator,
    "hct": HoughBaselineEstimator,
}

ESTIMATOR_NAMES = tuple(sorted(_FACTORIES))


def build_estimator(name: str, **kwargs) -> DiameterEstimator:
    """Instantiate a registered estimator by name."""
    try:
        factory = _FACTORIES[name]
    except KeyError:
        raise ValueError(
            f"unknown estimator {name!r}; registered estimators: {', '.join(ESTIMATOR_NAMES)}"
        ) from None
    return factory(**kwargs)


def estimate_diameter(
    estimator: DiameterEstimator, patch: HeatmapPatch, image_id: Optional[str] = None
) -> Detection:
    """Run one estimator on one patch."""
    return estimator.estimate(patch, image_id=image_id)


# ---------------------------------------------------------------------------
# Detections file format (JSON lines, one object per image)


def save_detections(
    entries: Iterable[tuple[str, Sequence[Detection]]], path: str | Path
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for image_id, candidates in entries:
            record = {
                "image_id": image_id,
                "candidates": [
                    {
                        "x": c.x,
                        "y": c.y,
                        "confidence": c.confidence,
                        **({"diameter": c.diameter} if c.diameter is not None else {}),
                    }
                    for c in candidates
                ],
            }
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")


def load_detections(path: str | Path) -> list[tuple[str, list[Detection]]]:
    out: list[tuple[str, list[Detection]]] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
            candidates = [
                Detection(
                    x=float(c["x"]),
                    y=float(c["y"]),
                    confidence=float(c["confidence"]),
                    diameter=float(c["diameter"]) if "diameter" in c else None,
                )
                for c in record["candidates"]
            ]
            out.append((str(record["image_id"]), candidates))
    return out
