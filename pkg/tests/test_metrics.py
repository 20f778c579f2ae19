import math

import numpy as np
import pytest

from ball3d.estimation import Detection
from ball3d.geometry import PixelBall, WorldPoint, project_ball
from ball3d.metrics import (
    EvaluationSample,
    RocImage,
    evaluate_samples,
    format_report_table,
    mae_m,
    mae_pct,
    mae_px,
    report_to_dict,
    roc,
    roc_points_csv,
)

from conftest import make_camera, random_ball_in_front, random_camera


def sample_for(camera, truth, d_hat, phi=0.24):
    ball = project_ball(camera, truth, phi)
    predicted = Detection(x=ball.bx, y=ball.by, confidence=1.0, diameter=d_hat(ball.d))
    return EvaluationSample(
        true_ball=ball, true_position=truth, predicted=predicted, camera=camera
    )


def brute_force_roc(images, match_radius=None):
    """Independent threshold sweep used as the oracle for roc()."""
    thresholds = sorted({c.confidence for img in images for c in img.candidates}, reverse=True)
    pts = [(math.inf, 0.0, 0.0)]
    for threshold in thresholds:
        tp = 0
        fp = 0
        for img in images:
            kept = [c for c in img.candidates if c.confidence >= threshold]
            hit = False
            for cand in kept:
                if img.truth is None:
                    continue
                radius = img.truth.d / 2.0 if match_radius is None else match_radius
                if math.hypot(cand.x - img.truth.bx, cand.y - img.truth.by) <= radius:
                    hit = True
                    break
            tp += 1 if hit else 0
            fp += len(kept) - (1 if hit else 0)
        pts.append((threshold, tp / len(images), fp / len(images)))
    fp_max = max(len(img.candidates) for img in images)
    if fp_max == 0:
        return pts[:1], 0.0, 0.0
    area = 0.0
    for (_, tp0, fp0), (_, tp1, fp1) in zip(pts, pts[1:]):
        area += (fp1 - fp0) * (tp1 + tp0) / 2.0
    area += (fp_max - pts[-1][2]) * pts[-1][1]
    return pts, area / fp_max, fp_max


# ---------------------------------------------------------------------------
# MAE in pixels


def test_mae_px_zero_on_perfect_predictions(court_camera):
    samples = [
        sample_for(court_camera, WorldPoint(14.0, 5.0, 2.0), lambda d: d),
        sample_for(court_camera, WorldPoint(10.0, 7.0, 1.0), lambda d: d),
    ]
    assert mae_px(samples) == 0.0


def test_mae_px_hand_mean(court_camera):
    truths = [WorldPoint(14.0, 5.0, 2.0), WorldPoint(10.0, 7.0, 1.0)]
    deltas = [2.0, -3.0]
    samples = [
        sample_for(court_camera, t, lambda d, delta=delta: d + delta)
        for t, delta in zip(truths, deltas)
    ]
    assert abs(mae_px(samples) - 2.5) < 1e-12


def test_mae_px_single_sample_headline_magnitude(court_camera):
    samples = [sample_for(court_camera, WorldPoint(14.0, 5.0, 2.0), lambda d: d - 1.6)]
    assert abs(mae_px(samples) - 1.6) < 1e-12


def test_mae_px_empty_fails():
    with pytest.raises(ValueError):
        mae_px([])


def test_mae_px_order_invariant_and_additive(court_camera):
    rng = np.random.default_rng(4)
    samples = [
        sample_for(
            court_camera,
            WorldPoint(rng.uniform(8, 20), rng.uniform(3, 12), rng.uniform(0.5, 4.0)),
            lambda d, e=rng.normal(scale=2.0): d + e,
        )
        for _ in range(10)
    ]
    shuffled = list(samples)
    rng.shuffle(shuffled)
    assert abs(mae_px(samples) - mae_px(shuffled)) < 1e-12
    a, b = samples[:4], samples[4:]
    merged = (mae_px(a) * len(a) + mae_px(b) * len(b)) / len(samples)
    assert abs(merged - mae_px(samples)) < 1e-12


# ---------------------------------------------------------------------------
# MAE in meters / percent


def test_mae_m_zero_for_perfect_diameters(court_camera):
    samples = [sample_for(court_camera, WorldPoint(14.0, 5.0, 2.0), lambda d: d)]
    assert mae_m(samples, phi=0.24) < 1e-9


def test_mae_m_oblique_fixture_matches_ray_scaling():
    # Camera looking 45 degrees down at the ball. With the true center kept,
    # an underestimated diameter slides the estimate along the viewing ray:
    # error = |d/d_hat - 1| * horizontal camera-ball distance.
    camera = make_camera(position=(0.0, -10.0, 12.0), target=(0.0, 0.0, 2.0))
    truth = WorldPoint(0.0, 0.0, 2.0)
    samples = [sample_for(camera, truth, lambda d: 0.9 * d)]
    horizontal = math.hypot(
        truth.x - camera.pose.center[0], truth.y - camera.pose.center[1]
    )
    expected = (1.0 / 0.9 - 1.0) * horizontal
    assert abs(mae_m(samples, phi=0.24) - expected) < 1e-9


def test_mae_m_halves_when_pixel_density_doubles():
    position = (0.0, -16.0, 5.0)
    target = (0.0, 0.0, 1.5)
    truth = WorldPoint(0.0, 0.0, 1.5)
    err = {}
    for scale in (1.0, 2.0):
        camera = make_camera(fx=1000.0 * scale, fy=1000.0 * scale,
                             position=position, target=target)
        samples = [sample_for(camera, truth, lambda d: d - 0.5)]
        err[scale] = mae_m(samples, phi=0.24)
    assert abs(err[2.0] / err[1.0] - 0.5) < 0.01


def test_mae_pct_ratio_definition(court_camera):
    # Two samples whose per-sample ratios are 5% and 15% -> mean 10%.
    truths = [WorldPoint(14.0, 5.0, 2.0), WorldPoint(12.0, 8.0, 1.0)]
    samples = []
    targets = [0.05, 0.15]
    for truth, ratio in zip(truths, targets):
        dist = float(np.linalg.norm(truth.as_array() - court_camera.pose.center))
        ball = project_ball(court_camera, truth, 0.24)
        # Solve for the diameter scale producing precisely the wanted ratio:
        # moving along the ray scales the whole offset by d/d_hat.
        horizontal = math.hypot(
            truth.x - court_camera.pose.center[0], truth.y - court_camera.pose.center[1]
        )
        k = 1.0 + ratio * dist / horizontal
        predicted = Detection(x=ball.bx, y=ball.by, confidence=1.0, diameter=ball.d / k)
        samples.append(
            EvaluationSample(
                true_ball=ball, true_position=truth, predicted=predicted, camera=court_camera
            )
        )
    assert abs(mae_pct(samples, phi=0.24) - 10.0) < 1e-6


def test_mae_pct_zero(court_camera):
    samples = [sample_for(court_camera, WorldPoint(14.0, 5.0, 2.0), lambda d: d)]
    assert mae_pct(samples, phi=0.24) < 1e-9


def test_mae_m_zero_error_regardless_of_pose():
    rng = np.random.default_rng(8)
    for _ in range(10):
        camera = random_camera(rng)
        truth = random_ball_in_front(rng, camera)
        samples = [sample_for(camera, truth, lambda d: d)]
        assert mae_m(samples, phi=0.24) < 1e-9


# ---------------------------------------------------------------------------
# ROC


def test_roc_perfect_detector():
    images = [
        RocImage(
            candidates=(Detection(100.0, 100.0, 0.9),),
            truth=PixelBall(100.0, 100.0, 20.0),
        )
    ]
    curve = roc(images)
    assert curve.auc == 1.0
    assert (curve.points[-1].tp_rate, curve.points[-1].fp_rate) == (1.0, 0.0)


def test_roc_pure_false_positive():
    images = [
        RocImage(
            candidates=(Detection(500.0, 500.0, 0.9),),
            truth=PixelBall(100.0, 100.0, 20.0),
        )
    ]
    curve = roc(images)
    assert curve.auc == 0.0
    assert all(p.tp_rate == 0.0 for p in curve.points)


def test_roc_matches_brute_force_on_mixed_fixture():
    images = [
        RocImage(
            candidates=(
                Detection(10.0, 10.0, 0.9),
                Detection(50.0, 50.0, 0.6),
                Detection(90.0, 10.0, 0.3),
            ),
            truth=PixelBall(11.0, 10.0, 16.0),
        ),
        RocImage(
            candidates=(Detection(40.0, 40.0, 0.7),),
            truth=PixelBall(80.0, 80.0, 16.0),
        ),
        RocImage(candidates=(Detection(10.0, 90.0, 0.5),), truth=None),
    ]
    curve = roc(images)
    pts, auc, fp_max = brute_force_roc(images)
    assert len(curve.points) == len(pts)
    for point, (threshold, tp, fp) in zip(curve.points, pts):
        assert point.threshold == threshold
        assert abs(point.tp_rate - tp) < 1e-15
        assert abs(point.fp_rate - fp) < 1e-15
    assert abs(curve.auc - auc) < 1e-15
    assert curve.fp_max == fp_max


def test_roc_monotone_along_threshold():
    rng = np.random.default_rng(5)
    images = []
    for _ in range(6):
        cands = tuple(
            Detection(rng.uniform(0, 100), rng.uniform(0, 100), rng.uniform(0, 1))
            for _ in range(int(rng.integers(0, 5)))
        )
        truth = PixelBall(rng.uniform(0, 100), rng.uniform(0, 100), 18.0)
        images.append(RocImage(candidates=cands, truth=truth))
    curve = roc(images)
    tps = [p.tp_rate for p in curve.points]
    fps = [p.fp_rate for p in curve.points]
    # Thresholds descend along the curve, so both rates are non-decreasing.
    assert all(b >= a for a, b in zip(tps, tps[1:]))
    assert all(b >= a for a, b in zip(fps, fps[1:]))


def test_roc_invariant_under_monotone_confidence_transform():
    rng = np.random.default_rng(6)
    images = []
    for _ in range(5):
        cands = tuple(
            Detection(rng.uniform(0, 100), rng.uniform(0, 100), rng.uniform(0.05, 0.95))
            for _ in range(3)
        )
        images.append(
            RocImage(candidates=cands, truth=PixelBall(rng.uniform(0, 100), 50.0, 16.0))
        )
    warped = [
        RocImage(
            candidates=tuple(
                Detection(c.x, c.y, c.confidence**2 * 0.8 + 0.1 * c.confidence)
                for c in img.candidates
            ),
            truth=img.truth,
        )
        for img in images
    ]
    a = roc(images)
    b = roc(warped)
    assert [(p.tp_rate, p.fp_rate) for p in a.points] == [
        (p.tp_rate, p.fp_rate) for p in b.points
    ]
    assert abs(a.auc - b.auc) < 1e-15


def test_roc_no_candidates_is_degenerate():
    images = [RocImage(candidates=(), truth=PixelBall(10.0, 10.0, 16.0))]
    curve = roc(images)
    assert curve.auc == 0.0
    assert len(curve.points) == 1


def test_roc_csv_export():
    images = [
        RocImage(candidates=(Detection(0.0, 0.0, 0.5),), truth=PixelBall(0.0, 0.0, 10.0))
    ]
    text = roc_points_csv(roc(images))
    lines = text.strip().split("\n")
    assert lines[0] == "threshold,tp_rate,fp_rate"
    assert len(lines) == 3


# ---------------------------------------------------------------------------
# aggregate report


def test_evaluate_samples_report(court_camera):
    samples = [
        sample_for(court_camera, WorldPoint(14.0, 5.0, 2.0), lambda d: d + 1.0),
        sample_for(court_camera, WorldPoint(10.0, 7.0, 1.0), lambda d: d - 1.0),
        EvaluationSample(
            true_ball=PixelBall(10.0, 10.0, 20.0),
            true_position=WorldPoint(0.0, 0.0, 1.0),
            predicted=Detection(10.0, 10.0, 0.2, diameter=None),
            camera=court_camera,
        ),
    ]
    report = evaluate_samples(samples, phi=0.24)
    assert report.n == 2
    assert report.excluded == 1
    assert abs(report.mae_px - 1.0) < 1e-12
    assert report.auc is None
    payload = report_to_dict(report)
    assert set(payload) == {"mae_px", "mae_m", "mae_pct", "auc", "n", "excluded"}
    table = format_report_table(report)
    assert "MAE [px]" in table and "excluded" in table
