import numpy as np
import pytest

from ball3d.imageproc import (
    CourtBounds,
    HeatmapPatch,
    HoughParams,
    baseline_estimate,
    diameter_bounds,
    gradient_magnitude,
    hough_circle,
    hysteresis_edges,
    load_heatmap,
    morphological_opening,
    render_disc,
    save_heatmap,
)

from conftest import make_camera


def render_ring(side, center, diameter):
    """Independent circle rasterization: cells within half a pixel of the
    ideal radius."""
    yy, xx = np.mgrid[0:side, 0:side]
    dist = np.hypot(yy - center[1], xx - center[0])
    return np.abs(dist - diameter / 2.0) <= 0.5


def binary_disc(side, center, radius):
    yy, xx = np.mgrid[0:side, 0:side]
    return np.where(np.hypot(yy - center[1], xx - center[0]) <= radius, 255.0, 0.0)


# ---------------------------------------------------------------------------
# morphological opening


def test_opening_constant_patch_unchanged():
    patch = HeatmapPatch(values=np.full((32, 32), 77.0))
    opened = morphological_opening(patch, rho=5.0)
    assert np.array_equal(opened.values, patch.values)


def test_opening_removes_single_bright_pixel():
    values = np.zeros((32, 32))
    values[16, 16] = 255.0
    opened = morphological_opening(HeatmapPatch(values=values), rho=3.0)
    assert np.array_equal(opened.values, np.zeros((32, 32)))


def test_opening_preserves_disc_up_to_boundary():
    values = binary_disc(64, (32, 32), 10.0)
    opened = morphological_opening(HeatmapPatch(values=values), rho=5.0)
    changed = np.nonzero(opened.values != values)
    if changed[0].size:
        dist = np.hypot(changed[0] - 32, changed[1] - 32)
        assert dist.min() >= 9.0 and dist.max() <= 11.0


def test_opening_preserves_origin():
    patch = HeatmapPatch(values=np.zeros((16, 16)), origin=(100.0, 50.0))
    assert morphological_opening(patch, rho=3.0).origin == (100.0, 50.0)


# ---------------------------------------------------------------------------
# hysteresis edges


def test_hysteresis_constant_patch_empty():
    edges = hysteresis_edges(HeatmapPatch(values=np.full((32, 32), 100.0)), 10.0, 20.0)
    assert not edges.any()


def test_hysteresis_step_edge_columns():
    # Central differences respond on the two columns adjacent to a hard
    # step, each at half the step height.
    values = np.zeros((16, 16))
    values[:, 8:] = 50.0
    mag = gradient_magnitude(values)
    assert np.allclose(mag[:, 7], 25.0) and np.allclose(mag[:, 8], 25.0)
    edges = hysteresis_edges(HeatmapPatch(values=values), 10.0, 20.0)
    assert sorted(set(np.nonzero(edges)[1].tolist())) == [7, 8]
    assert edges[:, 7].all() and edges[:, 8].all()


def test_hysteresis_isolated_weak_step_is_gated_out():
    # Gradient magnitude 15 sits between the thresholds; with no strong
    # seed anywhere the whole response is dropped.
    values = np.zeros((16, 16))
    values[:, 8:] = 30.0
    edges = hysteresis_edges(HeatmapPatch(values=values), 10.0, 20.0)
    assert not edges.any()


def test_hysteresis_weak_pixels_survive_next_to_seed():
    values = np.zeros((16, 16))
    values[:, 8:] = 30.0      # weak step, magnitude 15
    values[4, 8:] = 60.0      # one strong row, magnitude 30 at the step
    edges = hysteresis_edges(HeatmapPatch(values=values), 10.0, 20.0)
    assert edges[4, 7] and edges[4, 8]
    # Weak step pixels are 8-connected to the strong ones along the column.
    assert edges[10, 7] or edges[10, 8]


def test_hysteresis_validates_thresholds():
    patch = HeatmapPatch(values=np.zeros((8, 8)))
    with pytest.raises(ValueError):
        hysteresis_edges(patch, 20.0, 10.0)


# ---------------------------------------------------------------------------
# hough circle


def test_hough_recovers_clean_circle():
    edges = render_ring(64, (32, 32), 20.0)
    est = hough_circle(edges, HoughParams(d_min=14.0, d_max=37.0, d_step=0.5))
    assert abs(est.diameter - 20.0) <= 1.0
    assert abs(est.center[0] - 32.0) <= 1.0
    assert abs(est.center[1] - 32.0) <= 1.0
    assert est.score > 0.9


def test_hough_bound_clamping_degrades_score():
    edges = render_ring(64, (32, 32), 20.0)
    in_bounds = hough_circle(edges, HoughParams(d_min=14.0, d_max=37.0, d_step=0.5))
    clamped = hough_circle(edges, HoughParams(d_min=22.0, d_max=37.0, d_step=0.5))
    assert 22.0 <= clamped.diameter <= 37.0
    assert clamped.score < in_bounds.score


def test_hough_concentric_tie_breaks_to_smaller_diameter():
    edges = render_ring(64, (32, 32), 16.0) | render_ring(64, (32, 32), 30.0)
    est = hough_circle(edges, HoughParams(d_min=10.0, d_max=36.0, d_step=0.5))
    assert est.diameter == 16.0


def test_hough_empty_edge_map_is_distinct_no_circle():
    assert hough_circle(np.zeros((64, 64), dtype=bool), HoughParams(d_min=10, d_max=30)) is None


def test_hough_translation_equivariance():
    base = render_ring(64, (25.0, 30.0), 14.0)
    shifted = np.roll(np.roll(base, 3, axis=0), 5, axis=1)
    params = HoughParams(d_min=10.0, d_max=20.0, d_step=0.5)
    a = hough_circle(base, params)
    b = hough_circle(shifted, params)
    assert b.center == (a.center[0] + 5.0, a.center[1] + 3.0)
    assert b.diameter == a.diameter
    assert b.score == a.score


def test_hough_estimate_always_within_bounds():
    rng = np.random.default_rng(0)
    params = HoughParams(d_min=12.0, d_max=28.0, d_step=0.5)
    for _ in range(20):
        edges = rng.uniform(size=(64, 64)) < 0.05
        est = hough_circle(edges, params)
        if est is not None:
            assert params.d_min <= est.diameter <= params.d_max
            assert 0.0 <= est.score <= 1.0


def test_hough_deterministic():
    edges = render_ring(64, (30, 28), 18.0)
    params = HoughParams(d_min=12.0, d_max=28.0, d_step=0.5)
    a = hough_circle(edges, params)
    b = hough_circle(edges, params)
    assert a == b


def test_hough_diameter_sweep_accuracy():
    params = HoughParams(d_min=6.0, d_max=44.0, d_step=0.5)
    for d in range(8, 41, 2):
        edges = render_ring(64, (32, 32), float(d))
        est = hough_circle(edges, params)
        assert abs(est.diameter - d) <= params.d_step + 1.0


# ---------------------------------------------------------------------------
# diameter bounds


def test_diameter_bounds_hand_values():
    # Degenerate court: a 20 m segment with the camera 10 m off one end,
    # so the extremes sit at 10 m and 30 m.
    camera = make_camera(fx=1000.0, fy=1000.0, position=(-10.0, 0.0, 0.0), target=(1.0, 0.0, 0.0))
    scene = CourtBounds(length=20.0, width=0.0, margin=0.0, min_height=0.0, max_height=0.0)
    d_min, d_max = diameter_bounds(camera, scene, phi=0.24)
    assert abs(d_min - 8.0) < 1e-9
    assert abs(d_max - 24.0) < 1e-9


def test_diameter_bounds_degenerate_point_volume():
    camera = make_camera(position=(0.0, -10.0, 0.0), target=(0.0, 1.0, 0.0))
    scene = CourtBounds(length=0.0, width=0.0, margin=0.0, min_height=0.0, max_height=0.0)
    d_min, d_max = diameter_bounds(camera, scene, phi=0.24)
    assert d_min == d_max


def test_diameter_bounds_margin_widens_interval():
    camera = make_camera(position=(14.0, -12.0, 6.0))
    tight = CourtBounds(margin=0.0)
    wide = CourtBounds(margin=2.0)
    lo0, hi0 = diameter_bounds(camera, tight, phi=0.24)
    lo2, hi2 = diameter_bounds(camera, wide, phi=0.24)
    assert lo2 < lo0 and hi2 > hi0


def test_diameter_bounds_camera_inside_volume_clamps_to_patch():
    camera = make_camera(position=(14.0, 7.0, 2.0), target=(20.0, 7.0, 1.0))
    _, d_max = diameter_bounds(camera, CourtBounds(), phi=0.24, patch_side=64)
    assert d_max == 64.0


# ---------------------------------------------------------------------------
# baseline pipeline


def baseline_fixture_camera():
    # Places the court so its diameter interval comfortably brackets the
    # rendered test discs.
    return make_camera(fx=1200.0, fy=1200.0, position=(14.0, -9.0, 5.0), target=(14.0, 7.5, 1.5))


def test_baseline_on_noisy_synthetic_disc():
    rng = np.random.default_rng(123)
    values = render_disc(64, (32.0, 32.0), 24.0)
    values = np.clip(values + rng.normal(scale=5.0, size=values.shape), 0.0, 255.0)
    patch = HeatmapPatch(values=values, origin=(100.0, 200.0))
    result = baseline_estimate(
        patch, baseline_fixture_camera(), CourtBounds(), phi=0.24, rho=5.0
    )
    assert result.estimate is not None
    assert abs(result.estimate.diameter - 24.0) <= 2.0
    # Center reported in the source frame via the patch origin.
    assert abs(result.estimate.center[0] - 132.0) <= 2.0
    assert abs(result.estimate.center[1] - 232.0) <= 2.0


def test_baseline_all_zero_heatmap_reports_no_circle():
    patch = HeatmapPatch(values=np.zeros((64, 64)))
    result = baseline_estimate(patch, baseline_fixture_camera(), CourtBounds(), phi=0.24)
    assert result.estimate is None


def test_baseline_echoes_default_params():
    patch = HeatmapPatch(values=np.zeros((64, 64)))
    result = baseline_estimate(patch, baseline_fixture_camera(), CourtBounds(), phi=0.24)
    assert (result.params.rho, result.params.tau_low, result.params.tau_high) == (37.0, 10.0, 20.0)


def test_baseline_large_default_opening_flattens_small_disc():
    # The default 37 px opening removes structures smaller than the element;
    # a 24 px disc cannot survive it.
    patch = HeatmapPatch(values=render_disc(64, (32.0, 32.0), 24.0))
    result = baseline_estimate(patch, baseline_fixture_camera(), CourtBounds(), phi=0.24)
    assert result.estimate is None


# ---------------------------------------------------------------------------
# patch type and file formats


def test_patch_requires_square_and_range():
    with pytest.raises(ValueError, match="square"):
        HeatmapPatch(values=np.zeros((8, 9)))
    with pytest.raises(ValueError, match="255"):
        HeatmapPatch(values=np.full((8, 8), 300.0))


def test_hough_params_validation():
    with pytest.raises(ValueError):
        HoughParams(tau_low=20.0, tau_high=10.0)
    with pytest.raises(ValueError):
        HoughParams(d_min=30.0, d_max=20.0)
    with pytest.raises(ValueError):
        HoughParams(d_step=0.0)
    with pytest.raises(ValueError):
        HoughParams(rho=0.5)


def test_heatmap_png_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    values = np.round(rng.uniform(0, 255, size=(64, 64)))
    path = tmp_path / "patch.png"
    save_heatmap(values, path)
    assert np.array_equal(load_heatmap(path), values)


def test_heatmap_raw_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    values = np.round(rng.uniform(0, 255, size=(48, 48)))
    path = tmp_path / "patch.hm"
    save_heatmap(values, path)
    assert np.array_equal(load_heatmap(path), values)


def test_heatmap_raw_rejects_bad_magic(tmp_path):
    path = tmp_path / "bogus.hm"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
    with pytest.raises(ValueError, match="magic"):
        load_heatmap(path)
