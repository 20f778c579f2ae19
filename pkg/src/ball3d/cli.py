"""Command-line entry point for the localization pipeline.

Subcommands: localize, fit-trajectory, evaluate, compare-annotations,
synthesize, serve. All parameter defaults mirror the values the pipeline
was tuned with (rho=37, tau_low=10, tau_high=20, delta=1.0, alpha=0.5,
phi=0.24 m, patch side 64, g=9.81) so runs reproduce first and vary second.

Exit codes: 0 ok, 1 internal error, 2 usage or missing id, 3 validation
failure, 4 numeric/geometry failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import ballistic, data, estimation, metrics
from .ballistic import TimedObservation, compare_annotation_methods, default_comparison_scene
from .data import DatasetManifest, ManifestError, SceneSpec, load_manifest, synthesize_dataset
from .estimation import Detection, build_estimator, extract_patch, peak_candidates, select_candidate
from .geometry import (
    DEFAULT_BALL_DIAMETER_M,
    GeometryError,
    PixelBall,
    localize_from_diameter,
)
from .imageproc import (
    DEFAULT_PATCH_SIDE,
    DEFAULT_RHO,
    DEFAULT_TAU_HIGH,
    DEFAULT_TAU_LOW,
    DEFAULT_D_STEP,
    CourtBounds,
    load_heatmap,
)
from .metrics import EvaluationSample, RocImage, evaluate_samples, format_report_table

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_NUMERIC = 4


@dataclass(frozen=True)
class CommandResult:
    exit_code: int
    summary: str
    payload: Optional[dict] = None
    payload_path: Optional[Path] = None


class CommandError(Exception):
    def __init__(self, exit_code: int, message: str):
        self.exit_code = exit_code
        super().__init__(message)


def _dump_json(payload: dict) -> str:
    return json.dumps(payload, indent=2, sort_keys=True)


def _need_manifest(path: Optional[str]) -> DatasetManifest:
    if path is None:
        raise CommandError(EXIT_USAGE, "--manifest is required for this command")
    try:
        return load_manifest(path)
    except ManifestError as exc:
        raise CommandError(EXIT_VALIDATION, str(exc)) from exc
    except FileNotFoundError as exc:
        raise CommandError(EXIT_USAGE, f"manifest not found: {path}") from exc


def _estimator_for(args, manifest: DatasetManifest, camera, phi: float):
    name = args.estimator
    if name == "oracle":
        truths = {}
        for record in manifest.images:
            if record.annotation is None:
                continue
            cam = manifest.camera_for(record)
            _, ball = data.resolve_annotation(record, cam, phi)
            truths[record.id] = ball
        return build_estimator("oracle", truths=truths)
    if name == "hct":
        scene = CourtBounds()
        return build_estimator(
            "hct",
            camera=camera,
            scene=scene,
            phi=phi,
            rho=args.rho,
            tau_low=args.tau_low,
            tau_high=args.tau_high,
            d_step=args.d_step,
        )
    if name == "constant":
        return build_estimator("constant")
    raise CommandError(
        EXIT_USAGE,
        f"unknown estimator {name!r}; choose from {', '.join(estimation.ESTIMATOR_NAMES)}",
    )


def _candidates_for(record, manifest: DatasetManifest, side: int) -> list[Detection]:
    if record.detections:
        return list(record.detections)
    path = manifest.image_path(record)
    if not path.exists():
        raise CommandError(
            EXIT_USAGE, f"image {record.id!r} has no detections and no heatmap at {path}"
        )
    heatmap = load_heatmap(path)
    candidates = peak_candidates(heatmap, k=1, min_distance=side / 2.0)
    if not candidates:
        raise CommandError(EXIT_NUMERIC, f"image {record.id!r}: heatmap has no peaks")
    return candidates


# ---------------------------------------------------------------------------
# subcommands


def cmd_localize(args) -> CommandResult:
    manifest = _need_manifest(args.manifest)
    try:
        record = manifest.image(args.image)
    except KeyError as exc:
        raise CommandError(EXIT_USAGE, str(exc)) from exc
    camera = manifest.camera_for(record)
    estimator = _estimator_for(args, manifest, camera, args.phi)
    candidates = _candidates_for(record, manifest, args.side)
    index, chosen = select_candidate(candidates)
    path = manifest.image_path(record)
    if path.exists():
        heatmap = load_heatmap(path)
    else:
        heatmap = np.zeros((camera.height, camera.width))
    patch = extract_patch(heatmap, (chosen.x, chosen.y), side=args.side)
    detection = estimator.estimate(patch, image_id=record.id)
    if detection.diameter is None:
        raise CommandError(EXIT_NUMERIC, f"image {record.id!r}: no circle found in the patch")
    try:
        position = localize_from_diameter(
            camera, PixelBall(detection.x, detection.y, detection.diameter), args.phi
        )
    except GeometryError as exc:
        raise CommandError(EXIT_NUMERIC, str(exc)) from exc
    payload = {
        "image_id": record.id,
        "candidate_index": index,
        "estimator": args.estimator,
        "center_px": [detection.x, detection.y],
        "diameter_px": detection.diameter,
        "confidence": detection.confidence,
        "position_m": [position.x, position.y, position.z],
        "phi_m": args.phi,
    }
    summary = (
        f"{record.id}: ball at ({position.x:.3f}, {position.y:.3f}, {position.z:.3f}) m, "
        f"diameter {detection.diameter:.2f} px"
    )
    return CommandResult(EXIT_OK, summary, payload)


def cmd_fit_trajectory(args) -> CommandResult:
    manifest = _need_manifest(args.manifest)
    try:
        group = manifest.trajectory(args.trajectory)
    except KeyError as exc:
        raise CommandError(EXIT_USAGE, str(exc)) from exc
    annotations = []
    for image_id, t in zip(group.image_ids, group.timestamps):
        record = manifest.image(image_id)
        if record.annotation is None:
            continue
        camera = manifest.camera_for(record)
        try:
            point, _ = data.resolve_annotation(record, camera, args.phi)
        except GeometryError as exc:
            raise CommandError(EXIT_NUMERIC, str(exc)) from exc
        annotations.append((image_id, TimedObservation(t=t, position=point)))
    try:
        result = ballistic.fit([obs for _, obs in annotations], g=args.g)
    except ballistic.FitError as exc:
        raise CommandError(EXIT_NUMERIC, f"trajectory {group.id!r}: {exc}") from exc
    payload = ballistic.fit_result_to_dict(result, image_ids=[i for i, _ in annotations])
    payload["trajectory_id"] = group.id
    summary = (
        f"{group.id}: fitted {len(annotations)} annotations, RMS {result.rms:.4f} m, "
        f"{int(np.sum(ballistic.flag_outliers(result)))} outlier(s) flagged"
    )
    return CommandResult(EXIT_OK, summary, payload)


def cmd_evaluate(args) -> CommandResult:
    manifest = _need_manifest(args.manifest)
    annotated = [record for record in manifest.images if record.annotation is not None]
    if not annotated:
        raise CommandError(EXIT_VALIDATION, "manifest has no annotated images to evaluate")
    camera0 = manifest.camera_for(annotated[0])
    estimator = _estimator_for(args, manifest, camera0, args.phi)
    samples = []
    roc_images = []
    any_detections = False
    for record in annotated:
        camera = manifest.camera_for(record)
        truth_point, truth_ball = data.resolve_annotation(record, camera, args.phi)
        path = manifest.image_path(record)
        heatmap = load_heatmap(path) if path.exists() else np.zeros((camera.height, camera.width))
        if args.mode == "end-to-end" and record.detections:
            _, chosen = select_candidate(list(record.detections))
            center = (chosen.x, chosen.y)
        else:
            center = (truth_ball.bx, truth_ball.by)
        patch = extract_patch(heatmap, center, side=args.side)
        detection = estimator.estimate(patch, image_id=record.id)
        samples.append(
            EvaluationSample(
                true_ball=truth_ball,
                true_position=truth_point,
                predicted=detection,
                camera=camera,
            )
        )
        if record.detections:
            any_detections = True
            roc_images.append(
                RocImage(candidates=tuple(record.detections), truth=truth_ball)
            )
    report = evaluate_samples(
        samples,
        phi=args.phi,
        roc_images=roc_images if any_detections else None,
        use_predicted_center=(args.mode == "end-to-end"),
        match_radius=args.match_radius,
    )
    payload = metrics.report_to_dict(report)
    payload["estimator"] = args.estimator
    payload["mode"] = args.mode
    return CommandResult(EXIT_OK, format_report_table(report), payload)


def cmd_compare_annotations(args) -> CommandResult:
    scene = default_comparison_scene(phi=args.phi)
    report = compare_annotation_methods(
        scene,
        click_noise_px=args.noise_px,
        seeds=args.seeds,
        base_seed=args.seed if args.seed is not None else 0,
    )
    payload = {
        "click_noise_px": report.click_noise_px,
        "draws": report.draws,
        "diameter": {
            "mean_px": report.diameter.mean_px,
            "std_px": report.diameter.std_px,
            "mean_depth_error_m": report.diameter.mean_depth_error_m,
        },
        "projection": {
            "mean_px": report.projection.mean_px,
            "std_px": report.projection.std_px,
            "mean_depth_error_m": report.projection.mean_depth_error_m,
        },
    }
    if args.hist_csv:
        lines = ["method,bin_low,bin_high,count"]
        for name, stats in (("diameter", report.diameter), ("projection", report.projection)):
            for low, high, count in zip(
                stats.hist_edges[:-1], stats.hist_edges[1:], stats.hist_counts
            ):
                lines.append(f"{name},{low},{high},{count}")
        Path(args.hist_csv).write_text("\n".join(lines) + "\n", encoding="utf-8")
    summary = (
        f"diameter-equivalent error over {report.draws} draws at "
        f"{report.click_noise_px} px click noise:\n"
        f"  diameter method   mean {report.diameter.mean_px:.3f} px\n"
        f"  projection method mean {report.projection.mean_px:.3f} px"
    )
    return CommandResult(EXIT_OK, summary, payload)


def cmd_synthesize(args) -> CommandResult:
    if args.spec:
        try:
            with open(args.spec, encoding="utf-8") as fh:
                spec = SceneSpec.from_dict(json.load(fh))
        except FileNotFoundError as exc:
            raise CommandError(EXIT_USAGE, f"scene spec not found: {args.spec}") from exc
        except (ValueError, json.JSONDecodeError) as exc:
            raise CommandError(EXIT_VALIDATION, f"bad scene spec: {exc}") from exc
    else:
        spec = SceneSpec()
    seed = args.seed if args.seed is not None else 0
    manifest = synthesize_dataset(spec, seed=seed, out_dir=args.out)
    annotated = sum(1 for record in manifest.images if record.annotation is not None)
    payload = {
        "manifest": str(Path(args.out) / "manifest.json"),
        "images": len(manifest.images),
        "annotated": annotated,
        "trajectories": len(manifest.trajectories),
        "seed": seed,
    }
    summary = (
        f"wrote {len(manifest.images)} images ({annotated} annotated), "
        f"{len(manifest.trajectories)} trajectories to {args.out}"
    )
    return CommandResult(EXIT_OK, summary, payload)


def cmd_serve(args) -> CommandResult:
    import uvicorn

    from .service import create_app

    manifest = _need_manifest(args.manifest)
    app = create_app(manifest, store_path=args.store, ui_dir=args.ui_dir, phi=args.phi)
    host, _, port = args.bind.partition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8000), log_level="warning")
    return CommandResult(EXIT_OK, "server stopped")


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ball3d", description="Monocular 3D ball localization toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, manifest=True, report=True):
        if manifest:
            p.add_argument("--manifest", help="dataset manifest JSON")
        p.add_argument("--json", action="store_true", help="print the machine-readable payload")
        if report:
            p.add_argument("--report", help="also write the JSON payload to this path")
        p.add_argument("--seed", type=int, default=None, help="seed for stochastic commands")
        p.add_argument(
            "--phi",
            type=float,
            default=DEFAULT_BALL_DIAMETER_M,
            help="true ball diameter in meters",
        )

    def estimator_flags(p):
        p.add_argument("--estimator", default="hct", help="diameter estimator (hct|oracle|constant)")
        p.add_argument("--side", type=int, default=DEFAULT_PATCH_SIDE, help="patch side in px")
        p.add_argument("--rho", type=float, default=DEFAULT_RHO, help="opening disc diameter")
        p.add_argument("--tau-low", type=float, default=DEFAULT_TAU_LOW, dest="tau_low")
        p.add_argument("--tau-high", type=float, default=DEFAULT_TAU_HIGH, dest="tau_high")
        p.add_argument("--d-step", type=float, default=DEFAULT_D_STEP, dest="d_step")

    p = sub.add_parser("localize", help="3D position of the ball in one image")
    common(p)
    estimator_flags(p)
    p.add_argument("--image", required=True, help="image id")
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("fit-trajectory", help="fit the free-fall model to one trajectory")
    common(p)
    p.add_argument("--trajectory", required=True, help="trajectory id")
    p.add_argument("--g", type=float, default=ballistic.GRAVITY, help="gravity constant")
    p.set_defaults(func=cmd_fit_trajectory)

    p = sub.add_parser("evaluate", help="diameter MAE metrics (and ROC when detections exist)")
    common(p)
    estimator_flags(p)
    p.add_argument(
        "--mode",
        choices=["diameter", "end-to-end"],
        default="diameter",
        help="diameter: true centers isolate the estimator; end-to-end: selected candidates",
    )
    p.add_argument("--match-radius", type=float, default=None, dest="match_radius")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare-annotations", help="Monte Carlo annotation-method comparison")
    common(p, manifest=False)
    p.add_argument("--noise-px", type=float, default=1.0, dest="noise_px")
    p.add_argument("--seeds", type=int, default=1000, help="Monte Carlo draws")
    p.add_argument("--hist-csv", dest="hist_csv", help="write error histograms as CSV")
    p.set_defaults(func=cmd_compare_annotations)

    p = sub.add_parser("synthesize", help="generate a synthetic dataset")
    common(p, manifest=False)
    p.add_argument("--spec", help="scene spec JSON (defaults used when omitted)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("serve", help="run the annotation service")
    common(p)
    p.add_argument("--bind", default="127.0.0.1:8000", help="host:port")
    p.add_argument("--store", default=None, help="annotation journal path")
    p.add_argument("--ui-dir", default=None, dest="ui_dir", help="built UI bundle directory")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        result = args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ManifestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except GeometryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to exit code 1
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    if result.payload is not None and getattr(args, "report", None):
        Path(args.report).parent.mkdir(parents=True, exist_ok=True)
        Path(args.report).write_text(_dump_json(result.payload) + "\n", encoding="utf-8")
    if getattr(args, "json", False) and result.payload is not None:
        print(_dump_json(result.payload))
    else:
        print(result.summary)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
