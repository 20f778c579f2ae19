"""Dataset manifest schema, validation, and synthetic dataset generation.

A manifest is a single UTF-8 JSON document that ties together cameras,
images (with optional ball annotations and detector candidates), and
trajectory groupings. Image payloads are referenced by path relative to the
manifest, never embedded, so manifests stay small and diffable.

The synthesizer replaces the proprietary capture datasets at desk scale:
seeded ballistic ball paths projected through a calibrated camera, with
heatmaps rendered as anti-aliased discs plus configurable noise and
occluders.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import ballistic
from .ballistic import BallisticTrajectory
from .estimation import Detection
from .geometry import (
    CalibratedCamera,
    CameraIntrinsics,
    CameraPose,
    DistortionCoefficients,
    GeometryError,
    PixelBall,
    WorldPoint,
    camera_from_dict,
    camera_to_dict,
    localize_from_diameter,
    localize_from_projection,
    project_ball,
    project_pixel,
    rotation_look_at,
)
from .imageproc import render_disc, save_heatmap

__all__ = [
    "SCHEMA_VERSION",
    "ManifestError",
    "BallAnnotation",
    "ImageRecord",
    "TrajectoryGroup",
    "DatasetManifest",
    "manifest_to_dict",
    "manifest_from_dict",
    "load_manifest",
    "save_manifest",
    "resolve_annotation",
    "SceneSpec",
    "synthesize_dataset",
]

SCHEMA_VERSION = 1


class ManifestError(ValueError):
    """Manifest fails validation; carries every problem found."""

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("manifest validation failed:\n" + "\n".join(f"- {p}" for p in problems))


@dataclass(frozen=True)
class BallAnnotation:
    """Ball ground truth: center pixel plus exactly one second point, either
    the vertical projection on the court or the apparent diameter."""

    center_px: tuple[float, float]
    ground_px: Optional[tuple[float, float]] = None
    diameter_px: Optional[float] = None
    visible: bool = True

    def __post_init__(self) -> None:
        if (self.ground_px is None) == (self.diameter_px is None):
            raise ValueError(
                "annotation needs exactly one of ground_px or diameter_px, "
                f"got ground_px={self.ground_px}, diameter_px={self.diameter_px}"
            )
        if self.diameter_px is not None and not self.diameter_px > 0:
            raise ValueError(f"annotated diameter must be positive, got {self.diameter_px}")
        object.__setattr__(self, "center_px", (float(self.center_px[0]), float(self.center_px[1])))
        if self.ground_px is not None:
            object.__setattr__(
                self, "ground_px", (float(self.ground_px[0]), float(self.ground_px[1]))
            )


@dataclass(frozen=True)
class ImageRecord:
    id: str
    path: str
    camera_id: str
    annotation: Optional[BallAnnotation] = None
    detections: Optional[tuple[Detection, ...]] = None


@dataclass(frozen=True)
class TrajectoryGroup:
    """Images of one ballistic trajectory with their capture timestamps."""

    id: str
    image_ids: tuple[str, ...]
    timestamps: tuple[float, ...]
    fps: Optional[float] = None


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    cameras: dict[str, CalibratedCamera]
    images: tuple[ImageRecord, ...]
    trajectories: tuple[TrajectoryGroup, ...] = ()
    metadata: dict[str, str] = field(default_factory=dict)
    root: Optional[Path] = None

    def image(self, image_id: str) -> ImageRecord:
        for record in self.images:
            if record.id == image_id:
                return record
        raise KeyError(f"unknown image id {image_id!r}")

    def trajectory(self, trajectory_id: str) -> TrajectoryGroup:
        for group in self.trajectories:
            if group.id == trajectory_id:
                return group
        raise KeyError(f"unknown trajectory id {trajectory_id!r}")

    def camera_for(self, record: ImageRecord) -> CalibratedCamera:
        return self.cameras[record.camera_id]

    def image_path(self, record: ImageRecord) -> Path:
        path = Path(record.path)
        if not path.is_absolute() and self.root is not None:
            path = self.root / path
        return path


def _validate(manifest: DatasetManifest) -> list[str]:
    problems = []
    image_ids = set()
    for record in manifest.images:
        if record.id in image_ids:
            problems.append(f"duplicate image id {record.id!r}")
        image_ids.add(record.id)
        if record.camera_id not in manifest.cameras:
            problems.append(
                f"image {record.id!r} references missing camera {record.camera_id!r}"
            )
            continue
        camera = manifest.cameras[record.camera_id]
        ann = record.annotation
        if ann is not None:
            points = [("center", ann.center_px)]
            if ann.ground_px is not None:
                points.append(("ground", ann.ground_px))
            for label, (x, y) in points:
                if not (0 <= x < camera.width and 0 <= y < camera.height):
                    problems.append(
                        f"image {record.id!r}: {label} pixel ({x}, {y}) outside "
                        f"{camera.width}x{camera.height}"
                    )
    for group in manifest.trajectories:
        for image_id in group.image_ids:
            if image_id not in image_ids:
                problems.append(
                    f"trajectory {group.id!r} references missing image {image_id!r}"
                )
        if len(group.timestamps) != len(group.image_ids):
            problems.append(
                f"trajectory {group.id!r}: {len(group.timestamps)} timestamps for "
                f"{len(group.image_ids)} images"
            )
        elif any(b <= a for a, b in zip(group.timestamps, group.timestamps[1:])):
            problems.append(f"trajectory {group.id!r}: timestamps are not strictly increasing")
    return problems


def _annotation_to_dict(ann: BallAnnotation) -> dict:
    out: dict = {"center": list(ann.center_px), "visible": ann.visible}
    if ann.ground_px is not None:
        out["ground"] = list(ann.ground_px)
    else:
        out["diameter"] = ann.diameter_px
    return out


def _annotation_from_dict(data: dict) -> BallAnnotation:
    return BallAnnotation(
        center_px=tuple(data["center"]),
        ground_px=tuple(data["ground"]) if "ground" in data else None,
        diameter_px=float(data["diameter"]) if "diameter" in data else None,
        visible=bool(data.get("visible", True)),
    )


def _detection_to_dict(det: Detection) -> dict:
    out = {"x": det.x, "y": det.y, "confidence": det.confidence}
    if det.diameter is not None:
        out["diameter"] = det.diameter
    return out


def manifest_to_dict(manifest: DatasetManifest) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "name": manifest.name,
        "metadata": dict(manifest.metadata),
        "cameras": {cid: camera_to_dict(cam) for cid, cam in manifest.cameras.items()},
        "images": [
            {
                "id": record.id,
                "path": record.path,
                "camera": record.camera_id,
                "annotation": (
                    _annotation_to_dict(record.annotation) if record.annotation else None
                ),
                "detections": (
                    [_detection_to_dict(d) for d in record.detections]
                    if record.detections is not None
                    else None
                ),
            }
            for record in manifest.images
        ],
        "trajectories": [
            {
                "id": group.id,
                "images": list(group.image_ids),
                "timestamps": list(group.timestamps),
                **({"fps": group.fps} if group.fps is not None else {}),
            }
            for group in manifest.trajectories
        ],
    }


def manifest_from_dict(data: dict, root: Optional[Path] = None) -> DatasetManifest:
    problems: list[str] = []
    if data.get("schema") != SCHEMA_VERSION:
        problems.append(f"unsupported schema version {data.get('schema')!r}")
    cameras = {}
    for cid, cam in data.get("cameras", {}).items():
        try:
            cameras[cid] = camera_from_dict(cam)
        except (ValueError, TypeError) as exc:
            problems.append(f"camera {cid!r}: {exc}")
    images = []
    for i, entry in enumerate(data.get("images", [])):
        try:
            annotation = (
                _annotation_from_dict(entry["annotation"]) if entry.get("annotation") else None
            )
            detections = (
                tuple(
                    Detection(
                        x=float(d["x"]),
                        y=float(d["y"]),
                        confidence=float(d["confidence"]),
                        diameter=float(d["diameter"]) if "diameter" in d else None,
                    )
                    for d in entry["detections"]
                )
                if entry.get("detections") is not None
                else None
            )
            images.append(
                ImageRecord(
                    id=str(entry["id"]),
                    path=str(entry["path"]),
                    camera_id=str(entry["camera"]),
                    annotation=annotation,
                    detections=detections,
                )
            )
        except (KeyError, ValueError, TypeError) as exc:
            problems.append(f"images[{i}]: {exc}")
    trajectories = []
    for i, entry in enumerate(data.get("trajectories", [])):
        try:
            trajectories.append(
                TrajectoryGroup(
                    id=str(entry["id"]),
                    image_ids=tuple(str(s) for s in entry["images"]),
                    timestamps=tuple(float(t) for t in entry["timestamps"]),
                    fps=float(entry["fps"]) if "fps" in entry else None,
                )
            )
        except (KeyError, ValueError, TypeError) as exc:
            problems.append(f"trajectories[{i}]: {exc}")
    manifest = DatasetManifest(
        name=str(data.get("name", "")),
        cameras=cameras,
        images=tuple(images),
        trajectories=tuple(trajectories),
        metadata={str(k): str(v) for k, v in data.get("metadata", {}).items()},
        root=root,
    )
    problems.extend(_validate(manifest))
    if problems:
        raise ManifestError(problems)
    return manifest


def load_manifest(path: str | Path) -> DatasetManifest:
    """Load and fully validate a manifest; all problems reported together."""
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ManifestError([f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}"])
    return manifest_from_dict(data, root=path.parent)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest_to_dict(manifest), fh, indent=2, sort_keys=True)
        fh.write("\n")


def resolve_annotation(
    record: ImageRecord, camera: CalibratedCamera, phi: float
) -> tuple[WorldPoint, PixelBall]:
    """Turn an annotation into a 3D position plus the implied pixel ball.

    Dispatches on the annotation form: center+projection goes through the
    vertical-line construction, center+diameter through the diameter
    relation.
    """
    ann = record.annotation
    if ann is None:
        raise ValueError(f"image {record.id!r} has no annotation")
    try:
        if ann.ground_px is not None:
            point = localize_from_projection(camera, ann.center_px, ann.ground_px).point
            return point, project_ball(camera, point, phi)
        ball = PixelBall(ann.center_px[0], ann.center_px[1], ann.diameter_px)
        return localize_from_diameter(camera, ball, phi), ball
    except GeometryError as exc:
        raise GeometryError(f"image {record.id!r}: {exc}") from exc


# ---------------------------------------------------------------------------
# Synthetic dataset generation


@dataclass(frozen=True)
class SceneSpec:
    """Everything the synthesizer needs, with desk-scale defaults."""

    name: str = "synthetic"
    width: int = 1280
    height: int = 720
    fx: float = 1200.0
    fy: float = 1200.0
    skew: float = 0.0
    radial: tuple[float, float, float] = (0.0, 0.0, 0.0)
    tangential: tuple[float, float] = (0.0, 0.0)
    camera_position: tuple[float, float, float] = (14.0, -9.0, 5.0)
    look_at: tuple[float, float, float] = (14.0, 7.5, 1.5)
    trajectory_count: int = 3
    samples_per_trajectory: int = 8
    fps: float = 25.0
    phi: float = 0.24
    ball_size_range_px: tuple[float, float] = (14.0, 37.0)
    speed_max: float = 5.0
    vertical_speed_range: tuple[float, float] = (2.0, 5.0)
    heatmap_noise_sigma: float = 0.0
    occluder_probability: float = 0.0
    annotation_form: str = "projection"  # or "diameter"
    candidates_per_image: int = 1
    detector_noise_px: float = 0.0

    @classmethod
    def from_dict(cls, data: dict) -> "SceneSpec":
        known = {f: data[f] for f in data if f in cls.__dataclass_fields__}
        unknown = set(data) - set(known)
        if unknown:
            raise ValueError(f"unknown scene spec fields: {', '.join(sorted(unknown))}")
        for name in ("radial", "tangential", "camera_position", "look_at",
                     "ball_size_range_px", "vertical_speed_range"):
            if name in known:
                known[name] = tuple(known[name])
        return cls(**known)


def _spec_camera(spec: SceneSpec) -> CalibratedCamera:
    intr = CameraIntrinsics(
        fx=spec.fx,
        fy=spec.fy,
        skew=spec.skew,
        px=spec.width / 2.0,
        py=spec.height / 2.0,
        distortion=DistortionCoefficients(radial=spec.radial, tangential=spec.tangential),
    )
    pose = CameraPose(
        rotation=rotation_look_at(spec.camera_position, spec.look_at),
        center=np.array(spec.camera_position),
    )
    return CalibratedCamera(intrinsics=intr, pose=pose, width=spec.width, height=spec.height)


def _sample_trajectory(
    spec: SceneSpec, camera: CalibratedCamera, rng: np.random.Generator
) -> BallisticTrajectory:
    """Draw a launch so the projected ball stays inside the target size range.

    The start point is picked in image space at a depth compatible with the
    requested apparent-diameter range and back-projected to the world.
    """
    d_lo, d_hi = spec.ball_size_range_px
    z_lo = spec.phi * spec.fy / d_hi
    z_hi = spec.phi * spec.fy / d_lo
    rot_t = camera.pose.rotation.T
    for _ in range(200):
        u = rng.uniform(0.3 * spec.width, 0.7 * spec.width)
        v = rng.uniform(0.35 * spec.height, 0.65 * spec.height)
        depth = rng.uniform(z_lo * 1.12, z_hi * 0.88)
        x, y = camera.intrinsics.normalized(u, v)
        p0 = camera.pose.center + rot_t @ (depth * np.array([x, y, 1.0]))
        if p0[2] < 0.3:  # launch below the floor: try again
            continue
        v0 = np.array(
            [
                rng.uniform(-spec.speed_max, spec.speed_max),
                rng.uniform(-spec.speed_max, spec.speed_max),
                rng.uniform(*spec.vertical_speed_range),
            ]
        )
        traj = BallisticTrajectory(p0=p0, v0=v0)
        times = np.arange(spec.samples_per_trajectory) / spec.fps
        ok = True
        for t in times:
            p = ballistic.evaluate(traj, float(t))
            try:
                ball = project_ball(camera, p, spec.phi)
            except GeometryError:
                ok = False
                break
            if not (d_lo <= ball.d <= d_hi):
                ok = False
                break
        if ok:
            return traj
    raise RuntimeError("could not sample a trajectory satisfying the scene spec")


def synthesize_dataset(
    spec: SceneSpec, seed: int, out_dir: str | Path
) -> DatasetManifest:
    """Generate a seeded synthetic dataset: manifest + rendered heatmaps.

    Every image of every trajectory is emitted; a ball that leaves the
    frame marks its image ball-absent (no annotation, empty heatmap) rather
    than dropping it.
    """
    out_dir = Path(out_dir)
    heatmap_dir = out_dir / "heatmaps"
    heatmap_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    camera = _spec_camera(spec)
    cam_id = "cam0"
    images: list[ImageRecord] = []
    groups: list[TrajectoryGroup] = []
    for ti in range(spec.trajectory_count):
        traj = _sample_trajectory(spec, camera, rng)
        times = np.arange(spec.samples_per_trajectory) / spec.fps
        image_ids = []
        for fi, t in enumerate(times):
            image_id = f"{spec.name}-t{ti:02d}-f{fi:02d}"
            image_ids.append(image_id)
            position = ballistic.evaluate(traj, float(t))
            heatmap = np.zeros((spec.height, spec.width))
            annotation = None
            detections: list[Detection] = []
            visible = False
            ball = None
            try:
                ball = project_ball(camera, position, spec.phi)
                visible = camera.contains_pixel(ball.bx, ball.by)
            except GeometryError:
                visible = False
            if visible:
                heatmap = render_disc(
                    (spec.height, spec.width), (ball.bx, ball.by), ball.d
                )
                if spec.occluder_probability > 0 and rng.uniform() < spec.occluder_probability:
                    ow = rng.integers(4, max(5, int(ball.d)))
                    oh = rng.integers(4, max(5, int(ball.d)))
                    oy = int(ball.by - oh // 2)
                    ox = int(ball.bx + rng.integers(-int(ball.d), 1))
                    heatmap[max(0, oy) : oy + oh, max(0, ox) : ox + ow] = 0.0
                if spec.annotation_form == "projection":
                    ground = project_pixel(camera, np.array([position.x, position.y, 0.0]))
                    annotation = BallAnnotation(
                        center_px=(ball.bx, ball.by), ground_px=(ground[0], ground[1])
                    )
                else:
                    annotation = BallAnnotation(center_px=(ball.bx, ball.by), diameter_px=ball.d)
                if spec.candidates_per_image >= 1:
                    jitter = (
                        rng.normal(scale=spec.detector_noise_px, size=2)
                        if spec.detector_noise_px > 0
                        else np.zeros(2)
                    )
                    detections.append(
                        Detection(
                            x=float(ball.bx + jitter[0]),
                            y=float(ball.by + jitter[1]),
                            confidence=float(rng.uniform(0.8, 0.99)),
                            diameter=None,
                        )
                    )
            # Decoy candidates, kept away from the true ball.
            n_decoys = spec.candidates_per_image - (1 if visible else 0)
            for _ in range(max(0, n_decoys)):
                for _attempt in range(50):
                    dx = float(rng.uniform(0.1 * spec.width, 0.9 * spec.width))
                    dy = float(rng.uniform(0.1 * spec.height, 0.9 * spec.height))
                    if ball is None or math.hypot(dx - ball.bx, dy - ball.by) > 3 * ball.d:
                        break
                detections.append(
                    Detection(x=dx, y=dy, confidence=float(rng.uniform(0.1, 0.7)), diameter=None)
                )
            if spec.heatmap_noise_sigma > 0:
                heatmap = np.clip(
                    heatmap + rng.normal(scale=spec.heatmap_noise_sigma, size=heatmap.shape),
                    0.0,
                    255.0,
                )
            rel_path = f"heatmaps/{image_id}.png"
            save_heatmap(heatmap, out_dir / rel_path)
            images.append(
                ImageRecord(
                    id=image_id,
                    path=rel_path,
                    camera_id=cam_id,
                    annotation=annotation,
                    detections=tuple(detections) if detections else None,
                )
            )
        groups.append(
            TrajectoryGroup(
                id=f"traj{ti:02d}",
                image_ids=tuple(image_ids),
                timestamps=tuple(float(t) for t in times),
                fps=spec.fps,
            )
        )
    manifest = DatasetManifest(
        name=spec.name,
        cameras={cam_id: camera},
        images=tuple(images),
        trajectories=tuple(groups),
        metadata={"generator": "ball3d.synthesize", "seed": str(seed)},
        root=out_dir,
    )
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest
