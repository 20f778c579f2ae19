"""HTTP annotation service for the center+projection workflow.

Serves images and calibration, computes click guides (the vertical
projection locus and a court-aligned ground cross), stores annotations in
an append-only journal, fits the free-fall model to trajectories on demand,
and exports denoised annotations as a manifest fragment.

Endpoints (JSON unless noted):
  GET  /api/sequences
  GET  /api/images/{id}              metadata + current annotation
  GET  /api/images/{id}/data         image bytes, strong ETag
  POST /api/images/{id}/guides       {center: [x, y]} -> locus + ground cross
  PUT  /api/images/{id}/annotation   {center, ground} -> implied 3D + diameter
  POST /api/trajectories/{id}/fit
  GET  /api/trajectories/{id}/export manifest fragment with denoised positions

Errors use {code, message, detail} with conventional status classes.
Writes are serialized per image id; reads never mutate state.
"""

from __future__ import annotations

import hashlib
import json
import threading
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from . import ballistic
from .ballistic import TimedObservation
from .data import (
    BallAnnotation,
    DatasetManifest,
    ImageRecord,
    TrajectoryGroup,
    manifest_to_dict,
    resolve_annotation,
)
from .geometry import (
    DEFAULT_BALL_DIAMETER_M,
    GeometryError,
    WorldPoint,
    intersect_ray_with_floor,
    localize_from_projection,
    project_ball,
    project_pixel,
    projection_locus,
)

__all__ = ["AnnotationStore", "AnnotationSession", "StoredAnnotation", "create_app"]

DEFAULT_LOCUS_HEIGHTS = 256
DEFAULT_MAX_HEIGHT = 5.0
CROSS_ARM_M = 0.5  # two 1 m segments through the floor point


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, detail: Optional[str] = None):
        self.status = status
        self.code = code
        self.message = message
        self.detail = detail
        super().__init__(message)


@dataclass(frozen=True)
class StoredAnnotation:
    center_px: tuple[float, float]
    ground_px: tuple[float, float]
    revision: int

    def to_annotation(self) -> BallAnnotation:
        return BallAnnotation(center_px=self.center_px, ground_px=self.ground_px)


class AnnotationStore:
    """Annotation state backed by an append-only JSON-lines journal.

    Each accepted write appends one line {seq, image_id, center, ground,
    revision}; replaying the journal reproduces the exact store state.
    Every ``snapshot_every`` writes the full state is also written to a
    sidecar snapshot so reopening large journals stays cheap. The journal
    itself is never truncated.
    """

    def __init__(self, journal_path: str | Path, snapshot_every: int = 100):
        self.journal_path = Path(journal_path)
        self.snapshot_path = self.journal_path.with_suffix(self.journal_path.suffix + ".snapshot")
        self.snapshot_every = snapshot_every
        self._annotations: dict[str, StoredAnnotation] = {}
        self._seq = 0
        self._io_lock = threading.Lock()
        self._image_locks: dict[str, threading.Lock] = defaultdict(threading.Lock)
        self._locks_guard = threading.Lock()
        self._replay()

    def _replay(self) -> None:
        if self.snapshot_path.exists():
            snap = json.loads(self.snapshot_path.read_text(encoding="utf-8"))
            self._seq = int(snap["seq"])
            self._annotations = {
                image_id: StoredAnnotation(
                    center_px=tuple(entry["center"]),
                    ground_px=tuple(entry["ground"]),
                    revision=int(entry["revision"]),
                )
                for image_id, entry in snap["annotations"].items()
            }
        if not self.journal_path.exists():
            return
        with open(self.journal_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                entry = json.loads(line)
                if int(entry["seq"]) <= self._seq:
                    continue  # already covered by the snapshot
                self._seq = int(entry["seq"])
                self._annotations[str(entry["image_id"])] = StoredAnnotation(
                    center_px=tuple(entry["center"]),
                    ground_px=tuple(entry["ground"]),
                    revision=int(entry["revision"]),
                )

    def lock_for(self, image_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._image_locks[image_id]

    def get(self, image_id: str) -> Optional[StoredAnnotation]:
        return self._annotations.get(image_id)

    def revision(self, image_id: str) -> int:
        stored = self._annotations.get(image_id)
        return stored.revision if stored is not None else 0

    def put(
        self, image_id: str, center_px: tuple[float, float], ground_px: tuple[float, float]
    ) -> StoredAnnotation:
        """Persist one annotation; returns it with its new revision."""
        with self.lock_for(image_id):
            revision = self.revision(image_id) + 1
            stored = StoredAnnotation(
                center_px=(float(center_px[0]), float(center_px[1])),
                ground_px=(float(ground_px[0]), float(ground_px[1])),
                revision=revision,
            )
            with self._io_lock:
                self._seq += 1
                entry = {
                    "seq": self._seq,
                    "image_id": image_id,
                    "center": list(stored.center_px),
                    "ground": list(stored.ground_px),
                    "revision": revision,
                }
                self.journal_path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.journal_path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(entry, sort_keys=True))
                    fh.write("\n")
                self._annotations[image_id] = stored
                if self._seq % self.snapshot_every == 0:
                    self._write_snapshot()
            return stored

    def _write_snapshot(self) -> None:
        snap = {
            "seq": self._seq,
            "annotations": {
                image_id: {
                    "center": list(s.center_px),
                    "ground": list(s.ground_px),
                    "revision": s.revision,
                }
                for image_id, s in self._annotations.items()
            },
        }
        tmp = self.snapshot_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(snap, sort_keys=True), encoding="utf-8")
        tmp.replace(self.snapshot_path)

    def state(self) -> dict[str, StoredAnnotation]:
        return dict(self._annotations)


class AnnotationSession:
    """One open manifest plus its mutable annotation store."""

    def __init__(
        self,
        manifest: DatasetManifest,
        store: AnnotationStore,
        phi: float = DEFAULT_BALL_DIAMETER_M,
        max_height: float = DEFAULT_MAX_HEIGHT,
        locus_samples: int = DEFAULT_LOCUS_HEIGHTS,
    ):
        self.manifest = manifest
        self.store = store
        self.phi = phi
        self.max_height = max_height
        self.locus_samples = locus_samples

    def record(self, image_id: str) -> ImageRecord:
        try:
            return self.manifest.image(image_id)
        except KeyError:
            raise ApiError(404, "unknown_image", f"unknown image id {image_id!r}")

    def effective_annotation(self, record: ImageRecord) -> Optional[BallAnnotation]:
        """Store overrides the manifest; the manifest seeds the session."""
        stored = self.store.get(record.id)
        if stored is not None:
            return stored.to_annotation()
        return record.annotation

    def annotated_observations(
        self, trajectory_id: str
    ) -> tuple[list[str], list[TimedObservation]]:
        try:
            group = self.manifest.trajectory(trajectory_id)
        except KeyError:
            raise ApiError(404, "unknown_trajectory", f"unknown trajectory id {trajectory_id!r}")
        ids, observations = [], []
        for image_id, t in zip(group.image_ids, group.timestamps):
            record = self.manifest.image(image_id)
            annotation = self.effective_annotation(record)
            if annotation is None:
                continue
            camera = self.manifest.camera_for(record)
            point, _ = resolve_annotation(
                ImageRecord(
                    id=record.id,
                    path=record.path,
                    camera_id=record.camera_id,
                    annotation=annotation,
                ),
                camera,
                self.phi,
            )
            ids.append(image_id)
            observations.append(TimedObservation(t=t, position=point))
        return ids, observations


# ---------------------------------------------------------------------------
# request bodies


class GuidesRequest(BaseModel):
    center: tuple[float, float]
    samples: Optional[int] = None


class AnnotationPut(BaseModel):
    center: tuple[float, float]
    ground: tuple[float, float]


# ---------------------------------------------------------------------------
# app factory


def create_app(
    manifest: DatasetManifest,
    store_path: Optional[str | Path] = None,
    ui_dir: Optional[str | Path] = None,
    phi: float = DEFAULT_BALL_DIAMETER_M,
) -> FastAPI:
    if store_path is None:
        base = manifest.root if manifest.root is not None else Path.cwd()
        store_path = Path(base) / "annotations.journal.jsonl"
    session = AnnotationSession(manifest, AnnotationStore(store_path), phi=phi)
    app = FastAPI(title="ball3d annotation service")

    @app.exception_handler(ApiError)
    async def handle_api_error(request: Request, exc: ApiError):
        return JSONResponse(
            status_code=exc.status,
            content={"code": exc.code, "message": exc.message, "detail": exc.detail},
        )

    @app.exception_handler(GeometryError)
    async def handle_geometry_error(request: Request, exc: GeometryError):
        return JSONResponse(
            status_code=422,
            content={"code": "geometry_error", "message": str(exc), "detail": None},
        )

    def annotation_body(record: ImageRecord) -> Optional[dict]:
        annotation = session.effective_annotation(record)
        if annotation is None:
            return None
        body: dict = {"center": list(annotation.center_px), "visible": annotation.visible}
        if annotation.ground_px is not None:
            body["ground"] = list(annotation.ground_px)
        else:
            body["diameter"] = annotation.diameter_px
        return body

    @app.get("/api/sequences")
    def list_sequences():
        out = []
        for group in manifest.trajectories:
            annotated = sum(
                1
                for image_id in group.image_ids
                if session.effective_annotation(manifest.image(image_id)) is not None
            )
            out.append(
                {
                    "id": group.id,
                    "image_count": len(group.image_ids),
                    "annotated": annotated,
                    "completeness": annotated / len(group.image_ids) if group.image_ids else 0.0,
                    "images": list(group.image_ids),
                    "timestamps": list(group.timestamps),
                }
            )
        return out

    @app.get("/api/images/{image_id}")
    def image_metadata(image_id: str):
        record = session.record(image_id)
        camera = manifest.camera_for(record)
        return {
            "id": record.id,
            "camera_id": record.camera_id,
            "width": camera.width,
            "height": camera.height,
            "annotation": annotation_body(record),
            "revision": session.store.revision(record.id),
        }

    @app.get("/api/images/{image_id}/data")
    def image_data(image_id: str, request: Request):
        record = session.record(image_id)
        path = manifest.image_path(record)
        if not path.exists():
            raise ApiError(404, "missing_image_file", f"no image file at {path}")
        payload = path.read_bytes()
        etag = '"' + hashlib.sha256(payload).hexdigest()[:32] + '"'
        if request.headers.get("if-none-match") == etag:
            return Response(status_code=304, headers={"ETag": etag})
        media = "image/png" if path.suffix.lower() == ".png" else "application/octet-stream"
        return Response(
            content=payload,
            media_type=media,
            headers={"ETag": etag, "Cache-Control": "max-age=31536000, immutable"},
        )

    @app.post("/api/images/{image_id}/guides")
    def guides(image_id: str, body: GuidesRequest):
        record = session.record(image_id)
        camera = manifest.camera_for(record)
        if not camera.contains_pixel(*body.center):
            raise ApiError(
                422,
                "out_of_bounds",
                f"center pixel {body.center} outside {camera.width}x{camera.height}",
            )
        samples = body.samples or session.locus_samples
        heights = np.linspace(0.0, session.max_height, samples)
        locus = projection_locus(camera, body.center, heights)
        floor = intersect_ray_with_floor(camera, body.center)
        cross = []
        for axis in (np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])):
            ends = [floor - CROSS_ARM_M * axis, floor + CROSS_ARM_M * axis]
            pts = np.linspace(ends[0], ends[1], 9)
            segment = [project_pixel(camera, p).tolist() for p in pts]
            cross.append(segment)
        return {
            "locus": locus.pixels.tolist(),
            "heights": locus.heights.tolist(),
            "cross": cross,
            "floor_point": floor.tolist(),
        }

    @app.put("/api/images/{image_id}/annotation")
    def put_annotation(image_id: str, body: AnnotationPut):
        record = session.record(image_id)
        camera = manifest.camera_for(record)
        for label, (x, y) in (("center", body.center), ("ground", body.ground)):
            if not camera.contains_pixel(x, y):
                raise ApiError(
                    422,
                    "out_of_bounds",
                    f"{label} pixel ({x}, {y}) outside {camera.width}x{camera.height}",
                )
        # Validate the geometry before touching the store.
        fix = localize_from_projection(camera, body.center, body.ground)
        implied = project_ball(camera, fix.point, session.phi)
        stored = session.store.put(image_id, body.center, body.ground)
        return {
            "revision": stored.revision,
            "position": [fix.point.x, fix.point.y, fix.point.z],
            "diameter_px": implied.d,
            "gap_m": fix.gap_m,
            "warning": fix.warning,
        }

    @app.post("/api/trajectories/{trajectory_id}/fit")
    def fit_trajectory(trajectory_id: str):
        ids, observations = session.annotated_observations(trajectory_id)
        try:
            result = ballistic.fit(observations)
        except ballistic.FitError as exc:
            raise ApiError(409, "fit_failed", str(exc))
        flags = ballistic.flag_outliers(result)
        group = manifest.trajectory(trajectory_id)
        t_lo, t_hi = min(group.timestamps), max(group.timestamps)
        curve_times = np.linspace(t_lo, t_hi, 64)
        curve_points = ballistic.positions(result.trajectory, curve_times)
        overlays = {}
        for image_id in ids:
            record = manifest.image(image_id)
            camera = manifest.camera_for(record)
            polyline = []
            for p in curve_points:
                try:
                    polyline.append(project_pixel(camera, p).tolist())
                except GeometryError:
                    continue
            overlays[image_id] = polyline
        return {
            "trajectory_id": trajectory_id,
            "image_ids": ids,
            "p0": result.trajectory.p0.tolist(),
            "v0": result.trajectory.v0.tolist(),
            "g": result.trajectory.g,
            "rms": result.rms,
            "residuals": {
                image_id: res.tolist() for image_id, res in zip(ids, result.residuals)
            },
            "residual_norms": {
                image_id: float(np.linalg.norm(res))
                for image_id, res in zip(ids, result.residuals)
            },
            "outliers": [image_id for image_id, flagged in zip(ids, flags) if flagged],
            "denoised": {
                image_id: pos.tolist() for image_id, pos in zip(ids, result.denoised)
            },
            "overlay": overlays,
        }

    @app.get("/api/trajectories/{trajectory_id}/export")
    def export_trajectory(trajectory_id: str):
        ids, observations = session.annotated_observations(trajectory_id)
        try:
            result = ballistic.fit(observations)
        except ballistic.FitError as exc:
            raise ApiError(409, "fit_failed", str(exc))
        group = manifest.trajectory(trajectory_id)
        records = []
        id_set = set(ids)
        for image_id, denoised in zip(ids, result.denoised):
            record = manifest.image(image_id)
            camera = manifest.camera_for(record)
            ball = project_ball(camera, WorldPoint.from_array(denoised), session.phi)
            records.append(
                ImageRecord(
                    id=record.id,
                    path=record.path,
                    camera_id=record.camera_id,
                    annotation=BallAnnotation(
                        center_px=(ball.bx, ball.by), diameter_px=ball.d
                    ),
                )
            )
        fragment = DatasetManifest(
            name=f"{manifest.name}-{trajectory_id}-denoised",
            cameras={
                cid: cam
                for cid, cam in manifest.cameras.items()
                if any(manifest.image(i).camera_id == cid for i in ids)
            },
            images=tuple(records),
            trajectories=(
                TrajectoryGroup(
                    id=group.id,
                    image_ids=tuple(i for i in group.image_ids if i in id_set),
                    timestamps=tuple(
                        t for i, t in zip(group.image_ids, group.timestamps) if i in id_set
                    ),
                    fps=group.fps,
                ),
            ),
            metadata={"exported_from": manifest.name, "trajectory": trajectory_id},
        )
        return manifest_to_dict(fragment)

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
