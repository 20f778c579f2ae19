import json
import threading

import numpy as np
import pytest
from fastapi.testclient import TestClient

from ball3d.data import (
    DatasetManifest,
    SceneSpec,
    load_manifest,
    manifest_from_dict,
    resolve_annotation,
    synthesize_dataset,
)
from ball3d.geometry import project_pixel
from ball3d.service import AnnotationStore, create_app


@pytest.fixture()
def dataset(tmp_path):
    spec = SceneSpec(trajectory_count=2, samples_per_trajectory=5)
    manifest = synthesize_dataset(spec, seed=33, out_dir=tmp_path / "ds")
    return manifest


@pytest.fixture()
def client(dataset, tmp_path):
    app = create_app(dataset, store_path=tmp_path / "store.jsonl")
    with TestClient(app) as client:
        yield client


def truth_for(manifest, image_id, phi=0.24):
    record = manifest.image(image_id)
    camera = manifest.camera_for(record)
    return resolve_annotation(record, camera, phi)


# ---------------------------------------------------------------------------
# sequences


def test_sequences_lists_trajectories_with_completeness(client, dataset):
    body = client.get("/api/sequences").json()
    assert len(body) == 2
    for entry in body:
        assert entry["image_count"] == 5
        assert 0.0 <= entry["completeness"] <= 1.0
        assert entry["annotated"] == sum(
            1 for i in entry["images"] if dataset.image(i).annotation is not None
        )


def test_sequences_empty_manifest(tmp_path):
    manifest = DatasetManifest(name="empty", cameras={}, images=(), root=tmp_path)
    app = create_app(manifest, store_path=tmp_path / "s.jsonl")
    with TestClient(app) as client:
        assert client.get("/api/sequences").json() == []


# ---------------------------------------------------------------------------
# image metadata and bytes


def test_image_metadata_and_404(client, dataset):
    image_id = dataset.images[0].id
    body = client.get(f"/api/images/{image_id}").json()
    assert body["id"] == image_id
    assert body["revision"] == 0
    assert body["width"] == 1280 and body["height"] == 720
    missing = client.get("/api/images/ghost")
    assert missing.status_code == 404
    assert missing.json()["code"] == "unknown_image"


def test_image_bytes_with_etag_and_304(client, dataset):
    image_id = dataset.images[0].id
    first = client.get(f"/api/images/{image_id}/data")
    assert first.status_code == 200
    assert first.headers["content-type"] == "image/png"
    etag = first.headers["etag"]
    again = client.get(f"/api/images/{image_id}/data", headers={"If-None-Match": etag})
    assert again.status_code == 304


# ---------------------------------------------------------------------------
# guides


def annotated_image(dataset):
    return next(r for r in dataset.images if r.annotation is not None)


def test_guides_locus_starts_at_center_for_floor_ball(client, dataset):
    record = annotated_image(dataset)
    camera = dataset.camera_for(record)
    floor_px = project_pixel(camera, np.array([14.0, 7.0, 0.0]))
    body = client.post(
        f"/api/images/{record.id}/guides", json={"center": [floor_px[0], floor_px[1]]}
    ).json()
    assert np.allclose(body["locus"][0], floor_px, atol=1e-6)
    assert body["heights"][0] == 0.0


def test_guides_differ_for_moved_center(client, dataset):
    record = annotated_image(dataset)
    a = client.post(f"/api/images/{record.id}/guides", json={"center": [600.0, 360.0]}).json()
    b = client.post(f"/api/images/{record.id}/guides", json={"center": [640.0, 360.0]}).json()
    assert a["locus"] != b["locus"]
    assert a["cross"] != b["cross"]


def test_guides_cross_reprojects_onto_floor(client, dataset):
    from ball3d.geometry import intersect_ray_with_floor

    record = annotated_image(dataset)
    camera = dataset.camera_for(record)
    body = client.post(f"/api/images/{record.id}/guides", json={"center": [640.0, 360.0]}).json()
    floor = np.array(body["floor_point"])
    assert floor[2] == 0.0
    for segment in body["cross"]:
        for px in segment:
            hit = intersect_ray_with_floor(camera, px)
            assert abs(hit[2]) < 1e-9
            # Cross arms are 0.5 m long around the floor point.
            assert np.linalg.norm(hit - floor) < 0.5 + 1e-6


def test_guides_out_of_bounds_center(client, dataset):
    record = annotated_image(dataset)
    resp = client.post(f"/api/images/{record.id}/guides", json={"center": [-5.0, 10.0]})
    assert resp.status_code == 422
    assert resp.json()["code"] == "out_of_bounds"


# ---------------------------------------------------------------------------
# annotation writes


def test_put_annotation_roundtrips_truth(client, dataset):
    record = annotated_image(dataset)
    truth, _ = truth_for(dataset, record.id)
    ann = record.annotation
    body = client.put(
        f"/api/images/{record.id}/annotation",
        json={"center": list(ann.center_px), "ground": list(ann.ground_px)},
    ).json()
    assert body["revision"] == 1
    assert np.linalg.norm(np.array(body["position"]) - truth.as_array()) < 1e-6
    assert body["warning"] is None
    # Metadata now reflects the stored annotation.
    meta = client.get(f"/api/images/{record.id}").json()
    assert meta["revision"] == 1
    assert meta["annotation"]["center"] == list(ann.center_px)


def test_put_annotation_out_of_bounds_does_not_mutate(client, dataset):
    record = annotated_image(dataset)
    before = client.get(f"/api/images/{record.id}").json()["revision"]
    resp = client.put(
        f"/api/images/{record.id}/annotation",
        json={"center": [99999.0, 10.0], "ground": [10.0, 10.0]},
    )
    assert resp.status_code == 422
    after = client.get(f"/api/images/{record.id}").json()["revision"]
    assert after == before


def test_put_annotation_bumps_revision(client, dataset):
    record = annotated_image(dataset)
    ann = record.annotation
    payload = {"center": list(ann.center_px), "ground": list(ann.ground_px)}
    r1 = client.put(f"/api/images/{record.id}/annotation", json=payload).json()
    r2 = client.put(f"/api/images/{record.id}/annotation", json=payload).json()
    assert (r1["revision"], r2["revision"]) == (1, 2)


# ---------------------------------------------------------------------------
# fit and export


def test_fit_trajectory_reports_residuals_and_overlay(client, dataset):
    from ball3d.ballistic import BallisticTrajectory, positions

    group = dataset.trajectories[0]
    body = client.post(f"/api/trajectories/{group.id}/fit").json()
    assert body["rms"] < 1e-6
    assert body["outliers"] == []
    assert set(body["residuals"]) == set(body["image_ids"])
    # Every overlay polyline point is the projection of the fitted model
    # sampled on the trajectory's time span.
    fitted = BallisticTrajectory(p0=body["p0"], v0=body["v0"], g=body["g"])
    times = np.linspace(min(group.timestamps), max(group.timestamps), 64)
    curve = positions(fitted, times)
    for image_id in body["image_ids"]:
        overlay = np.array(body["overlay"][image_id])
        assert len(overlay) == 64
        record = dataset.image(image_id)
        camera = dataset.camera_for(record)
        expected = np.array([project_pixel(camera, p) for p in curve])
        assert np.max(np.linalg.norm(overlay - expected, axis=1)) < 1e-6


def test_fit_rank_deficiency_is_structured_error(client, dataset, tmp_path):
    # A store with all-but-one annotation missing cannot support a fit; build
    # a manifest whose trajectory has a single annotated image.
    data = json.loads(json.dumps({
        "schema": 1, "name": "tiny", "metadata": {},
        "cameras": {"cam0": {
            "fx": 1000.0, "fy": 1000.0, "skew": 0.0, "px": 640.0, "py": 360.0,
            "radial": [0, 0, 0], "tangential": [0, 0],
            "R": [[1, 0, 0], [0, 0, -1], [0, 1, 0]], "c": [0, 0, 2.0],
            "width": 1280, "height": 720,
        }},
        "images": [
            {"id": "a", "path": "a.png", "camera": "cam0",
             "annotation": {"center": [640.0, 300.0], "diameter": 20.0, "visible": True},
             "detections": None},
            {"id": "b", "path": "b.png", "camera": "cam0", "annotation": None,
             "detections": None},
        ],
        "trajectories": [{"id": "t", "images": ["a", "b"], "timestamps": [0.0, 0.04]}],
    }))
    manifest = manifest_from_dict(data, root=tmp_path)
    app = create_app(manifest, store_path=tmp_path / "s.jsonl")
    with TestClient(app) as c:
        resp = c.post("/api/trajectories/t/fit")
        assert resp.status_code == 409
        assert resp.json()["code"] == "fit_failed"


def test_export_noiseless_equals_generator_and_roundtrips(client, dataset, tmp_path):
    group = dataset.trajectories[0]
    body = client.get(f"/api/trajectories/{group.id}/export").json()
    again = client.get(f"/api/trajectories/{group.id}/export").json()
    assert body == again  # idempotent
    path = tmp_path / "export.json"
    path.write_text(json.dumps(body))
    fragment = load_manifest(path)
    assert fragment.metadata["trajectory"] == group.id
    for record in fragment.images:
        camera = fragment.cameras[record.camera_id]
        point, _ = resolve_annotation(record, camera, phi=0.24)
        truth, _ = truth_for(dataset, record.id)
        assert np.linalg.norm(point.as_array() - truth.as_array()) < 1e-6


# ---------------------------------------------------------------------------
# store semantics


def test_store_journal_replay_reproduces_state(tmp_path):
    store = AnnotationStore(tmp_path / "j.jsonl", snapshot_every=3)
    store.put("a", (1.0, 2.0), (3.0, 4.0))
    store.put("b", (5.0, 6.0), (7.0, 8.0))
    store.put("a", (1.5, 2.5), (3.5, 4.5))
    store.put("c", (0.0, 0.0), (1.0, 1.0))
    reopened = AnnotationStore(tmp_path / "j.jsonl", snapshot_every=3)
    assert reopened.state() == store.state()
    assert reopened.revision("a") == 2
    assert reopened.revision("b") == 1
    # The journal is append-only: every accepted write is still there.
    lines = (tmp_path / "j.jsonl").read_text().strip().split("\n")
    assert len(lines) == 4


def test_store_concurrent_writes_serialize_per_image(tmp_path):
    store = AnnotationStore(tmp_path / "j.jsonl")
    image_ids = [f"img{i}" for i in range(8)]
    per_image_writes = 25

    def hammer(image_id, offset):
        for k in range(per_image_writes):
            store.put(image_id, (offset + k, 0.0), (offset + k, 1.0))

    threads = [
        threading.Thread(target=hammer, args=(image_id, 100.0 * i))
        for i, image_id in enumerate(image_ids)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for i, image_id in enumerate(image_ids):
        stored = store.get(image_id)
        assert stored.revision == per_image_writes
        # Last write for this image wins.
        assert stored.center_px == (100.0 * i + per_image_writes - 1, 0.0)
    replay = AnnotationStore(tmp_path / "j.jsonl")
    assert replay.state() == store.state()


def test_read_endpoints_are_side_effect_free(client, dataset):
    record = annotated_image(dataset)
    a = client.get(f"/api/images/{record.id}").json()
    b = client.get(f"/api/images/{record.id}").json()
    assert a == b
    s1 = client.get("/api/sequences").json()
    s2 = client.get("/api/sequences").json()
    assert s1 == s2


def test_static_ui_mount(tmp_path, dataset):
    ui = tmp_path / "dist"
    ui.mkdir()
    (ui / "index.html").write_text("<html><body>annotator</body></html>")
    app = create_app(dataset, store_path=tmp_path / "s.jsonl", ui_dir=ui)
    with TestClient(app) as client:
        page = client.get("/")
        assert page.status_code == 200
        assert "annotator" in page.text
        # API endpoints still take precedence over the static mount.
        assert client.get("/api/sequences").status_code == 200
