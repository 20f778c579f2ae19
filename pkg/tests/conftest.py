import numpy as np
import pytest

from ball3d.geometry import (
    CalibratedCamera,
    CameraIntrinsics,
    CameraPose,
    DistortionCoefficients,
    rotation_look_at,
)


def make_camera(
    fx=1700.0,
    fy=1700.0,
    skew=0.0,
    width=1920,
    height=1080,
    position=(14.0, -12.0, 6.0),
    target=(14.0, 7.5, 1.5),
    radial=(0.0, 0.0, 0.0),
    tangential=(0.0, 0.0),
):
    """Basketball-scale side camera used across the suites."""
    intr = CameraIntrinsics(
        fx=fx,
        fy=fy,
        skew=skew,
        px=width / 2.0,
        py=height / 2.0,
        distortion=DistortionCoefficients(radial=radial, tangential=tangential),
    )
    pose = CameraPose(rotation=rotation_look_at(position, target), center=np.array(position))
    return CalibratedCamera(intrinsics=intr, pose=pose, width=width, height=height)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def random_camera(rng, distorted=False):
    """Random pose/intrinsics fixture for round-trip property tests."""
    fx = rng.uniform(800.0, 3000.0)
    fy = rng.uniform(800.0, 3000.0)
    radial = (0.0, 0.0, 0.0)
    tangential = (0.0, 0.0)
    if distorted:
        radial = (rng.uniform(-0.25, 0.25), rng.uniform(-0.04, 0.04), rng.uniform(-0.002, 0.002))
        tangential = (rng.uniform(-0.005, 0.005), rng.uniform(-0.005, 0.005))
    intr = CameraIntrinsics(
        fx=fx,
        fy=fy,
        skew=rng.uniform(0.0, 2.0),
        px=rng.uniform(900.0, 1020.0),
        py=rng.uniform(500.0, 580.0),
        distortion=DistortionCoefficients(radial=radial, tangential=tangential),
    )
    pose = CameraPose(rotation=random_rotation(rng), center=rng.uniform(-20.0, 20.0, size=3))
    return CalibratedCamera(intrinsics=intr, pose=pose, width=1920, height=1080)


def random_ball_in_front(rng, camera, max_norm=0.35):
    """A world point in front of the camera, within a frame-like cone."""
    from ball3d.geometry import WorldPoint

    direction = np.array([rng.uniform(-max_norm, max_norm), rng.uniform(-max_norm, max_norm), 1.0])
    depth = rng.uniform(4.0, 40.0)
    p = camera.pose.center + camera.pose.rotation.T @ (depth * direction)
    return WorldPoint.from_array(p)


@pytest.fixture
def court_camera():
    return make_camera()
