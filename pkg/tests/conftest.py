from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from instaflow.scene import (
    Box3D,
    Camera,
    CameraIntrinsics,
    Frame,
    RigidPose,
    SceneSequence,
    TrackedInstanceFrame,
)

# torch warm-up makes first-example timings meaningless
settings.register_profile("default", deadline=None)
settings.load_profile("default")

ACCEPTANCE_RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)


def pinhole(width=64, height=64, f=50.0, cx=None, cy=None) -> CameraIntrinsics:
    return CameraIntrinsics(f, f, width / 2 if cx is None else cx, height / 2 if cy is None else cy, width, height)


def identity_camera(k: CameraIntrinsics | None = None) -> Camera:
    return Camera(RigidPose.identity(), k or pinhole())


def inst(track_id, center, size=(2.0, 2.0, 2.0), yaw=0.0, class_id=0, visible=True) -> TrackedInstanceFrame:
    return TrackedInstanceFrame(track_id, Box3D(center, size, yaw, class_id, track_id), visible)


def scene_of(frames_instances, camera: Camera | None = None, prompt="test") -> SceneSequence:
    cam = camera or identity_camera()
    return SceneSequence(
        tuple(Frame(RigidPose.identity(), (cam,), tuple(insts), prompt) for insts in frames_instances)
    )


def track_scene(visibility, xs=None, camera=None) -> SceneSequence:
    """One track (id 1) with the given visibility bits and x positions."""
    xs = xs if xs is not None else [float(t) for t in range(len(visibility))]
    return scene_of([[inst(1, (xs[t], 0.0, 10.0), visible=bool(v))] for t, v in enumerate(visibility)], camera)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
