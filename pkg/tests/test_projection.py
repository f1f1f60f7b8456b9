import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from instaflow.projection import (
    BehindCameraError,
    CLASS_PALETTE,
    EPS_Z,
    camera_to_ego,
    camera_to_image,
    depth_order,
    ego_to_camera,
    ego_to_world,
    image_to_camera,
    in_image,
    project_box,
    rasterize_lanes,
    rasterize_layout,
    world_to_ego,
)
from instaflow.scene import Box3D, CameraIntrinsics, RigidPose, box_corners

from conftest import pinhole
from generators import random_layout_case
from oracles import layout_oracle, random_rotation

K = CameraIntrinsics(100, 100, 320, 180, 640, 360)
EYE = RigidPose.identity()


def test_world_to_ego_examples():
    np.testing.assert_array_equal(world_to_ego((1, 2, 3), EYE), [1, 2, 3])
    np.testing.assert_array_equal(world_to_ego((1, 0, 0), RigidPose(np.eye(3), (1, 0, 0))), [0, 0, 0])
    np.testing.assert_allclose(world_to_ego((1, 0, 0), RigidPose.from_yaw(math.pi / 2)), [0, -1, 0], atol=1e-15)


def test_ego_to_camera_identity_and_composition():
    p = np.array([0.3, -2.0, 7.0])
    np.testing.assert_array_equal(ego_to_camera(p, EYE), p)
    np.testing.assert_array_equal(ego_to_camera(world_to_ego(p, EYE), EYE), p)


def test_camera_to_image_examples():
    assert camera_to_image((0, 0, 5), K) == (320, 180, 5)
    assert camera_to_image((1, 0, 1), K) == (420, 180, 1)
    with pytest.raises(BehindCameraError):
        camera_to_image((0, 0, -1), K)
    with pytest.raises(BehindCameraError):
        camera_to_image((0, 0, EPS_Z), K)


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_random_pose_round_trips(seed):
    rng = np.random.default_rng(seed)
    cam = RigidPose(random_rotation(rng), rng.uniform(-5, 5, 3))
    ego = RigidPose(random_rotation(rng), rng.uniform(-100, 100, 3))
    p = rng.uniform(-50, 50, 3)
    np.testing.assert_allclose(camera_to_ego(ego_to_camera(p, cam), cam), p, atol=1e-12)
    np.testing.assert_allclose(ego_to_world(world_to_ego(p, ego), ego), p, atol=1e-12)
    pc = np.array([rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(0.1, 60)])
    u, v, z = camera_to_image(pc, K)
    np.testing.assert_allclose(image_to_camera(u, v, z, K), pc, atol=1e-12)


def test_centered_cube_projects_symmetrically():
    pb = project_box(Box3D((0, 0, 10), (2, 2, 2), 0.0), EYE, EYE, K)
    assert pb.behind_count == 0
    mirrored = 2 * np.array([K.cx, K.cy]) - pb.uv
    # the mirrored corner set equals the original one
    a = np.array(sorted(map(tuple, np.round(pb.uv, 9))))
    b = np.array(sorted(map(tuple, np.round(mirrored, 9))))
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_fully_behind_box():
    pb = project_box(Box3D((0, 0, -10), (2, 2, 2), 0.0), EYE, EYE, K)
    assert pb.behind_count == 8
    assert pb.visible_uv().shape == (0, 2)
    assert math.isinf(pb.representative_depth)
    assert not in_image(pb, K)


def test_straddling_box_per_corner():
    box = Box3D((0.5, 0.2, 0.3), (2, 2, 2), 0.4)
    pb = project_box(box, EYE, EYE, K)
    assert 0 < pb.behind_count < 8
    for corner, uv, z in zip(box_corners(box), pb.uv, pb.depth):
        assert z == pytest.approx(corner[2], abs=1e-15)
        if z > EPS_Z:
            np.testing.assert_allclose(uv, camera_to_image(corner, K)[:2], atol=1e-9)
        else:
            assert np.isnan(uv).all()


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 20.0))
def test_depth_monotone_along_optical_axis(seed, d):
    rng = np.random.default_rng(seed)
    ego = RigidPose(random_rotation(rng), rng.uniform(-10, 10, 3))
    cam = RigidPose(random_rotation(rng), rng.uniform(-2, 2, 3))
    box = Box3D(rng.uniform(-10, 10, 3), rng.uniform(0.5, 4, 3), rng.uniform(-math.pi, math.pi))
    axis_world = ego.rotation @ cam.rotation @ np.array([0.0, 0.0, 1.0])
    before = project_box(box, ego, cam, K).depth
    after = project_box(box.translated(d * axis_world), ego, cam, K).depth
    np.testing.assert_allclose(after - before, d, atol=1e-9)


def _pb(z, tid, behind=False):
    return project_box(Box3D((0, 0, -z if behind else z), (1, 1, 1), 0.0, 0, tid), EYE, EYE, K)


def test_depth_order_examples():
    assert depth_order([_pb(10, 1), _pb(5, 2)]) == [1, 0]
    assert depth_order([_pb(5, 3), _pb(5, 1)]) == [1, 0]
    assert depth_order([_pb(20, 1, behind=True), _pb(9, 2), _pb(4, 3)]) == [2, 1, 0]


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1))
def test_depth_order_is_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    boxes, _ = random_layout_case(rng)
    perm = rng.permutation(len(boxes))
    ordered = [boxes[i].track_id for i in depth_order(boxes)]
    permuted = [boxes[perm[i]].track_id for i in depth_order([boxes[i] for i in perm])]
    assert ordered == permuted


def test_overlap_takes_nearer_class():
    k = pinhole(64, 64)
    near = project_box(Box3D((0, 0, 5), (2, 2, 0.5), 0.0, 0, 1), EYE, EYE, k)
    far = project_box(Box3D((0, 0, 10), (6, 6, 0.5), 0.0, 2, 2), EYE, EYE, k)
    boxes = [far, near]
    img = rasterize_layout(boxes, depth_order(boxes), 64, 64)
    assert tuple(img[32, 32]) == CLASS_PALETTE[0]
    assert tuple(img[32, 18]) == CLASS_PALETTE[2]
    assert tuple(img[0, 0]) == (0, 0, 0)


def test_no_boxes_is_background():
    assert not rasterize_layout([], [], 10, 12).any()


def test_bad_order_rejected():
    with pytest.raises(ValueError):
        rasterize_layout([_pb(5, 1)], [1], 10, 10)


def test_four_box_scene_matches_oracle():
    k = pinhole(112, 64)
    specs = [((0, 0, 8), (3, 2, 2), 0.3, 0, 4), ((1, 0.5, 6), (2, 2, 1), -0.2, 1, 2),
             ((-2, 0, 12), (5, 3, 3), 1.0, 2, 3), ((0.5, -1, 3), (1, 1, 1), 0.0, 3, 1)]
    boxes = [project_box(Box3D(*s), EYE, EYE, k) for s in specs]
    img = rasterize_layout(boxes, depth_order(boxes), 64, 112)
    np.testing.assert_array_equal(img, layout_oracle(boxes, 64, 112, CLASS_PALETTE))
    assert len({tuple(c) for c in img.reshape(-1, 3)}) == 5


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_scenes_match_oracle(seed):
    boxes, k = random_layout_case(np.random.default_rng(seed))
    img = rasterize_layout(boxes, depth_order(boxes), k.height, k.width)
    np.testing.assert_array_equal(img, layout_oracle(boxes, k.height, k.width, CLASS_PALETTE))


def test_layout_colors_are_in_palette():
    boxes, k = random_layout_case(np.random.default_rng(7))
    img = rasterize_layout(boxes, depth_order(boxes), k.height, k.width)
    allowed = set(CLASS_PALETTE) | {(0, 0, 0)}
    assert {tuple(c) for c in img.reshape(-1, 3)} <= allowed


def test_wireframe_draws_subset_of_fill():
    k = pinhole(64, 64)
    boxes = [project_box(Box3D((0, 0, 8), (3, 2, 2), 0.3, 5, 1), EYE, EYE, k)]
    wire = rasterize_layout(boxes, [0], 64, 64, wireframe=True).any(-1)
    fill = rasterize_layout(boxes, [0], 64, 64).any(-1)
    assert wire.any() and wire.sum() < fill.sum()


def test_lane_along_optical_axis_is_vertical_line():
    k = pinhole(64, 64, cx=32.5, cy=32.5)
    line = np.array([[0.0, 1.0, z] for z in np.linspace(2, 60, 30)])
    img = rasterize_lanes([line], EYE, EYE, k)
    rows, cols = np.nonzero(img.any(-1))
    assert set(cols.tolist()) == {32}
    # the line descends from near the principal point towards the bottom edge
    assert rows.min() == 33 and rows.max() == 57


def test_empty_lanes_leave_image_unchanged():
    k = pinhole(16, 16)
    base = np.random.default_rng(0).integers(0, 255, (16, 16, 3), dtype=np.uint8)
    np.testing.assert_array_equal(rasterize_lanes([], EYE, EYE, k, image=base), base)


def test_lane_crossing_behind_draws_only_front_segments():
    k = pinhole(64, 64)
    zs = np.arange(-10.0, 35.0, 5.0)
    line = np.stack([np.full_like(zs, 1.0), np.full_like(zs, 1.5), zs], 1)
    front = line[line[:, 2] > EPS_Z]
    np.testing.assert_array_equal(rasterize_lanes([line], EYE, EYE, k), rasterize_lanes([front], EYE, EYE, k))
    assert rasterize_lanes([line], EYE, EYE, k).any()
