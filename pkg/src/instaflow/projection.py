"""World -> ego -> camera -> image chain, depth ordering, and layout rendering."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .raster import convex_hull, draw_segment, fill_convex
from .scene import BOX_EDGES, Box3D, CameraIntrinsics, RigidPose, box_corners

EPS_Z = 1e-6

# 16 visually distinct colors indexed by class_id (mod 16).
CLASS_PALETTE: tuple[tuple[int, int, int], ...] = (
    (230, 25, 75),
    (60, 180, 75),
    (255, 225, 25),
    (0, 130, 200),
    (245, 130, 48),
    (145, 30, 180),
    (70, 240, 240),
    (240, 50, 230),
    (210, 245, 60),
    (250, 190, 212),
    (0, 128, 128),
    (220, 190, 255),
    (170, 110, 40),
    (255, 250, 200),
    (128, 0, 0),
    (170, 255, 195),
)
LANE_COLOR = (255, 255, 255)
BACKGROUND = (0, 0, 0)


class BehindCameraError(ValueError):
    pass


def world_to_ego(p, ego: RigidPose) -> np.ndarray:
    """``R_e^T (p - T_e)``; ``p`` may be (3,) or (N, 3)."""
    return (np.asarray(p, dtype=np.float64) - ego.translation) @ ego.rotation


def ego_to_camera(p, cam: RigidPose) -> np.ndarray:
    return (np.asarray(p, dtype=np.float64) - cam.translation) @ cam.rotation


def camera_to_ego(p, cam: RigidPose) -> np.ndarray:
    return np.asarray(p, dtype=np.float64) @ cam.rotation.T + cam.translation


def ego_to_world(p, ego: RigidPose) -> np.ndarray:
    return np.asarray(p, dtype=np.float64) @ ego.rotation.T + ego.translation


def camera_to_image(p, k: CameraIntrinsics) -> tuple[float, float, float]:
    x, y, z = (float(c) for c in p)
    if z <= EPS_Z:
        raise BehindCameraError(f"point depth {z} <= {EPS_Z}")
    return k.fx * x / z + k.cx, k.fy * y / z + k.cy, z


def image_to_camera(u: float, v: float, z: float, k: CameraIntrinsics) -> np.ndarray:
    """Back-project a pixel with known depth ``z`` into the camera frame."""
    return np.array([(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z])


def project_points(points_world: np.ndarray, ego: RigidPose, cam: RigidPose, k: CameraIntrinsics):
    """Vectorized chain for (N, 3) points: returns (uv (N, 2) with NaN behind, z (N,))."""
    pc = ego_to_camera(world_to_ego(points_world, ego), cam)
    z = pc[:, 2]
    front = z > EPS_Z
    uv = np.full((len(pc), 2), np.nan)
    zf = z[front]
    uv[front, 0] = k.fx * pc[front, 0] / zf + k.cx
    uv[front, 1] = k.fy * pc[front, 1] / zf + k.cy
    return uv, z


@dataclass(frozen=True, eq=False)
class ProjectedBox:
    track_id: int
    class_id: int
    uv: np.ndarray  # (8, 2); NaN rows for corners behind the camera
    depth: np.ndarray  # (8,) unclipped z_c
    behind_count: int

    @property
    def front(self) -> np.ndarray:
        return self.depth > EPS_Z

    @property
    def representative_depth(self) -> float:
        """Nearest in-front corner depth; +inf when fully behind."""
        f = self.front
        return float(self.depth[f].min()) if f.any() else float("inf")

    def visible_uv(self) -> np.ndarray:
        return self.uv[self.front]

    def to_json(self) -> str:
        return json.dumps(
            {
                "track_id": self.track_id,
                "class_id": self.class_id,
                "uv": [None if not np.isfinite(r).all() else r.tolist() for r in self.uv],
                "depth": self.depth.tolist(),
                "behind_count": self.behind_count,
            }
        )


def project_box(box: Box3D, ego: RigidPose, cam: RigidPose, k: CameraIntrinsics) -> ProjectedBox:
    uv, z = project_points(box_corners(box), ego, cam, k)
    return ProjectedBox(box.track_id, box.class_id, uv, z, int(np.count_nonzero(z <= EPS_Z)))


def depth_order(boxes: Sequence[ProjectedBox]) -> list[int]:
    """Indices near-to-far by representative depth, ties by track_id; fully-behind last."""

    def key(i):
        b = boxes[i]
        return (b.behind_count == 8, b.representative_depth, b.track_id)

    return sorted(range(len(boxes)), key=key)


def in_image(pbox: ProjectedBox, k: CameraIntrinsics) -> bool:
    """True when any in-front corner lands inside the image bounds."""
    uv = pbox.visible_uv()
    if len(uv) == 0:
        return False
    inside = (uv[:, 0] >= 0) & (uv[:, 0] < k.width) & (uv[:, 1] >= 0) & (uv[:, 1] < k.height)
    return bool(inside.any())


def class_color(class_id: int, palette: Sequence[tuple[int, int, int]] = CLASS_PALETTE):
    return palette[class_id % len(palette)]


def rasterize_layout(
    boxes: Sequence[ProjectedBox],
    order: Sequence[int],
    height: int,
    width: int,
    palette: Sequence[tuple[int, int, int]] = CLASS_PALETTE,
    wireframe: bool = False,
) -> np.ndarray:
    """Paint boxes back-to-front so the nearest covering instance wins.

    ``order`` is a near-to-far permutation (as from :func:`depth_order`).
    With ``wireframe`` the 12 box edges between in-front corners are drawn
    instead of filled hulls.
    """
    if sorted(order) != list(range(len(boxes))):
        raise ValueError("order must be a permutation of box indices")
    img = np.zeros((height, width, 3), dtype=np.uint8)
    for i in reversed(order):
        b = boxes[i]
        if b.behind_count == 8:
            continue
        color = class_color(b.class_id, palette)
        if wireframe:
            for a, c in BOX_EDGES:
                if b.front[a] and b.front[c]:
                    draw_segment(img, b.uv[a], b.uv[c], color)
        else:
            fill_convex(img, b.visible_uv(), color)
    return img


def rasterize_lanes(
    polylines: Sequence[np.ndarray],
    ego: RigidPose,
    cam: RigidPose,
    k: CameraIntrinsics,
    image: np.ndarray | None = None,
    color=LANE_COLOR,
) -> np.ndarray:
    """Overlay projected lane polylines; segments need both vertices in front."""
    img = np.zeros((k.height, k.width, 3), dtype=np.uint8) if image is None else image.copy()
    for line in polylines:
        line = np.asarray(line, dtype=np.float64).reshape(-1, 3)
        if len(line) < 2:
            continue
        uv, z = project_points(line, ego, cam, k)
        for j in range(len(line) - 1):
            if z[j] > EPS_Z and z[j + 1] > EPS_Z:
                draw_segment(img, uv[j], uv[j + 1], color)
    return img


def hull_of(pbox: ProjectedBox) -> np.ndarray:
    return convex_hull(pbox.visible_uv())
