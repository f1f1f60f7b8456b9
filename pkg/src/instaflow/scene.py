"""Scene representation shared by every stage of the conditioning pipeline.

World frame is right-handed with +z up. Ego frame follows the nuScenes
convention (+x forward, +y left, +z up). Camera frame is the usual pinhole
frame (+x right, +y down, +z along the optical axis). Distances are meters,
angles radians.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

ORTHONORMAL_TOL = 1e-9


def _frozen(a, shape) -> np.ndarray:
    arr = np.array(a, dtype=np.float64).reshape(shape)
    arr.setflags(write=False)
    return arr


def yaw_matrix(yaw: float) -> np.ndarray:
    """Rotation about +z by ``yaw`` radians."""
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def wrap_angle(a: float) -> float:
    """Wrap an angle into [-pi, pi)."""
    return (a + math.pi) % (2.0 * math.pi) - math.pi


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class RigidPose:
    """Rotation + translation mapping local coordinates into the parent frame.

    ``parent = rotation @ local + translation``; the projection chain applies
    the inverse.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen(self.rotation, (3, 3)))
        object.__setattr__(self, "translation", _frozen(self.translation, (3,)))

    @classmethod
    def identity(cls) -> "RigidPose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_yaw(cls, yaw: float, translation=(0.0, 0.0, 0.0)) -> "RigidPose":
        return cls(yaw_matrix(yaw), translation)

    def orthonormality_error(self) -> float:
        r = self.rotation
        return float(np.max(np.abs(r.T @ r - np.eye(3))))

    def is_valid(self) -> bool:
        return (
            self.orthonormality_error() < ORTHONORMAL_TOL
            and abs(np.linalg.det(self.rotation) - 1.0) < ORTHONORMAL_TOL
            and bool(np.all(np.isfinite(self.translation)))
        )

    def compose(self, other: "RigidPose") -> "RigidPose":
        """Pose of ``other``'s local frame expressed in this pose's parent."""
        return RigidPose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def __eq__(self, other):
        if not isinstance(other, RigidPose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(self.translation, other.translation)


@dataclass(frozen=True, eq=False)
class Box3D:
    center: np.ndarray
    size: np.ndarray  # (length, width, height)
    yaw: float
    class_id: int = 0
    track_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "center", _frozen(self.center, (3,)))
        object.__setattr__(self, "size", _frozen(self.size, (3,)))
        object.__setattr__(self, "yaw", float(self.yaw))

    def translated(self, d) -> "Box3D":
        return Box3D(self.center + np.asarray(d, dtype=np.float64), self.size, self.yaw, self.class_id, self.track_id)

    def rotated(self, theta: float) -> "Box3D":
        """Same box with its yaw advanced by ``theta`` about its own center."""
        return Box3D(self.center, self.size, wrap_angle(self.yaw + theta), self.class_id, self.track_id)

    def __eq__(self, other):
        if not isinstance(other, Box3D):
            return NotImplemented
        return (
            np.array_equal(self.center, other.center)
            and np.array_equal(self.size, other.size)
            and self.yaw == other.yaw
            and self.class_id == other.class_id
            and self.track_id == other.track_id
        )


# Box-frame corner signs: bottom face counter-clockwise seen from above,
# starting at (+l/2, +w/2, -h/2), then the top face in the same order.
CORNER_SIGNS = np.array(
    [
        [+1, +1, -1],
        [-1, +1, -1],
        [-1, -1, -1],
        [+1, -1, -1],
        [+1, +1, +1],
        [-1, +1, +1],
        [-1, -1, +1],
        [+1, -1, +1],
    ],
    dtype=np.float64,
)

# Index pairs of the 12 box edges under the corner order above.
BOX_EDGES = (
    (0, 1), (1, 2), (2, 3), (3, 0),
    (4, 5), (5, 6), (6, 7), (7, 4),
    (0, 4), (1, 5), (2, 6), (3, 7),
)


def box_corners(box: Box3D) -> np.ndarray:
    """Return the 8 world-frame corners of ``box`` as an (8, 3) array."""
    local = CORNER_SIGNS * (box.size / 2.0)
    return local @ yaw_matrix(box.yaw).T + box.center


@dataclass(frozen=True)
class TrackedInstanceFrame:
    track_id: int
    box: Box3D
    visible: bool = True


@dataclass(frozen=True)
class Camera:
    extrinsics: RigidPose  # camera -> ego
    intrinsics: CameraIntrinsics


@dataclass(frozen=True)
class Frame:
    ego_pose: RigidPose  # ego -> world
    cameras: tuple[Camera, ...]
    instances: tuple[TrackedInstanceFrame, ...]
    prompt: str = ""

    def instance(self, track_id: int) -> TrackedInstanceFrame | None:
        for inst in self.instances:
            if inst.track_id == track_id:
                return inst
        return None


@dataclass(frozen=True)
class SceneSequence:
    frames: tuple[Frame, ...]
    # Lane-center polylines in the world frame, each an (N, 3) array.
    lanes: tuple[np.ndarray, ...] = field(default=())

    def __len__(self) -> int:
        return len(self.frames)

    def track_ids(self) -> list[int]:
        ids = {inst.track_id for f in self.frames for inst in f.instances}
        return sorted(ids)

    @property
    def num_cameras(self) -> int:
        return len(self.frames[0].cameras) if self.frames else 0


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    frame: int | None = None
    severity: str = "error"

    def __str__(self) -> str:
        where = f"frame {self.frame}: " if self.frame is not None else ""
        return f"[{self.severity}] {self.kind}: {where}{self.message}"


def _check_pose(pose: RigidPose, what: str, t: int) -> list[Violation]:
    out = []
    err = pose.orthonormality_error()
    det = float(np.linalg.det(pose.rotation))
    if not (err < ORTHONORMAL_TOL and abs(det - 1.0) < ORTHONORMAL_TOL):
        out.append(Violation("non_orthonormal_rotation", f"{what} rotation (|RtR-I|={err:.3g}, det={det:.6g})", t))
    if not np.all(np.isfinite(pose.translation)):
        out.append(Violation("non_finite_translation", f"{what} translation", t))
    return out


def _check_intrinsics(k: CameraIntrinsics, what: str, t: int) -> list[Violation]:
    problems = []
    if not (k.fx > 0 and k.fy > 0):
        problems.append("focal lengths must be positive")
    if k.width <= 0 or k.height <= 0:
        problems.append("image dimensions must be positive")
    if not (0 <= k.cx < k.width and 0 <= k.cy < k.height):
        problems.append("principal point outside image")
    return [Violation("bad_intrinsics", f"{what}: {p}", t) for p in problems]


def validate_scene(scene: SceneSequence) -> list[Violation]:
    """Check a scene against the data-model invariants.

    Returns an empty list iff the scene is well-formed. An empty scene is
    reported with severity ``"warning"`` so renderers can still accept it.
    """
    report: list[Violation] = []
    if not scene.frames:
        return [Violation("empty_scene", "scene has no frames", None, "warning")]
    n_cams = len(scene.frames[0].cameras)
    for t, frame in enumerate(scene.frames):
        report += _check_pose(frame.ego_pose, "ego", t)
        if len(frame.cameras) != n_cams:
            report.append(Violation("camera_count", f"{len(frame.cameras)} cameras, expected {n_cams}", t))
        for c, cam in enumerate(frame.cameras):
            report += _check_pose(cam.extrinsics, f"camera {c}", t)
            report += _check_intrinsics(cam.intrinsics, f"camera {c}", t)
        seen: set[int] = set()
        for inst in frame.instances:
            if inst.track_id in seen:
                report.append(Violation("duplicate_track_id", f"track_id {inst.track_id} appears more than once", t))
            seen.add(inst.track_id)
            box = inst.box
            if box.track_id != inst.track_id:
                report.append(Violation("track_id_mismatch", f"instance {inst.track_id} carries box id {box.track_id}", t))
            if not np.all(box.size > 0):
                report.append(Violation("bad_box_size", f"track {inst.track_id} size {box.size.tolist()}", t))
            if not (-math.pi <= box.yaw < math.pi):
                report.append(Violation("bad_yaw", f"track {inst.track_id} yaw {box.yaw} outside [-pi, pi)", t))
            if not np.all(np.isfinite(box.center)):
                report.append(Violation("non_finite_center", f"track {inst.track_id}", t))
    return report


# -- JSON -------------------------------------------------------------------

class SceneFormatError(ValueError):
    """Scene JSON is syntactically valid but does not match the schema."""


def _pose_to_json(p: RigidPose) -> dict:
    return {"rotation": p.rotation.reshape(-1).tolist(), "translation": p.translation.tolist()}


def _pose_from_json(d: dict) -> RigidPose:
    rot = d["rotation"]
    if len(rot) != 9 or len(d["translation"]) != 3:
        raise SceneFormatError("pose needs 9 rotation and 3 translation numbers")
    return RigidPose(np.array(rot, dtype=np.float64).reshape(3, 3), d["translation"])


def scene_to_dict(scene: SceneSequence) -> dict:
    frames = []
    for f in scene.frames:
        cams = []
        for c in f.cameras:
            k = c.intrinsics
            cams.append(
                {
                    **_pose_to_json(c.extrinsics),
                    "intrinsics": {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy, "width": k.width, "height": k.height},
                }
            )
        insts = [
            {
                "track_id": i.track_id,
                "class_id": i.box.class_id,
                "center": i.box.center.tolist(),
                "size": i.box.size.tolist(),
                "yaw": i.box.yaw,
                "visible": bool(i.visible),
            }
            for i in f.instances
        ]
        frames.append({"ego": _pose_to_json(f.ego_pose), "cameras": cams, "instances": insts, "prompt": f.prompt})
    out: dict[str, Any] = {"frames": frames}
    if scene.lanes:
        out["lanes"] = [np.asarray(l).tolist() for l in scene.lanes]
    return out


def scene_from_dict(data: dict) -> SceneSequence:
    try:
        frames = []
        for f in data["frames"]:
            cams = []
            for c in f["cameras"]:
                k = c["intrinsics"]
                intr = CameraIntrinsics(
                    float(k["fx"]), float(k["fy"]), float(k["cx"]), float(k["cy"]), int(k["width"]), int(k["height"])
                )
                cams.append(Camera(_pose_from_json(c), intr))
            insts = []
            for i in f["instances"]:
                tid = int(i["track_id"])
                box = Box3D(i["center"], i["size"], float(i["yaw"]), int(i.get("class_id", 0)), tid)
                insts.append(TrackedInstanceFrame(tid, box, bool(i.get("visible", True))))
            frames.append(Frame(_pose_from_json(f["ego"]), tuple(cams), tuple(insts), str(f.get("prompt", ""))))
        lanes = tuple(_frozen(l, (-1, 3)) for l in data.get("lanes", []))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SceneFormatError):
            raise
        raise SceneFormatError(f"scene does not match schema: {exc!r}") from exc
    return SceneSequence(tuple(frames), lanes)


def dumps_scene(scene: SceneSequence) -> str:
    return json.dumps(scene_to_dict(scene), indent=1, sort_keys=True) + "\n"


def loads_scene(text: str) -> SceneSequence:
    """Parse scene JSON; raises ``json.JSONDecodeError`` or ``SceneFormatError``."""
    return scene_from_dict(json.loads(text))


def make_frame(
    instances: Sequence[TrackedInstanceFrame],
    cameras: Sequence[Camera],
    ego_pose: RigidPose | None = None,
    prompt: str = "",
) -> Frame:
    return Frame(ego_pose or RigidPose.identity(), tuple(cameras), tuple(instances), prompt)
