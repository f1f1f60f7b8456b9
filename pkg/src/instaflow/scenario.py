"""Simulator-free procedural driving scenarios on a straight multi-lane road.

Actors follow lane centers at constant speed, optionally perturbed by cut-in
or sudden-brake events, and the result is emitted as a :class:`SceneSequence`
seen through a surround camera rig.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .projection import in_image, project_box
from .scene import (
    Box3D,
    Camera,
    CameraIntrinsics,
    Frame,
    RigidPose,
    SceneSequence,
    TrackedInstanceFrame,
    wrap_angle,
    yaw_matrix,
)

MAX_JITTER = 0.1
DEFAULT_DT = 0.5

CLASS_SIZES = {
    0: (4.5, 1.9, 1.6),  # car
    1: (8.0, 2.5, 3.2),  # truck
    2: (11.0, 2.9, 3.4),  # bus
    3: (2.2, 0.8, 1.4),  # motorcycle
}

PROMPT_TEMPLATE = "{weather} {time}, straight {lanes}-lane road with {actors} vehicles"
WEATHER = ("Sunny", "Rainy", "Cloudy", "Foggy")
TIME_OF_DAY = ("Day", "Night", "Dusk")

# camera axes (x right, y down, z forward) expressed in the ego frame
_CAM_BASE = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class MapSpec:
    lane_count: int = 3
    lane_width: float = 3.5
    lane_length: float = 200.0
    vertex_spacing: float = 2.0

    def __post_init__(self):
        if self.lane_count < 1 or self.lane_width <= 0 or self.lane_length <= 0:
            raise ScenarioError("need lane_count >= 1 and positive lane width/length")

    def lane_center(self, lane: int) -> float:
        if not 0 <= lane < self.lane_count:
            raise ScenarioError(f"lane {lane} outside 0..{self.lane_count - 1}")
        return (lane - (self.lane_count - 1) / 2.0) * self.lane_width

    def polylines(self) -> list[np.ndarray]:
        n = int(round(self.lane_length / self.vertex_spacing)) + 1
        xs = np.linspace(0.0, self.lane_length, n)
        return [np.stack([xs, np.full(n, self.lane_center(i)), np.zeros(n)], axis=1) for i in range(self.lane_count)]


@dataclass(frozen=True)
class ActorSpec:
    lane: int
    start: float  # longitudinal position at frame 0 (m)
    speed: float  # m/s
    class_id: int = 0

    @property
    def size(self) -> tuple[float, float, float]:
        return CLASS_SIZES.get(self.class_id, CLASS_SIZES[0])


@dataclass(frozen=True)
class EventSpec:
    kind: str  # "cut_in" | "sudden_brake" | "none"
    actor: int = 0
    start: int = 0
    duration: int = 1
    magnitude: float = 0.0

    def validate(self, length: int, n_actors: int | None = None) -> None:
        if self.kind not in ("cut_in", "sudden_brake", "none"):
            raise ScenarioError(f"unknown event kind {self.kind!r}")
        if self.kind == "none":
            return
        if self.start < 0 or self.duration < 1 or self.start + self.duration > length:
            raise ScenarioError(
                f"event window [{self.start}, {self.start + self.duration}) outside scene of {length} frames"
            )
        if not self.magnitude > 0:
            raise ScenarioError("event magnitude must be positive")
        if n_actors is not None and not 0 <= self.actor < n_actors:
            raise ScenarioError(f"event actor {self.actor} outside 0..{n_actors - 1}")


def gen_waypoints(
    map_spec: MapSpec,
    actors: Sequence[ActorSpec],
    length: int,
    dt: float,
    rng: np.random.Generator,
    jitter: float = MAX_JITTER,
) -> np.ndarray:
    """Constant-velocity lane following: (A, length, 3) box-center positions."""
    if length < 2:
        raise ScenarioError("need at least 2 frames")
    if not 0 <= jitter <= MAX_JITTER:
        raise ScenarioError(f"jitter must lie in [0, {MAX_JITTER}]")
    k = np.arange(length)
    out = np.zeros((len(actors), length, 3))
    for a, actor in enumerate(actors):
        if actor.speed <= 0:
            raise ScenarioError("actor speeds must be positive")
        lateral = rng.uniform(-jitter, jitter, length) if jitter > 0 else np.zeros(length)
        out[a, :, 0] = actor.start + actor.speed * dt * k
        out[a, :, 1] = map_spec.lane_center(actor.lane) + lateral
        out[a, :, 2] = actor.size[2] / 2.0
    return out


def smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def apply_event(traj: np.ndarray, event: EventSpec, dt: float = DEFAULT_DT, target_y: float = 0.0) -> np.ndarray:
    """Return a copy of one actor's (T, 3) trajectory with ``event`` applied.

    ``cut_in`` slides the actor laterally by ``magnitude`` toward ``target_y``
    (the ego lane), eased with a smoothstep from frame ``start`` to
    ``start + duration``. ``sudden_brake`` removes ``magnitude * dt`` m/s of
    longitudinal speed per frame during the window, never below zero, then
    holds the reached speed.
    """
    traj = np.array(traj, dtype=np.float64)
    T = len(traj)
    event.validate(T)
    if event.kind == "none":
        return traj
    k = np.arange(T)
    if event.kind == "cut_in":
        y0 = traj[event.start, 1]
        direction = 1.0 if target_y >= y0 else -1.0
        traj[:, 1] += direction * event.magnitude * smoothstep((k - event.start) / event.duration)
        return traj
    # sudden_brake: re-integrate the longitudinal steps from the event start
    steps = np.diff(traj[:, 0])
    v0 = steps / dt
    for j in range(event.start, T - 1):
        n_dec = min(j - event.start + 1, event.duration)
        v = max(v0[j] - event.magnitude * dt * n_dec, 0.0)
        steps[j] = v * dt
    traj[1:, 0] = traj[0, 0] + np.cumsum(steps)
    return traj


def camera_rig(
    n_cameras: int = 6,
    width: int = 448,
    height: int = 256,
    fov_deg: float = 70.0,
    mount_height: float = 1.5,
    mount_radius: float = 1.0,
) -> tuple[Camera, ...]:
    """Surround rig: cameras at ``360 / n`` degree yaw steps sharing intrinsics."""
    f = (width / 2.0) / math.tan(math.radians(fov_deg) / 2.0)
    k = CameraIntrinsics(f, f, width / 2.0, height / 2.0, width, height)
    cams = []
    for i in range(n_cameras):
        yaw = 2.0 * math.pi * i / n_cameras
        t = (mount_radius * math.cos(yaw), mount_radius * math.sin(yaw), mount_height)
        cams.append(Camera(RigidPose(yaw_matrix(yaw) @ _CAM_BASE, t), k))
    return tuple(cams)


def headings(traj: np.ndarray) -> np.ndarray:
    """Yaw of the instantaneous direction of travel; stationary frames keep the last heading."""
    T = len(traj)
    out = np.zeros(T)
    prev = 0.0
    for k in range(T):
        d = traj[k + 1] - traj[k] if k + 1 < T else traj[k] - traj[k - 1]
        if math.hypot(d[0], d[1]) > 1e-9:
            prev = wrap_angle(math.atan2(d[1], d[0]))
        out[k] = prev
    return out


def box_visible(box: Box3D, ego: RigidPose, cameras: Sequence[Camera]) -> bool:
    return any(in_image(project_box(box, ego, c.extrinsics, c.intrinsics), c.intrinsics) for c in cameras)


def emit_scene(
    map_spec: MapSpec,
    trajectories: np.ndarray,
    ego_trajectory: np.ndarray,
    cameras: Sequence[Camera],
    prompts: str | Sequence[str],
    actors: Sequence[ActorSpec] | None = None,
) -> SceneSequence:
    """Assemble a scene; each box is visible iff some corner lands in some camera image."""
    ego_trajectory = np.asarray(ego_trajectory, dtype=np.float64)
    T = ego_trajectory.shape[0]
    trajectories = np.asarray(trajectories, dtype=np.float64)
    if trajectories.size == 0:
        trajectories = trajectories.reshape(0, T, 3)
    if trajectories.shape[1:] != (T, 3):
        raise ScenarioError("actor and ego trajectories must share length")
    if isinstance(prompts, str):
        prompts = [prompts] * T
    if len(prompts) != T:
        raise ScenarioError("need one prompt per frame")
    actors = list(actors) if actors is not None else [ActorSpec(0, 0.0, 1.0)] * len(trajectories)
    actor_yaws = [headings(tr) for tr in trajectories]
    ego_yaws = headings(ego_trajectory)
    cameras = tuple(cameras)
    frames = []
    for k in range(T):
        ego = RigidPose(yaw_matrix(ego_yaws[k]), (ego_trajectory[k, 0], ego_trajectory[k, 1], 0.0))
        insts = []
        for a, tr in enumerate(trajectories):
            tid = a + 1
            box = Box3D(tr[k], actors[a].size, actor_yaws[a][k], actors[a].class_id, tid)
            insts.append(TrackedInstanceFrame(tid, box, box_visible(box, ego, cameras)))
        frames.append(Frame(ego, cameras, tuple(insts), prompts[k]))
    return SceneSequence(tuple(frames), tuple(map_spec.polylines()))


@dataclass(frozen=True)
class ScenarioSpec:
    map: MapSpec = field(default_factory=MapSpec)
    actors: tuple[ActorSpec, ...] = ()
    events: tuple[EventSpec, ...] = ()
    frames: int = 8
    dt: float = DEFAULT_DT
    ego_lane: int = 1
    ego_speed: float = 8.0
    jitter: float = MAX_JITTER
    cameras: int = 6
    width: int = 448
    height: int = 256
    weather: str | None = None
    time_of_day: str | None = None

    _KEYS = frozenset(
        {"map", "actors", "events", "frames", "dt", "ego_lane", "ego_speed", "jitter", "cameras", "width", "height",
         "weather", "time_of_day"}
    )

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        unknown = set(d) - cls._KEYS
        if unknown:
            raise ScenarioError(f"unknown scenario keys: {sorted(unknown)}")
        try:
            kw = dict(d)
            kw["map"] = MapSpec(**d.get("map", {}))
            kw["actors"] = tuple(ActorSpec(**a) for a in d.get("actors", []))
            kw["events"] = tuple(EventSpec(**e) for e in d.get("events", []))
            return cls(**kw)
        except TypeError as exc:
            raise ScenarioError(str(exc)) from exc

    def to_dict(self) -> dict:
        return {
            "map": vars(self.map).copy(),
            "actors": [vars(a).copy() for a in self.actors],
            "events": [vars(e).copy() for e in self.events],
            "frames": self.frames,
            "dt": self.dt,
            "ego_lane": self.ego_lane,
            "ego_speed": self.ego_speed,
            "jitter": self.jitter,
            "cameras": self.cameras,
            "width": self.width,
            "height": self.height,
            "weather": self.weather,
            "time_of_day": self.time_of_day,
        }

    def validate(self) -> None:
        if self.frames < 2:
            raise ScenarioError("need at least 2 frames")
        self.map.lane_center(self.ego_lane)
        for a in self.actors:
            self.map.lane_center(a.lane)
        for e in self.events:
            e.validate(self.frames, len(self.actors))


def generate_scenario(spec: ScenarioSpec, seed: int) -> SceneSequence:
    spec.validate()
    rng = np.random.default_rng(seed)
    m = spec.map
    trajs = gen_waypoints(m, spec.actors, spec.frames, spec.dt, rng, spec.jitter)
    ego_y = m.lane_center(spec.ego_lane)
    for e in spec.events:
        if e.kind != "none":
            trajs[e.actor] = apply_event(trajs[e.actor], e, spec.dt, target_y=ego_y)
    ego = np.zeros((spec.frames, 3))
    ego[:, 0] = spec.ego_speed * spec.dt * np.arange(spec.frames)
    ego[:, 1] = ego_y
    weather = spec.weather or WEATHER[int(rng.integers(len(WEATHER)))]
    tod = spec.time_of_day or TIME_OF_DAY[int(rng.integers(len(TIME_OF_DAY)))]
    prompt = PROMPT_TEMPLATE.format(weather=weather, time=tod, lanes=m.lane_count, actors=len(spec.actors))
    rig = camera_rig(spec.cameras, spec.width, spec.height)
    return emit_scene(m, trajs, ego, rig, prompt, spec.actors)


def random_scenario_spec(rng: np.random.Generator, frames: int = 8, **overrides) -> ScenarioSpec:
    """Draw a random spec: 1-5 actors around the ego, at most one event each."""
    m = MapSpec(lane_count=int(rng.integers(1, 5)), lane_width=float(rng.uniform(3.0, 4.0)))
    ego_lane = int(rng.integers(m.lane_count))
    ego_speed = float(rng.uniform(4.0, 12.0))
    actors = []
    for _ in range(int(rng.integers(1, 6))):
        actors.append(
            ActorSpec(
                lane=int(rng.integers(m.lane_count)),
                start=float(rng.uniform(-20.0, 60.0)),
                speed=float(rng.uniform(2.0, 14.0)),
                class_id=int(rng.integers(len(CLASS_SIZES))),
            )
        )
    events = []
    for a in range(len(actors)):
        kind = ("none", "cut_in", "sudden_brake")[int(rng.integers(3))]
        if kind == "none":
            continue
        start = int(rng.integers(0, frames - 1))
        duration = int(rng.integers(1, frames - start + 1))
        mag = float(rng.uniform(1.0, 3.5)) if kind == "cut_in" else float(rng.uniform(2.0, 8.0))
        events.append(EventSpec(kind, a, start, duration, mag))
    kw = dict(map=m, actors=tuple(actors), events=tuple(events), frames=frames, ego_lane=ego_lane, ego_speed=ego_speed)
    kw.update(overrides)
    return ScenarioSpec(**kw)
