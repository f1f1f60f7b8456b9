"""Scene -> condition images -> latents, and packing of training samples."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .depth import DEFAULT_Z_MAX, corner_rows
from .flow import DEFAULT_FLOW_RANGE, flow_to_rgb, mock_vae_encode, rasterize_motion_map
from .projection import CLASS_PALETTE, depth_order, project_box, rasterize_lanes, rasterize_layout
from .scene import SceneSequence
from .stdit.diffusion import Batch
from .stdit.model import Conditions
from .stdit.text import MockTextEncoder


def projected_boxes(scene: SceneSequence, t: int, camera: int):
    frame = scene.frames[t]
    cam = frame.cameras[camera]
    return [project_box(i.box, frame.ego_pose, cam.extrinsics, cam.intrinsics) for i in frame.instances if i.visible]


def render_layout(scene: SceneSequence, t: int, camera: int, palette=CLASS_PALETTE, wireframe=False) -> np.ndarray:
    k = scene.frames[t].cameras[camera].intrinsics
    boxes = projected_boxes(scene, t, camera)
    return rasterize_layout(boxes, depth_order(boxes), k.height, k.width, palette, wireframe)


def render_lanes(scene: SceneSequence, t: int, camera: int) -> np.ndarray:
    frame = scene.frames[t]
    cam = frame.cameras[camera]
    return rasterize_lanes(scene.lanes, frame.ego_pose, cam.extrinsics, cam.intrinsics)


def render_flow(scene: SceneSequence, t: int, camera: int, flow_range: float = DEFAULT_FLOW_RANGE):
    motion = rasterize_motion_map(scene, camera, t)
    return motion, flow_to_rgb(motion, flow_range)


def synthetic_frame(scene: SceneSequence, t: int, camera: int) -> np.ndarray:
    """Placeholder camera image: sky/road backdrop with lanes and layout on top."""
    k = scene.frames[t].cameras[camera].intrinsics
    rows = np.arange(k.height)[:, None]
    img = np.empty((k.height, k.width, 3), dtype=np.uint8)
    sky = rows < k.cy
    img[...] = np.where(sky[..., None], np.array([110, 150, 210], np.uint8), np.array([70, 70, 75], np.uint8))
    lanes = render_lanes(scene, t, camera)
    layout = render_layout(scene, t, camera)
    img = np.where(lanes.any(-1, keepdims=True), lanes, img)
    return np.where(layout.any(-1, keepdims=True), layout, img)


@dataclass
class Sample:
    """Per-scene arrays with a leading view axis: latents are (V, T, h, w, 4)."""

    x0: np.ndarray
    motion: np.ndarray
    layout: np.ndarray
    lane: np.ndarray
    depth_rows: np.ndarray  # (V, T, N, 8, 3)
    depth_valid: np.ndarray  # (V, T, N)
    prompt: str

    def save(self, path) -> None:
        np.savez(
            path,
            x0=self.x0,
            motion=self.motion,
            layout=self.layout,
            lane=self.lane,
            depth_rows=self.depth_rows,
            depth_valid=self.depth_valid,
            prompt=np.array(self.prompt),
        )

    @classmethod
    def load(cls, path) -> "Sample":
        with np.load(path) as z:
            return cls(
                z["x0"], z["motion"], z["layout"], z["lane"], z["depth_rows"], z["depth_valid"], str(z["prompt"])
            )


def build_sample(
    scene: SceneSequence,
    cameras: Sequence[int] = (0,),
    flow_range: float = DEFAULT_FLOW_RANGE,
    max_boxes: int | None = None,
    z_max: float = DEFAULT_Z_MAX,
) -> Sample:
    T = len(scene)
    per_view = {"x0": [], "motion": [], "layout": [], "lane": []}
    rows_all, counts = [], []
    for c in cameras:
        acc = {key: [] for key in per_view}
        view_rows = []
        for t in range(T):
            k = scene.frames[t].cameras[c].intrinsics
            acc["x0"].append(mock_vae_encode(synthetic_frame(scene, t, c)))
            acc["motion"].append(mock_vae_encode(render_flow(scene, t, c, flow_range)[1]))
            acc["layout"].append(mock_vae_encode(render_layout(scene, t, c)))
            acc["lane"].append(mock_vae_encode(render_lanes(scene, t, c)))
            boxes = projected_boxes(scene, t, c)
            r = [corner_rows(boxes[i], k, z_max) for i in depth_order(boxes) if boxes[i].behind_count < 8]
            view_rows.append(r)
            counts.append(len(r))
        for key in per_view:
            per_view[key].append(np.stack(acc[key]))
        rows_all.append(view_rows)
    n = max(counts, default=0) if max_boxes is None else max_boxes
    rows = np.zeros((len(cameras), T, n, 8, 3))
    valid = np.zeros((len(cameras), T, n), dtype=bool)
    for v, view_rows in enumerate(rows_all):
        for t, r in enumerate(view_rows):
            r = r[:n]
            if r:
                rows[v, t, : len(r)] = np.stack(r)
                valid[v, t, : len(r)] = True
    prompt = scene.frames[0].prompt if scene.frames else ""
    return Sample(*(np.stack(per_view[key]) for key in ("x0", "motion", "layout", "lane")), rows, valid, prompt)


def _pad_boxes(a: np.ndarray, n: int, axis: int) -> np.ndarray:
    pad = [(0, 0)] * a.ndim
    pad[axis] = (0, n - a.shape[axis])
    return np.pad(a, pad)


def collate(samples: Sequence[Sample], text_encoder: MockTextEncoder, views: int = 1) -> Batch:
    """Stack samples into a model batch; the view axis is dropped when ``views == 1``."""
    n = max(s.depth_rows.shape[2] for s in samples)
    t = lambda a: torch.from_numpy(np.ascontiguousarray(a))  # noqa: E731

    def stack(key):
        return np.stack([getattr(s, key) for s in samples])

    x0 = stack("x0")
    if x0.shape[1] != views:
        raise ValueError(f"samples carry {x0.shape[1]} views, model expects {views}")
    rows = np.stack([_pad_boxes(s.depth_rows, n, 2) for s in samples])
    valid = np.stack([_pad_boxes(s.depth_valid, n, 2) for s in samples])
    arrays = [x0, stack("motion"), stack("layout"), stack("lane"), rows, valid]
    if views == 1:
        arrays = [a[:, 0] for a in arrays]
    x0, motion, layout, lane, rows, valid = (t(a) for a in arrays)
    cond = Conditions(motion, layout, lane, rows, valid)
    text = t(np.stack([text_encoder(s.prompt) for s in samples]))
    return Batch(x0, text, cond)


def load_samples(data_dir) -> list[Sample]:
    paths = sorted(Path(data_dir).rglob("*.npz"))
    return [Sample.load(p) for p in paths]
