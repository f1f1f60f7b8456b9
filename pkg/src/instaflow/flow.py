"""Instance flow: per-track displacement since the last visible frame, rendered
as motion maps, RGB flow images, and mock-VAE motion latents."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .projection import depth_order, project_box
from .raster import fill_convex
from .scene import SceneSequence

DEFAULT_FLOW_RANGE = 10.0
LATENT_DOWNSAMPLE = 8

# Fixed 3 -> 4 channel lift used by the mock VAE (rows: output channels).
LATENT_LIFT = np.array(
    [
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
    ]
)


class TrackNotFoundError(KeyError):
    pass


class FlowOffset(NamedTuple):
    dx: float
    dy: float
    dz: float


ZERO_OFFSET = FlowOffset(0.0, 0.0, 0.0)


def _visibility(scene: SceneSequence, track_id: int) -> list[bool]:
    vis = []
    found = False
    for frame in scene.frames:
        inst = frame.instance(track_id)
        found |= inst is not None
        vis.append(inst is not None and inst.visible)
    if not found:
        raise TrackNotFoundError(track_id)
    return vis


def last_visible(scene: SceneSequence, track_id: int, t: int) -> int | None:
    """Most recent frame before ``t`` where ``track_id`` was visible, else None."""
    if not 0 <= t < len(scene):
        raise IndexError(f"frame {t} out of range for {len(scene)} frames")
    vis = _visibility(scene, track_id)
    for tp in range(t - 1, -1, -1):
        if vis[tp]:
            return tp
    return None


def flow_offset(scene: SceneSequence, track_id: int, t: int) -> FlowOffset:
    tau = last_visible(scene, track_id, t)
    cur = scene.frames[t].instance(track_id)
    if tau is None or cur is None or not cur.visible:
        return ZERO_OFFSET
    prev = scene.frames[tau].instance(track_id)
    d = cur.box.center - prev.box.center
    return FlowOffset(float(d[0]), float(d[1]), float(d[2]))


def offset_map(scene: SceneSequence, t: int) -> list[tuple[int, FlowOffset]]:
    """Offsets for every instance present in frame ``t``, sorted by track_id."""
    if not 0 <= t < len(scene):
        raise IndexError(f"frame {t} out of range for {len(scene)} frames")
    ids = sorted(inst.track_id for inst in scene.frames[t].instances)
    return [(tid, flow_offset(scene, tid, t)) for tid in ids]


def rasterize_motion_map(scene: SceneSequence, camera: int, t: int) -> np.ndarray:
    """H x W x 3 float map; pixels inside an instance's projected hull get its offset.

    Overlaps resolve to the nearer instance. Frame 0 is always zero.
    """
    frame = scene.frames[t]
    cam = frame.cameras[camera]
    k = cam.intrinsics
    out = np.zeros((k.height, k.width, 3), dtype=np.float64)
    if t == 0:
        return out
    offsets = dict(offset_map(scene, t))
    boxes = [project_box(i.box, frame.ego_pose, cam.extrinsics, k) for i in frame.instances if i.visible]
    for idx in reversed(depth_order(boxes)):
        b = boxes[idx]
        if b.behind_count == 8:
            continue
        fill_convex(out, b.visible_uv(), offsets[b.track_id])
    return out


def flow_to_rgb(motion: np.ndarray, flow_range: float = DEFAULT_FLOW_RANGE) -> np.ndarray:
    """Encode x/y/z offsets into R/G/B: ``round(128 + 127 * clamp(c / r, -1, 1))``."""
    if flow_range <= 0:
        raise ValueError("flow_range must be positive")
    scaled = np.clip(np.asarray(motion, dtype=np.float64) / flow_range, -1.0, 1.0)
    return np.rint(128.0 + 127.0 * scaled).astype(np.uint8)


def rgb_to_flow(image: np.ndarray, flow_range: float = DEFAULT_FLOW_RANGE) -> np.ndarray:
    """Inverse of :func:`flow_to_rgb`. Byte 0 decodes like byte 1 (``-flow_range``)."""
    if flow_range <= 0:
        raise ValueError("flow_range must be positive")
    c = np.maximum(np.asarray(image, dtype=np.float64), 1.0)
    return (c - 128.0) / 127.0 * flow_range


def mock_vae_encode(image: np.ndarray) -> np.ndarray:
    """Stand-in video autoencoder: 8x8 average pool then a fixed 3->4 lift.

    8-bit channels are centered first (128 -> 0, 255 -> 1), so a zero-flow
    image encodes to a zero latent. Input (..., H, W, 3), output
    (..., H/8, W/8, 4).
    """
    img = np.asarray(image)
    *lead, h, w, c = img.shape
    f = LATENT_DOWNSAMPLE
    if c != 3:
        raise ValueError(f"expected 3 channels, got {c}")
    if h % f or w % f:
        raise ValueError(f"image size {h}x{w} not divisible by {f}")
    x = (img.astype(np.float64) - 128.0) / 127.0
    x = x.reshape(*lead, h // f, f, w // f, f, 3).mean(axis=(-4, -2))
    return x @ LATENT_LIFT.T


def mock_vae_decode(latent: np.ndarray) -> np.ndarray:
    """Least-squares inverse lift followed by nearest-neighbour 8x upsampling."""
    lat = np.asarray(latent, dtype=np.float64)
    x = lat @ np.linalg.pinv(LATENT_LIFT).T
    img = np.clip(np.rint(128.0 + 127.0 * x), 0, 255).astype(np.uint8)
    f = LATENT_DOWNSAMPLE
    return img.repeat(f, axis=-3).repeat(f, axis=-2)


def encode_motion_latent(flow_image: np.ndarray) -> np.ndarray:
    return mock_vae_encode(flow_image)
