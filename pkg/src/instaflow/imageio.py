"""File output helpers: atomic writes, PPM/PNG images, motion-map dumps."""
from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

IFLOW_MAGIC = b"IFLOW1\0\0"


def _umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


def atomic_write_bytes(path: Path, data: bytes) -> None:
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.chmod(tmp, 0o666 & ~_umask())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_ppm(image: np.ndarray) -> bytes:
    img = np.ascontiguousarray(image, dtype=np.uint8)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"PPM needs an HxWx3 image, got {img.shape}")
    h, w, _ = img.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + img.tobytes()


def decode_ppm(data: bytes) -> np.ndarray:
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P6" or int(tokens[3]) != 255:
        raise ValueError("only 8-bit binary PPM (P6) is supported")
    w, h = int(tokens[1]), int(tokens[2])
    body = data[pos + 1:pos + 1 + w * h * 3]
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).copy()


def write_ppm(path, image: np.ndarray) -> None:
    atomic_write_bytes(Path(path), encode_ppm(image))


def read_ppm(path) -> np.ndarray:
    return decode_ppm(Path(path).read_bytes())


def write_png(path, image: np.ndarray) -> None:
    import io

    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(image, dtype=np.uint8), "RGB").save(buf, format="PNG")
    atomic_write_bytes(Path(path), buf.getvalue())


def encode_motion_map(motion: np.ndarray) -> bytes:
    """16-byte header (magic, u32 H, u32 W) then row-major little-endian f64 H x W x 3."""
    m = np.asarray(motion, dtype="<f8")
    h, w, c = m.shape
    if c != 3:
        raise ValueError("motion map must be HxWx3")
    return IFLOW_MAGIC + struct.pack("<II", h, w) + np.ascontiguousarray(m).tobytes()


def decode_motion_map(data: bytes) -> np.ndarray:
    if data[:8] != IFLOW_MAGIC:
        raise ValueError("bad motion-map magic")
    h, w = struct.unpack("<II", data[8:16])
    body = data[16:]
    if len(body) != h * w * 3 * 8:
        raise ValueError("motion-map payload size mismatch")
    return np.frombuffer(body, dtype="<f8").reshape(h, w, 3).astype(np.float64)


def write_motion_map(path, motion: np.ndarray) -> None:
    atomic_write_bytes(Path(path), encode_motion_map(motion))
