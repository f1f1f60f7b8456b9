"""Binary checkpoint format (little-endian).

    magic   b"TSTD1\\0"
    u32     config JSON length, then UTF-8 config JSON
    repeated until EOF:
        u32 name length, UTF-8 name
        u32 rank, rank x u32 dims
        f64 data, row-major
"""
from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np
import torch

from ..imageio import atomic_write_bytes
from .model import ToyStDiT, ToyStDiTConfig

MAGIC = b"TSTD1\0"


class CheckpointError(ValueError):
    pass


def dumps_checkpoint(model: ToyStDiT) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    cfg = json.dumps(model.config.to_dict(), sort_keys=True).encode()
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().numpy().astype("<f8")
        raw = name.encode()
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr).tobytes())
    return buf.getvalue()


def loads_checkpoint(data: bytes) -> ToyStDiT:
    if not data.startswith(MAGIC):
        raise CheckpointError("bad checkpoint magic")
    view = memoryview(data)
    pos = len(MAGIC)

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError("truncated checkpoint")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    (cfg_len,) = struct.unpack("<I", take(4))
    config = ToyStDiTConfig.from_dict(json.loads(bytes(take(cfg_len))))
    state = {}
    while pos < len(data):
        (name_len,) = struct.unpack("<I", take(4))
        name = bytes(take(name_len)).decode()
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(take(8 * count), dtype="<f8").reshape(dims)
        state[name] = torch.from_numpy(arr.astype(np.float64))
    model = ToyStDiT(config)
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointError(str(exc)) from exc
    return model


def save_checkpoint(model: ToyStDiT, path) -> None:
    atomic_write_bytes(Path(path), dumps_checkpoint(model))


def load_checkpoint(path) -> ToyStDiT:
    return loads_checkpoint(Path(path).read_bytes())
