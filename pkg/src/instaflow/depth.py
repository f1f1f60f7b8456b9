"""Depth-order encoder: Fourier features of projected corners fed to an MLP,
then fused into layout tokens by cross-attention."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .attention import attention, key_padding_mask
from .projection import ProjectedBox
from .scene import CameraIntrinsics

DEFAULT_Z_MAX = 80.0


@dataclass(frozen=True)
class FourierSpec:
    num_bands: int = 4
    base: float = 2.0
    include_input: bool = True

    def __post_init__(self):
        if self.num_bands < 1:
            raise ValueError("num_bands must be >= 1")

    @property
    def dim_per_scalar(self) -> int:
        return 2 * self.num_bands + int(self.include_input)

    def embed_dim(self, n_corners: int = 8, n_components: int = 3) -> int:
        return n_corners * n_components * self.dim_per_scalar


def fourier_features(x, spec: FourierSpec) -> torch.Tensor:
    """Per-scalar features, shape ``x.shape + (dim_per_scalar,)``.

    Layout per scalar s: ``[s,] sin(b^0 pi s), cos(b^0 pi s), sin(b^1 pi s), ...``
    """
    x = torch.as_tensor(x, dtype=torch.float64)
    freqs = spec.base ** torch.arange(spec.num_bands, dtype=torch.float64) * math.pi
    ang = x.unsqueeze(-1) * freqs
    trig = torch.stack([torch.sin(ang), torch.cos(ang)], dim=-1).flatten(-2)
    if spec.include_input:
        trig = torch.cat([x.unsqueeze(-1), trig], dim=-1)
    return trig


def fourier_embed(corners, spec: FourierSpec) -> torch.Tensor:
    """(..., n_corners, 3) -> (..., n_corners * 3 * dim_per_scalar), corner-major."""
    return fourier_features(corners, spec).flatten(-3)


def corner_rows(pbox: ProjectedBox, k: CameraIntrinsics, z_max: float = DEFAULT_Z_MAX) -> np.ndarray:
    """Normalized ``[u/W, v/H, z_c/z_max]`` per corner; behind corners are (0, 0, 0)."""
    rows = np.zeros((8, 3))
    f = pbox.front
    rows[f, 0] = pbox.uv[f, 0] / k.width
    rows[f, 1] = pbox.uv[f, 1] / k.height
    rows[f, 2] = pbox.depth[f] / z_max
    return rows


class DepthEncoder(nn.Module):
    def __init__(self, d_model: int = 64, spec: FourierSpec = FourierSpec(), hidden: int | None = None):
        super().__init__()
        self.spec = spec
        self.in_dim = spec.embed_dim()
        hidden = hidden or 4 * d_model
        self.fc1 = nn.Linear(self.in_dim, hidden, dtype=torch.float64)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, d_model, dtype=torch.float64)

    def forward(self, rows: torch.Tensor) -> torch.Tensor:
        """(..., 8, 3) corner rows -> (..., d_model)."""
        emb = fourier_embed(rows, self.spec)
        if emb.shape[-1] != self.in_dim:
            raise ValueError(f"embedding dim {emb.shape[-1]} != MLP input {self.in_dim}")
        return self.fc2(self.act(self.fc1(emb)))


def depth_encode(pbox: ProjectedBox, k: CameraIntrinsics, encoder: DepthEncoder, z_max: float = DEFAULT_Z_MAX):
    return encoder(torch.from_numpy(corner_rows(pbox, k, z_max)))


def cross_attention(h_box, h_depth, w_q, w_k, w_v, w_o, depth_valid=None, residual=True, return_weights=False):
    """Single-head cross-attention of box tokens (queries) over depth tokens.

    ``h_box`` is (..., S, d), ``h_depth`` (..., N, d); weights are (d, d)
    matrices applied as ``x @ W``. Invalid or absent depth tokens contribute
    nothing, so an empty set returns ``h_box`` unchanged when ``residual``.
    """
    if h_box.shape[-1] != w_q.shape[0] or h_depth.shape[-1] != w_k.shape[0]:
        raise ValueError(f"dimension mismatch: box {h_box.shape[-1]}, depth {h_depth.shape[-1]}, W {w_q.shape}")
    mask = None if depth_valid is None else key_padding_mask(depth_valid, h_box.dtype)
    out, weights = attention(h_box @ w_q, h_depth @ w_k, h_depth @ w_v, mask, return_weights=True)
    out = out @ w_o
    if residual:
        out = h_box + out
    return (out, weights) if return_weights else out


class CrossAttnFuse(nn.Module):
    def __init__(self, d_model: int, residual: bool = True):
        super().__init__()
        self.residual = residual
        std = d_model**-0.5
        self.w_q = nn.Parameter(torch.randn(d_model, d_model, dtype=torch.float64) * std)
        self.w_k = nn.Parameter(torch.randn(d_model, d_model, dtype=torch.float64) * std)
        self.w_v = nn.Parameter(torch.randn(d_model, d_model, dtype=torch.float64) * std)
        self.w_o = nn.Parameter(torch.randn(d_model, d_model, dtype=torch.float64) * std)

    def forward(self, h_box, h_depth, depth_valid=None):
        return cross_attention(
            h_box, h_depth, self.w_q, self.w_k, self.w_v, self.w_o, depth_valid, residual=self.residual
        )
