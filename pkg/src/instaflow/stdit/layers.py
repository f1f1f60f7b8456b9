"""Building blocks of the toy spatial-temporal DiT.

Latents are channels-last: ``(..., t, h, w, c)``, with an optional view axis
in front of time for multi-camera input. Tokens are ``(B, t, s, d)``.
"""
from __future__ import annotations

import math

import torch
from torch import nn

from ..attention import attention

F64 = torch.float64


def patchify(z: torch.Tensor, p: int) -> torch.Tensor:
    """(..., t, h, w, c) -> (..., t, s, p*p*c), patches in row-major order.

    Within a patch the layout is (row, col, channel).
    """
    *lead, t, h, w, c = z.shape
    if h % p or w % p:
        raise ValueError(f"latent {h}x{w} not divisible by patch size {p}")
    x = z.reshape(*lead, t, h // p, p, w // p, p, c)
    n = len(lead)
    x = x.permute(*range(n), n, n + 1, n + 3, n + 2, n + 4, n + 5)
    return x.reshape(*lead, t, (h // p) * (w // p), p * p * c)


def unpatchify(tokens: torch.Tensor, p: int, h: int, w: int) -> torch.Tensor:
    """Exact inverse of :func:`patchify` for a known latent size."""
    *lead, t, s, pc = tokens.shape
    c = pc // (p * p)
    if s != (h // p) * (w // p) or pc != p * p * c:
        raise ValueError(f"token shape {tuple(tokens.shape)} incompatible with {h}x{w}, p={p}")
    n = len(lead)
    x = tokens.reshape(*lead, t, h // p, w // p, p, p, c)
    x = x.permute(*range(n), n, n + 1, n + 3, n + 2, n + 4, n + 5)
    return x.reshape(*lead, t, h, w, c)


def view_inflate(x: torch.Tensor) -> torch.Tensor:
    """(..., v, t, h, w, c) -> (..., t, h, w*v, c), views side by side in index order."""
    *lead, v, t, h, w, c = x.shape
    n = len(lead)
    y = x.permute(*range(n), n + 1, n + 2, n, n + 3, n + 4)
    return y.reshape(*lead, t, h, v * w, c)


def view_deflate(x: torch.Tensor, views: int) -> torch.Tensor:
    *lead, t, h, wv, c = x.shape
    if wv % views:
        raise ValueError(f"width {wv} not divisible by {views} views")
    n = len(lead)
    y = x.reshape(*lead, t, h, views, wv // views, c)
    return y.permute(*range(n), n + 2, n, n + 1, n + 3, n + 4)


def sincos_1d(positions: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=F64) / max(half, 1))
    ang = positions.to(F64).unsqueeze(-1) * freqs
    emb = torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros(*emb.shape[:-1], 1, dtype=F64)], dim=-1)
    return emb


def sincos_2d(grid_h: int, grid_w: int, dim: int) -> torch.Tensor:
    """(grid_h * grid_w, dim): first half encodes rows, second half columns."""
    rows = torch.arange(grid_h).repeat_interleave(grid_w)
    cols = torch.arange(grid_w).repeat(grid_h)
    return torch.cat([sincos_1d(rows, dim // 2), sincos_1d(cols, dim - dim // 2)], dim=-1)


class SelfAttention(nn.Module):
    """Multi-head self-attention along one token axis of a (B, t, s, d) tensor.

    ``axis="spatial"`` mixes tokens within a frame; ``axis="temporal"`` mixes
    frames at a fixed spatial index.
    """

    def __init__(self, d_model: int, num_heads: int, axis: str):
        super().__init__()
        if axis not in ("spatial", "temporal"):
            raise ValueError(f"unknown attention axis {axis!r}")
        if d_model % num_heads:
            raise ValueError("d_model must be divisible by num_heads")
        self.axis = axis
        self.heads = num_heads
        self.qkv = nn.Linear(d_model, 3 * d_model, dtype=F64)
        self.proj = nn.Linear(d_model, d_model, dtype=F64)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, s, d = x.shape
        seq = x.reshape(b * t, s, d) if self.axis == "spatial" else x.transpose(1, 2).reshape(b * s, t, d)
        n, l, _ = seq.shape
        q, k, v = self.qkv(seq).reshape(n, l, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        out = attention(q, k, v).transpose(1, 2).reshape(n, l, d)
        out = self.proj(out)
        if self.axis == "spatial":
            return out.reshape(b, t, s, d)
        return out.reshape(b, s, t, d).transpose(1, 2)


def spatial_self_attention(tokens: torch.Tensor, layer: SelfAttention) -> torch.Tensor:
    if layer.axis != "spatial":
        raise ValueError("layer is not spatial")
    return layer(tokens)


def temporal_self_attention(tokens: torch.Tensor, layer: SelfAttention) -> torch.Tensor:
    if layer.axis != "temporal":
        raise ValueError("layer is not temporal")
    return layer(tokens)


class TextCrossAttention(nn.Module):
    def __init__(self, d_model: int, num_heads: int):
        super().__init__()
        self.heads = num_heads
        self.q = nn.Linear(d_model, d_model, dtype=F64)
        self.kv = nn.Linear(d_model, 2 * d_model, dtype=F64)
        self.proj = nn.Linear(d_model, d_model, dtype=F64)

    def forward(self, x: torch.Tensor, text: torch.Tensor) -> torch.Tensor:
        b, t, s, d = x.shape
        dh = d // self.heads
        q = self.q(x.reshape(b, t * s, d)).reshape(b, t * s, self.heads, dh).transpose(1, 2)
        k, v = self.kv(text).reshape(b, text.shape[1], 2, self.heads, dh).permute(2, 0, 3, 1, 4)
        out = attention(q, k, v).transpose(1, 2).reshape(b, t * s, d)
        return self.proj(out).reshape(b, t, s, d)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, ratio: int = 4):
        super().__init__()
        self.fc1 = nn.Linear(d_model, ratio * d_model, dtype=F64)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(ratio * d_model, d_model, dtype=F64)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class STBlock(nn.Module):
    """Pre-norm block: self-attention (spatial or temporal), text cross-attention, FFN."""

    def __init__(self, kind: str, d_model: int, num_heads: int, mlp_ratio: int = 4):
        super().__init__()
        if kind not in ("S", "T"):
            raise ValueError(f"block kind must be 'S' or 'T', got {kind!r}")
        self.kind = kind
        self.norm1 = nn.LayerNorm(d_model, dtype=F64)
        self.attn = SelfAttention(d_model, num_heads, "spatial" if kind == "S" else "temporal")
        self.norm2 = nn.LayerNorm(d_model, dtype=F64)
        self.cross = TextCrossAttention(d_model, num_heads)
        self.norm3 = nn.LayerNorm(d_model, dtype=F64)
        self.ffn = FeedForward(d_model, mlp_ratio)

    def zero_output_projections(self) -> None:
        for lin in (self.attn.proj, self.cross.proj, self.ffn.fc2):
            nn.init.zeros_(lin.weight)
            nn.init.zeros_(lin.bias)

    def forward(self, x: torch.Tensor, text: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        x = x + self.cross(self.norm2(x), text)
        return x + self.ffn(self.norm3(x))


def base_block_forward(block: STBlock, tokens: torch.Tensor, text: torch.Tensor) -> torch.Tensor:
    return block(tokens, text)


class TimestepEmbedder(nn.Module):
    def __init__(self, d_model: int, freq_dim: int = 64):
        super().__init__()
        self.freq_dim = freq_dim
        self.mlp = nn.Sequential(
            nn.Linear(freq_dim, d_model, dtype=F64), nn.SiLU(), nn.Linear(d_model, d_model, dtype=F64)
        )

    def forward(self, timesteps: torch.Tensor) -> torch.Tensor:
        return self.mlp(sincos_1d(timesteps, self.freq_dim))
