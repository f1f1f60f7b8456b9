from __future__ import annotations

import math

import torch


def key_padding_mask(valid: torch.Tensor, dtype=torch.float64) -> torch.Tensor:
    """(..., N) boolean validity -> additive (..., 1, N) mask of 0 / -inf."""
    mask = torch.zeros(valid.shape, dtype=dtype, device=valid.device)
    mask = mask.masked_fill(~valid, float("-inf"))
    return mask.unsqueeze(-2)


def attention(q, k, v, mask=None, return_weights=False):
    """Scaled dot-product attention, ``softmax(q k^T / sqrt(d) + mask) v``.

    ``mask`` is additive (0 or -inf) and broadcast against the (..., Lq, Lk)
    score matrix. A query whose every key is masked (or that has no keys)
    gets a zero output row instead of NaN.
    """
    scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    if mask is not None:
        scores = scores + mask
    dead = torch.isneginf(scores).all(dim=-1, keepdim=True)
    scores = scores.masked_fill(dead, 0.0)
    weights = torch.softmax(scores, dim=-1).masked_fill(dead, 0.0)
    out = weights @ v
    return (out, weights) if return_weights else out
