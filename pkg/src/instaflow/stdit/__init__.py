"""Desk-scale spatial-temporal diffusion transformer with a control branch."""
from .checkpoint import load_checkpoint, save_checkpoint
from .diffusion import Batch, LinearSchedule, diffusion_loss, generate, generate_autoregressive, probe_loss, train, train_step
from .layers import (
    STBlock,
    base_block_forward,
    patchify,
    spatial_self_attention,
    temporal_self_attention,
    unpatchify,
    view_deflate,
    view_inflate,
)
from .model import Conditions, ToyStDiT, ToyStDiTConfig
from .text import MockTextEncoder

__all__ = [
    "Batch",
    "Conditions",
    "LinearSchedule",
    "MockTextEncoder",
    "STBlock",
    "ToyStDiT",
    "ToyStDiTConfig",
    "base_block_forward",
    "diffusion_loss",
    "generate",
    "generate_autoregressive",
    "load_checkpoint",
    "patchify",
    "probe_loss",
    "save_checkpoint",
    "spatial_self_attention",
    "temporal_self_attention",
    "train",
    "train_step",
    "unpatchify",
    "view_deflate",
    "view_inflate",
]
