from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, fields, replace

import torch
from torch import nn

from ..depth import CrossAttnFuse, DepthEncoder, FourierSpec
from .layers import F64, STBlock, TimestepEmbedder, patchify, sincos_1d, sincos_2d, unpatchify, view_inflate, view_deflate


@dataclass(frozen=True)
class ToyStDiTConfig:
    d_model: int = 32
    num_heads: int = 2
    num_base_blocks: int = 4
    num_control_blocks: int = 13
    patch: int = 2
    views: int = 1
    latent_channels: int = 4
    diffusion_steps: int = 50
    schedule: str = "linear"
    first_frame_clean_prob: float = 0.2
    seed: int = 0
    mlp_ratio: int = 4
    use_pos_embed: bool = True
    fourier_bands: int = 4
    text_tokens: int = 4
    lr: float = 3e-3

    def __post_init__(self):
        if self.num_base_blocks < 2 or self.num_base_blocks % 2:
            raise ValueError("num_base_blocks must be even and >= 2")
        if self.num_control_blocks < 0:
            raise ValueError("num_control_blocks must be >= 0")
        if not 0.0 <= self.first_frame_clean_prob <= 1.0:
            raise ValueError("first_frame_clean_prob must lie in [0, 1]")
        if self.d_model % self.num_heads:
            raise ValueError("d_model must be divisible by num_heads")
        if self.patch < 1 or self.views < 1:
            raise ValueError("patch and views must be positive")
        if self.diffusion_steps <= 20:
            # the rescaled linear schedule reaches beta >= 1 at 20 steps
            raise ValueError("diffusion_steps must be > 20")

    @property
    def control_blocks(self) -> int:
        return min(self.num_control_blocks, self.num_base_blocks)

    @property
    def block_kinds(self) -> tuple[str, ...]:
        return tuple("S" if i % 2 == 0 else "T" for i in range(self.num_base_blocks))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ToyStDiTConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def override(self, **kw) -> "ToyStDiTConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


@dataclass
class Conditions:
    """Control inputs, batched and aligned with the video latent.

    ``motion``/``layout``/``lane``: (B, [v], t, h, w, 4) latents.
    ``depth_rows``: (B, [v], t, N, 8, 3) normalized corner rows, with
    ``depth_valid`` (B, [v], t, N) marking real (non-padding) boxes.
    """

    motion: torch.Tensor
    layout: torch.Tensor
    lane: torch.Tensor
    depth_rows: torch.Tensor
    depth_valid: torch.Tensor

    def frames(self, start: int, stop: int) -> "Conditions":
        sl4 = (Ellipsis, slice(start, stop), slice(None), slice(None), slice(None))
        return Conditions(
            self.motion[sl4],
            self.layout[sl4],
            self.lane[sl4],
            self.depth_rows[sl4],
            self.depth_valid[..., start:stop, :],
        )

    def zeros_like(self) -> "Conditions":
        return Conditions(
            torch.zeros_like(self.motion),
            torch.zeros_like(self.layout),
            torch.zeros_like(self.lane),
            torch.zeros_like(self.depth_rows),
            torch.zeros_like(self.depth_valid),
        )


class ToyStDiT(nn.Module):
    """Alternating S/T DiT blocks with a ControlNet-style branch over the first K blocks."""

    def __init__(self, config: ToyStDiTConfig):
        super().__init__()
        self.config = config
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.seed)
            self._build(config)

    def _build(self, config: ToyStDiTConfig) -> None:
        d, p, c = config.d_model, config.patch, config.latent_channels
        self.x_embed = nn.Linear(p * p * c, d, dtype=F64)
        self.t_embed = TimestepEmbedder(d)
        self.blocks = nn.ModuleList(STBlock(k, d, config.num_heads, config.mlp_ratio) for k in config.block_kinds)
        self.final_norm = nn.LayerNorm(d, dtype=F64)
        self.final = nn.Linear(d, p * p * c, dtype=F64)
        nn.init.zeros_(self.final.weight)
        nn.init.zeros_(self.final.bias)

        # condition encoders
        self.motion_embed = nn.Linear(p * p * 4, d, dtype=F64)
        self.layout_embed = nn.Linear(p * p * 4, d, dtype=F64)
        self.lane_embed = nn.Linear(p * p * 4, d, dtype=F64)
        self.depth_encoder = DepthEncoder(d, FourierSpec(config.fourier_bands))
        self.depth_fuse = CrossAttnFuse(d)

        k = config.control_blocks
        self.control_blocks = nn.ModuleList(copy.deepcopy(self.blocks[i]) for i in range(k))
        self.control_out = nn.ModuleList(nn.Linear(d, d, dtype=F64) for _ in range(k))
        for lin in self.control_out:
            nn.init.zeros_(lin.weight)
            nn.init.zeros_(lin.bias)

    # -- helpers -----------------------------------------------------------

    def _flatten_views(self, x: torch.Tensor) -> torch.Tensor:
        """Merge the optional view axis into the width axis."""
        if x.ndim == 6:
            if x.shape[1] != self.config.views:
                raise ValueError(f"expected {self.config.views} views, got {x.shape[1]}")
            return view_inflate(x)
        if self.config.views != 1:
            raise ValueError("multi-view model expects (B, v, t, h, w, c) input")
        return x

    def _pos_embed(self, t: int, h: int, w: int) -> torch.Tensor:
        p, d = self.config.patch, self.config.d_model
        spatial = sincos_2d(h // p, w // p, d)
        temporal = sincos_1d(torch.arange(t), d)
        return temporal[:, None, :] + spatial[None, :, :]

    def embed_latent(self, lat: torch.Tensor, layer: nn.Linear) -> torch.Tensor:
        return layer(patchify(self._flatten_views(lat), self.config.patch))

    def condition_tokens(self, cond: Conditions) -> torch.Tensor:
        """Sum of motion, depth-fused layout, and lane tokens: (B, t, s, d)."""
        h_m = self.embed_latent(cond.motion, self.motion_embed)
        h_box = self.embed_latent(cond.layout, self.layout_embed)
        h_lane = self.embed_latent(cond.lane, self.lane_embed)
        rows, valid = cond.depth_rows, cond.depth_valid
        if rows.ndim == 6:  # (B, v, t, N, 8, 3): pool boxes of all views per frame
            b, v, t, n = rows.shape[:4]
            rows = rows.permute(0, 2, 1, 3, 4, 5).reshape(b, t, v * n, 8, 3)
            valid = valid.permute(0, 2, 1, 3).reshape(b, t, v * n)
        h_depth = self.depth_encoder(rows)
        h_vehicle = self.depth_fuse(h_box, h_depth, valid.bool())
        return h_m + h_vehicle + h_lane

    # -- forward -----------------------------------------------------------

    def check_inputs(self, x, timesteps, text, cond: Conditions | None = None) -> None:
        """Raise ValueError naming the first tensor whose shape does not fit ``x``."""
        cfg = self.config
        if x.ndim not in (5, 6) or x.shape[-1] != cfg.latent_channels:
            raise ValueError(f"x: expected (B, [v], t, h, w, {cfg.latent_channels}), got {tuple(x.shape)}")
        if x.shape[-3] % cfg.patch or x.shape[-2] % cfg.patch:
            raise ValueError(f"x: spatial size {tuple(x.shape[-3:-1])} not divisible by patch {cfg.patch}")
        b, t = x.shape[0], x.shape[-4]
        if tuple(timesteps.shape) != (b, t):
            raise ValueError(f"timesteps: expected {(b, t)}, got {tuple(timesteps.shape)}")
        if text.ndim != 3 or text.shape[0] != b or text.shape[-1] != cfg.d_model:
            raise ValueError(f"text: expected ({b}, L, {cfg.d_model}), got {tuple(text.shape)}")
        if cond is None:
            return
        for name in ("motion", "layout", "lane"):
            got = tuple(getattr(cond, name).shape)
            if got[:-1] != tuple(x.shape[:-1]) or got[-1] != 4:
                raise ValueError(f"cond.{name}: expected {tuple(x.shape[:-1]) + (4,)}, got {got}")
        rows, valid = tuple(cond.depth_rows.shape), tuple(cond.depth_valid.shape)
        lead = tuple(x.shape[:-3])
        if rows[: len(lead)] != lead or rows[len(lead) + 1:] != (8, 3):
            raise ValueError(f"cond.depth_rows: expected {lead + ('N', 8, 3)}, got {rows}")
        if valid != rows[:-2]:
            raise ValueError(f"cond.depth_valid: expected {rows[:-2]}, got {valid}")

    def forward(self, x, timesteps, text, cond: Conditions | None = None):
        """Predict noise for latent ``x`` (B, [v], t, h, w, c).

        ``timesteps`` is (B, t): per-frame diffusion step, 0 meaning clean.
        ``text`` is (B, L, d_model) from the mock text encoder.
        """
        self.check_inputs(x, timesteps, text, cond)
        multi_view = x.ndim == 6
        flat = self._flatten_views(x)
        b, t, h, w, _ = flat.shape
        tokens = self.x_embed(patchify(flat, self.config.patch))
        if self.config.use_pos_embed:
            tokens = tokens + self._pos_embed(t, h, w)
        tokens = tokens + self.t_embed(timesteps)[:, :, None, :]

        ctrl = None
        if cond is not None and len(self.control_blocks):
            cond_tok = self.condition_tokens(cond)
            ctrl = tokens

        for i, block in enumerate(self.blocks):
            tokens = block(tokens, text)
            if ctrl is not None and i < len(self.control_blocks):
                ctrl = self.control_blocks[i](ctrl + cond_tok, text)
                tokens = tokens + self.control_out[i](ctrl)

        out = self.final(self.final_norm(tokens))
        out = unpatchify(out, self.config.patch, h, w)
        return view_deflate(out, self.config.views) if multi_view else out

    def control_branch_forward(self, tokens, text, cond: Conditions) -> list[torch.Tensor]:
        """Per-block residuals the control branch would add, for already-embedded tokens."""
        cond_tok = self.condition_tokens(cond)
        ctrl, residuals = tokens, []
        for i in range(len(self.control_blocks)):
            ctrl = self.control_blocks[i](ctrl + cond_tok, text)
            residuals.append(self.control_out[i](ctrl))
        return residuals
