"""DDPM noise schedule, training objective, and ancestral sampling."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from .layers import F64
from .model import Conditions, ToyStDiT

log = logging.getLogger(__name__)


class LinearSchedule:
    """Linear-beta schedule rescaled to ``n`` steps.

    ``alphas_cumprod[k]`` is the signal level at step k; index 0 is the
    clean latent (exactly 1), indices 1..n are noised.
    """

    def __init__(self, n: int):
        scale = 1000.0 / n
        self.n = n
        self.betas = torch.linspace(scale * 1e-4, scale * 0.02, n, dtype=F64)
        if float(self.betas[-1]) >= 1.0:
            raise ValueError(f"linear schedule needs more than 20 steps, got {n}")
        self.alphas_cumprod = torch.cat([torch.ones(1, dtype=F64), torch.cumprod(1.0 - self.betas, 0)])

    def q_sample(self, x0, timesteps, noise):
        """Noise ``x0`` (B, [v], t, h, w, c) to per-frame ``timesteps`` (B, t)."""
        ac = self.alphas_cumprod[timesteps]
        shape = (ac.shape[0],) + (1,) * (x0.ndim - 5) + (ac.shape[1], 1, 1, 1)
        ac = ac.reshape(shape)
        return ac.sqrt() * x0 + (1.0 - ac).sqrt() * noise


def make_schedule(name: str, n: int) -> LinearSchedule:
    if name != "linear":
        raise ValueError(f"unsupported noise schedule {name!r}")
    return LinearSchedule(n)


@dataclass
class Batch:
    x0: torch.Tensor  # (B, [v], t, h, w, c)
    text: torch.Tensor  # (B, L, d)
    cond: Conditions | None = None


def sample_timesteps(batch_size: int, frames: int, n: int, clean_prob: float, generator: torch.Generator):
    """Uniform step in 1..n per sample; with ``clean_prob`` frame 0 is kept clean (step 0)."""
    k = torch.randint(1, n + 1, (batch_size, 1), generator=generator).expand(batch_size, frames).clone()
    clean = torch.rand(batch_size, generator=generator) < clean_prob
    k[clean, 0] = 0
    return k


def masked_mse(pred, target, timesteps):
    """Mean squared error over frames whose timestep is non-zero."""
    m = (timesteps > 0).to(F64)
    m = m.reshape((m.shape[0],) + (1,) * (pred.ndim - 5) + (m.shape[1], 1, 1, 1))
    m = m.expand_as(pred)
    return ((pred - target) ** 2 * m).sum() / m.sum().clamp_min(1.0)


def diffusion_loss(model: Callable, schedule: LinearSchedule, batch: Batch, generator: torch.Generator, clean_prob: float):
    x0 = batch.x0
    b, t = x0.shape[0], x0.shape[-4]
    timesteps = sample_timesteps(b, t, schedule.n, clean_prob, generator)
    noise = torch.randn(x0.shape, generator=generator, dtype=F64)
    x_t = schedule.q_sample(x0, timesteps, noise)
    pred = model(x_t, timesteps, batch.text, batch.cond)
    return masked_mse(pred, noise, timesteps)


def train_step(model: ToyStDiT, optimizer, schedule, batch: Batch, generator: torch.Generator) -> float:
    optimizer.zero_grad(set_to_none=True)
    loss = diffusion_loss(model, schedule, batch, generator, model.config.first_frame_clean_prob)
    loss.backward()
    optimizer.step()
    return float(loss.detach())


def probe_loss(model: ToyStDiT, schedule, batch: Batch, seed: int = 12345, repeats: int = 4) -> float:
    """Loss averaged over a fixed set of noise draws; comparable across training."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        vals = [
            float(diffusion_loss(model, schedule, batch, g, model.config.first_frame_clean_prob))
            for _ in range(repeats)
        ]
    return float(np.mean(vals))


def train(model: ToyStDiT, batch: Batch, steps: int, seed: int | None = None, lr: float | None = None, callback=None):
    """Adam on a fixed batch; returns the per-step training losses."""
    cfg = model.config
    schedule = make_schedule(cfg.schedule, cfg.diffusion_steps)
    g = torch.Generator().manual_seed(cfg.seed if seed is None else seed)
    opt = torch.optim.Adam(model.parameters(), lr=lr or cfg.lr)
    losses = []
    for step in range(steps):
        loss = train_step(model, opt, schedule, batch, g)
        losses.append(loss)
        if callback is not None:
            callback(step, loss)
        if step % 100 == 0:
            log.debug("step %d loss %.6f", step, loss)
    return losses


def sampling_timesteps(n: int, steps: int) -> list[int]:
    """Descending, distinct schedule indices in [1, n] used by the sampler."""
    if steps > n:
        raise ValueError(f"steps {steps} exceeds schedule length {n}")
    return sorted({int(k) for k in np.rint(np.linspace(n, 1, steps))}, reverse=True)


@torch.no_grad()
def generate(
    model: ToyStDiT,
    shape: tuple[int, ...],
    text: torch.Tensor,
    cond: Conditions | None = None,
    first_frame: torch.Tensor | None = None,
    steps: int | None = None,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """DDPM ancestral sampling from pure noise.

    ``shape`` is (B, [v], t, h, w, c). When ``first_frame`` (B, [v], h, w, c)
    is given, frame 0 is held at it throughout and fed with timestep 0.
    ``steps=0`` returns the initial noise.
    """
    schedule = make_schedule(model.config.schedule, model.config.diffusion_steps)
    steps = schedule.n if steps is None else steps
    g = generator or torch.Generator().manual_seed(model.config.seed)
    x = torch.randn(shape, generator=g, dtype=F64)
    if steps == 0:
        return x
    b, t = shape[0], shape[-4]
    ac = schedule.alphas_cumprod

    def clamp(z):
        if first_frame is not None:
            z = z.clone()
            z[..., 0, :, :, :] = first_frame
        return z

    x = clamp(x)
    ks = sampling_timesteps(schedule.n, steps)
    for i, k in enumerate(ks):
        k_prev = ks[i + 1] if i + 1 < len(ks) else 0
        ts = torch.full((b, t), k, dtype=torch.long)
        if first_frame is not None:
            ts[:, 0] = 0
        eps = model(x, ts, text, cond)
        a_t, a_prev = ac[k], ac[k_prev]
        beta = 1.0 - a_t / a_prev
        x0_pred = (x - (1.0 - a_t).sqrt() * eps) / a_t.sqrt()
        mean = (a_prev.sqrt() * beta / (1.0 - a_t)) * x0_pred + ((1.0 - beta).sqrt() * (1.0 - a_prev) / (1.0 - a_t)) * x
        if k_prev > 0:
            var = beta * (1.0 - a_prev) / (1.0 - a_t)
            mean = mean + var.sqrt() * torch.randn(shape, generator=g, dtype=F64)
        x = clamp(mean)
    return x


def clip_starts(total_frames: int, clip_len: int) -> list[int]:
    """Start indices of overlapping clips (one shared frame) covering ``total_frames``."""
    if clip_len < 2:
        raise ValueError("clip_len must be >= 2 for autoregressive chaining")
    starts, s = [0], 0
    while s + clip_len < total_frames:
        s += clip_len - 1
        starts.append(s)
    return starts


@torch.no_grad()
def generate_autoregressive(
    model: ToyStDiT,
    clip_shape: tuple[int, ...],
    text: torch.Tensor,
    num_clips: int | None = None,
    total_frames: int | None = None,
    cond: Conditions | None = None,
    first_frame: torch.Tensor | None = None,
    steps: int | None = None,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Chain clips, each conditioned on the previous clip's last frame.

    ``num_clips`` clips of length L give ``L + (num_clips - 1) * (L - 1)``
    frames; with ``total_frames`` the final clip is shortened to fit.
    ``cond`` must then cover every output frame.
    """
    L = clip_shape[-4]
    if total_frames is None:
        if num_clips is None:
            raise ValueError("give num_clips or total_frames")
        total_frames = L + (num_clips - 1) * (L - 1)
    g = generator or torch.Generator().manual_seed(model.config.seed)
    frames: list[torch.Tensor] = []
    anchor = first_frame
    for start in clip_starts(total_frames, L):
        n = min(L, total_frames - start)
        shape = clip_shape[:-4] + (n,) + tuple(clip_shape[-3:])
        clip_cond = None if cond is None else cond.frames(start, start + n)
        clip = generate(model, shape, text, clip_cond, anchor, steps, g)
        new = clip.unbind(dim=-4)
        frames.extend(new if start == 0 else new[1:])
        anchor = new[-1]
    return torch.stack(frames, dim=-4)
