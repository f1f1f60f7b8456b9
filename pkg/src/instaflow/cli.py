"""Command-line entry point.

Exit codes: 0 success, 1 domain validation failure, 2 I/O or format error.
"""
from __future__ import annotations

import csv
import io
import json
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import click
import numpy as np

from . import scene as scene_mod
from .flow import DEFAULT_FLOW_RANGE, mock_vae_decode
from .imageio import atomic_write_bytes, write_motion_map, write_png, write_ppm
from .projection import CLASS_PALETTE

EXIT_OK, EXIT_DOMAIN, EXIT_IO = 0, 1, 2


@dataclass
class RunConfig:
    """Settings merged from an optional JSON config file and flags (flags win)."""

    seed: int = 0
    flow_range: float = DEFAULT_FLOW_RANGE
    camera: int = 0
    what: str = "all"
    wireframe: bool = False
    steps: int = 500
    sample_steps: int | None = None
    clip_len: int | None = None
    palette: list = field(default_factory=list)
    model: dict = field(default_factory=dict)

    @classmethod
    def build(cls, config_path: str | None, **flags) -> "RunConfig":
        data = {}
        if config_path:
            data = _read_json(Path(config_path), "config")
            if not isinstance(data, dict):
                _fail(EXIT_IO, "config must be a JSON object")
            unknown = set(data) - {f.name for f in fields(cls)}
            if unknown:
                _fail(EXIT_IO, f"unknown config keys: {sorted(unknown)}")
        data.update({k: v for k, v in flags.items() if v is not None})
        cfg = cls(**data)
        if cfg.flow_range <= 0:
            _fail(EXIT_DOMAIN, "flow range must be positive")
        return cfg

    def resolved_palette(self):
        pal = list(CLASS_PALETTE)
        for i, rgb in enumerate(self.palette[: len(pal)]):
            pal[i] = tuple(int(c) for c in rgb)
        return tuple(pal)


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _read_json(path: Path, what: str):
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        _fail(EXIT_IO, f"cannot read {what} {path}: {exc.strerror or exc}")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        _fail(EXIT_IO, f"parse error in {path} at line {exc.lineno}, column {exc.colno}: {exc.msg}")


def _load_scene(path: str) -> scene_mod.SceneSequence:
    data = _read_json(Path(path), "scene")
    try:
        return scene_mod.scene_from_dict(data)
    except scene_mod.SceneFormatError as exc:
        _fail(EXIT_IO, f"{path}: {exc}")


def _ensure_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        _fail(EXIT_IO, f"cannot create output directory {out}: {exc.strerror or exc}")
    if not os.access(out, os.W_OK):
        _fail(EXIT_IO, f"output directory {out} is not writable")
    return out


def _apply_threads() -> None:
    n = os.environ.get("INSTAFLOW_THREADS")
    if n:
        import torch

        torch.set_num_threads(max(1, int(n)))


@click.group()
def main():
    """Instance-flow / layout conditioning pipeline and toy ST-DiT."""
    _apply_threads()


@main.command("validate")
@click.option("--scene", "scene_path", required=True, help="Scene JSON file.")
def cmd_validate(scene_path):
    """Check a scene against the data-model invariants."""
    sc = _load_scene(scene_path)
    report = scene_mod.validate_scene(sc)
    for v in report:
        click.echo(str(v))
    if report:
        sys.exit(EXIT_DOMAIN)
    click.echo(f"ok: {len(sc)} frames")


@main.command("render")
@click.option("--scene", "scene_path", required=True)
@click.option("--out", "out_dir", required=True)
@click.option("--what", type=click.Choice(["flow", "layout", "lanes", "all"]), default=None)
@click.option("--camera", type=int, default=None)
@click.option("--flow-range", type=float, default=None)
@click.option("--wireframe/--filled", default=None)
@click.option("--png", is_flag=True, help="Also write PNG copies.")
@click.option("--dump-motion", is_flag=True, help="Write raw motion maps (.iflow).")
@click.option("--latents", is_flag=True, help="Write sample.npz with latents for training.")
@click.option("--config", "config_path", default=None)
def cmd_render(scene_path, out_dir, what, camera, flow_range, wireframe, png, dump_motion, latents, config_path):
    """Render condition images, one file per frame and condition kind."""
    from .pipeline import build_sample, render_flow, render_lanes, render_layout

    cfg = RunConfig.build(config_path, what=what, camera=camera, flow_range=flow_range, wireframe=wireframe)
    sc = _load_scene(scene_path)
    errors = [v for v in scene_mod.validate_scene(sc) if v.severity == "error"]
    if errors:
        for v in errors:
            click.echo(str(v), err=True)
        sys.exit(EXIT_DOMAIN)
    out = _ensure_dir(out_dir)
    if sc.frames and not 0 <= cfg.camera < sc.num_cameras:
        _fail(EXIT_DOMAIN, f"camera {cfg.camera} outside 0..{sc.num_cameras - 1}")
    kinds = ["flow", "layout", "lanes"] if cfg.what == "all" else [cfg.what]
    palette = cfg.resolved_palette()
    written = 0
    try:
        for t in range(len(sc)):
            for kind in kinds:
                if kind == "flow":
                    motion, img = render_flow(sc, t, cfg.camera, cfg.flow_range)
                    if dump_motion:
                        write_motion_map(out / f"frame_{t:04}_motion_{cfg.camera}.iflow", motion)
                elif kind == "layout":
                    img = render_layout(sc, t, cfg.camera, palette, cfg.wireframe)
                else:
                    img = render_lanes(sc, t, cfg.camera)
                stem = f"frame_{t:04}_{kind}_{cfg.camera}"
                write_ppm(out / f"{stem}.ppm", img)
                if png:
                    write_png(out / f"{stem}.png", img)
                written += 1
        if latents and sc.frames:
            buf = io.BytesIO()
            build_sample(sc, cameras=(cfg.camera,), flow_range=cfg.flow_range).save(buf)
            atomic_write_bytes(out / "sample.npz", buf.getvalue())
    except OSError as exc:
        _fail(EXIT_IO, f"write failed: {exc}")
    click.echo(f"wrote {written} images to {out}")


@main.command("scenario")
@click.option("--spec", "spec_path", default=None, help="Scenario spec JSON; random spec when omitted.")
@click.option("--seed", type=int, default=0)
@click.option("--frames", type=int, default=None, help="Frame count for random specs.")
@click.option("--out", "out_path", required=True)
def cmd_scenario(spec_path, seed, frames, out_path):
    """Generate a procedural scenario and write it as scene JSON."""
    from .scenario import ScenarioError, ScenarioSpec, generate_scenario, random_scenario_spec

    try:
        if spec_path:
            data = _read_json(Path(spec_path), "scenario spec")
            spec = ScenarioSpec.from_dict(data)
            if frames is not None:
                spec = ScenarioSpec.from_dict({**data, "frames": frames})
        else:
            spec = random_scenario_spec(np.random.default_rng(seed), frames=frames or 8)
        sc = generate_scenario(spec, seed)
    except ScenarioError as exc:
        _fail(EXIT_DOMAIN, str(exc))
    try:
        atomic_write_bytes(Path(out_path), scene_mod.dumps_scene(sc).encode("utf-8"))
    except OSError as exc:
        _fail(EXIT_IO, f"cannot write {out_path}: {exc.strerror or exc}")
    kinds = [e.kind for e in spec.events if e.kind != "none"]
    click.echo(f"actors={len(spec.actors)} events={len(kinds)} ({', '.join(kinds) or 'none'}) frames={len(sc)}")


@main.command("train")
@click.option("--data", "data_dir", required=True, help="Directory of sample .npz files.")
@click.option("--out", "out_path", required=True, help="Checkpoint path.")
@click.option("--steps", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--log", "log_path", default=None, help="Loss CSV path (default: <out>.loss.csv).")
@click.option("--config", "config_path", default=None)
def cmd_train(data_dir, out_path, steps, seed, log_path, config_path):
    """Train the toy ST-DiT on rendered samples."""
    from .pipeline import collate, load_samples
    from .stdit import MockTextEncoder, ToyStDiT, ToyStDiTConfig, save_checkpoint, train
    from .stdit.diffusion import make_schedule, probe_loss

    cfg = RunConfig.build(config_path, steps=steps, seed=seed)
    if not Path(data_dir).is_dir():
        _fail(EXIT_IO, f"data directory {data_dir} not found")
    samples = load_samples(data_dir)
    if not samples:
        _fail(EXIT_IO, f"no .npz samples under {data_dir}")
    try:
        mcfg = ToyStDiTConfig.from_dict({**cfg.model, "seed": cfg.seed, "views": int(samples[0].x0.shape[0])})
    except (TypeError, ValueError) as exc:
        _fail(EXIT_DOMAIN, f"bad model config: {exc}")
    try:
        model = ToyStDiT(mcfg)
        batch = collate(samples, MockTextEncoder(mcfg.d_model, mcfg.text_tokens, seed=mcfg.seed), mcfg.views)
        schedule = make_schedule(mcfg.schedule, mcfg.diffusion_steps)
        before = probe_loss(model, schedule, batch)
        losses = train(model, batch, cfg.steps, seed=cfg.seed)
        after = probe_loss(model, schedule, batch)
    except (RuntimeError, ValueError) as exc:
        _fail(EXIT_IO, f"shape mismatch: {exc}")
    if not all(np.isfinite(losses)) or not np.isfinite(after):
        _fail(EXIT_DOMAIN, "training diverged (non-finite loss)")
    try:
        save_checkpoint(model, out_path)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "loss"])
        for i, l in enumerate(losses):
            w.writerow([i, repr(l)])
        atomic_write_bytes(Path(log_path or f"{out_path}.loss.csv"), buf.getvalue().encode())
    except OSError as exc:
        _fail(EXIT_IO, f"cannot write outputs: {exc}")
    click.echo(f"steps={cfg.steps} probe_loss {before:.6f} -> {after:.6f} ({after / before:.3%})")


@main.command("generate")
@click.option("--checkpoint", "ckpt_path", required=True)
@click.option("--scene", "scene_path", required=True)
@click.option("--out", "out_dir", required=True)
@click.option("--steps", type=int, default=None, help="Sampling steps (default: full schedule).")
@click.option("--seed", type=int, default=None)
@click.option("--camera", type=int, default=None)
@click.option("--clip-len", type=int, default=None, help="Chain clips of this length autoregressively.")
@click.option("--free-first-frame", is_flag=True, help="Do not clamp frame 0 to the scene's first frame.")
@click.option("--config", "config_path", default=None)
def cmd_generate(ckpt_path, scene_path, out_dir, steps, seed, camera, clip_len, free_first_frame, config_path):
    """Sample latent video for a scene's conditions; write latents and previews."""
    import torch

    from .pipeline import build_sample, collate
    from .stdit import MockTextEncoder, generate, generate_autoregressive, load_checkpoint
    from .stdit.checkpoint import CheckpointError

    cfg = RunConfig.build(config_path, sample_steps=steps, seed=seed, camera=camera, clip_len=clip_len)
    if not Path(ckpt_path).is_file():
        _fail(EXIT_IO, f"checkpoint {ckpt_path} not found")
    try:
        model = load_checkpoint(ckpt_path)
    except (CheckpointError, OSError) as exc:
        _fail(EXIT_IO, f"cannot load checkpoint: {exc}")
    sc = _load_scene(scene_path)
    if not sc.frames:
        _fail(EXIT_DOMAIN, "scene has no frames")
    mcfg = model.config
    cams = tuple(range(cfg.camera, cfg.camera + mcfg.views))
    if cams[-1] >= sc.num_cameras:
        _fail(EXIT_DOMAIN, f"scene has {sc.num_cameras} cameras, model needs {mcfg.views} from {cfg.camera}")
    sample = build_sample(sc, cameras=cams, flow_range=cfg.flow_range)
    batch = collate([sample], MockTextEncoder(mcfg.d_model, mcfg.text_tokens, seed=mcfg.seed), mcfg.views)
    first = None if free_first_frame else batch.x0[..., 0, :, :, :]
    g = torch.Generator().manual_seed(cfg.seed)
    try:
        if cfg.clip_len:
            clip_shape = tuple(batch.x0.shape[:-4]) + (cfg.clip_len,) + tuple(batch.x0.shape[-3:])
            video = generate_autoregressive(
                model, clip_shape, batch.text, total_frames=len(sc), cond=batch.cond,
                first_frame=first, steps=cfg.sample_steps, generator=g,
            )
        else:
            video = generate(model, tuple(batch.x0.shape), batch.text, batch.cond, first, cfg.sample_steps, g)
    except (RuntimeError, ValueError) as exc:
        _fail(EXIT_IO, f"shape mismatch: {exc}")
    out = _ensure_dir(out_dir)
    lat = video[0].numpy()
    if mcfg.views == 1:
        lat = lat[None]
    buf = io.BytesIO()
    np.save(buf, lat)
    atomic_write_bytes(out / "latents.npy", buf.getvalue())
    for v in range(lat.shape[0]):
        write_ppm(out / f"input_preview_{cams[v]}.ppm", mock_vae_decode(sample.x0[v, 0]))
        for t in range(lat.shape[1]):
            write_ppm(out / f"frame_{t:04}_preview_{cams[v]}.ppm", mock_vae_decode(lat[v, t]))
    click.echo(f"generated {lat.shape[1]} frames x {lat.shape[0]} views into {out}")


if __name__ == "__main__":
    main()
