"""Command line front end.

Subcommands: verify, invert, edit, superres, translate, video-edit,
toonify, train, import-weights. Every command takes --config/--seed/--out
and writes its resolved configuration next to its outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .alignment import align_crop
from .checkpoint import (
    load_generator,
    load_mapping_table,
    load_module_state,
    import_external,
    parameter_checksum,
    save_generator,
    save_module,
)
from .config import RunConfig, load_config, resolve_generator_spec
from .encoder import (
    Encoder,
    EncoderSpec,
    FusionStack,
    TranslationNet,
    compose_style,
)
from .errors import ConfigError, VariganError
from .imageio import load_frames, load_image, pad_to_grid, save_frames, save_image
from .inversion import InversionResult, edit_latent, invert_step1, invert_step2
from .rng import substream, substream_seed
from .synthesis import Generator, NoiseField, refactor
from .tasks import (
    PairedSample,
    TaskSpec,
    derive_transferred_generator,
    load_pairs_from_manifest,
    mask_transform,
    metric_id_consistency,
    metric_id_maintenance,
    sketch_transform,
    synthesize_pairs,
    train_task,
    upsample_input,
)
from .verification import run_battery, verify_pair

__all__ = ["main"]


# -- model assembly ----------------------------------------------------------

@dataclass
class Workbench:
    cfg: RunConfig
    generator: Generator
    gex: object
    encoder: Encoder
    fusion: FusionStack
    translator: TranslationNet | None
    espec: EncoderSpec


def _build_generator(cfg: RunConfig, checkpoint: str | None) -> Generator:
    if checkpoint:
        return load_generator(checkpoint)
    g = Generator(resolve_generator_spec(cfg), seed=cfg.seed)
    g.update_mean_latent(seed=cfg.seed)
    return g


def _encoder_spec(cfg: RunConfig, g: Generator) -> EncoderSpec:
    if cfg.channel_profile == "desk":
        return EncoderSpec.desk(g.spec)
    return EncoderSpec.for_generator(g.spec)


def _bundle_paths(path: str) -> dict[str, Path]:
    p = Path(path)
    base = p if p.is_dir() else p.parent
    enc = p / "encoder.npz" if p.is_dir() else p
    return {"encoder": enc, "fusion": base / "fusion.npz",
            "translator": base / "translator.npz"}


def build_workbench(cfg: RunConfig, need_translator: bool = False) -> Workbench:
    g = _build_generator(cfg, cfg.generator_checkpoint)
    espec = _encoder_spec(cfg, g)
    encoder = Encoder(espec)
    encoder.set_latent_offset(g.w_avg)
    fusion = FusionStack(g.spec, espec)
    translator = TranslationNet() if need_translator else None
    if cfg.encoder_checkpoint:
        paths = _bundle_paths(cfg.encoder_checkpoint)
        load_module_state(paths["encoder"], encoder, "encoder")
        if paths["fusion"].exists():
            load_module_state(paths["fusion"], fusion, "fusion")
        if translator is not None and paths["translator"].exists():
            load_module_state(paths["translator"], translator, "translator")
    if need_translator and cfg.translator_checkpoint:
        load_module_state(cfg.translator_checkpoint, translator, "translator")
    return Workbench(cfg, g, refactor(g), encoder, fusion, translator, espec)


def _noise_field(cfg: RunConfig) -> NoiseField:
    if cfg.noise == "fixed":
        return NoiseField.fixed(cfg.seed)
    if cfg.noise == "random":
        return NoiseField.random(substream_seed(cfg.seed, "cli-noise"))
    return NoiseField.zero()


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out / "config.json")
    return out


def _crop_out(y: torch.Tensor, in_hw: tuple[int, int], m: int) -> torch.Tensor:
    """Trim synthesis output to the size implied by the unpadded input."""
    th, tw = (in_hw[0] * m) // 8, (in_hw[1] * m) // 8
    return y[..., :th, :tw]


def _style_source(cfg: RunConfig, image: torch.Tensor) -> torch.Tensor:
    """The aligned crop when alignment is on, the image itself otherwise."""
    if cfg.align:
        crop, _ = align_crop(image)
        return crop
    return image


# -- commands ----------------------------------------------------------------

def cmd_verify(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    if cfg.generator_checkpoint:
        g = load_generator(cfg.generator_checkpoint)
        report = verify_pair(g, refactor(g))
    else:
        report = run_battery(resolve_generator_spec(cfg), seed=cfg.seed)
    text = report.render()
    print(text)
    (out / "report.txt").write_text(text + "\n")
    return 0 if report.ok else 1


def _invert_one(wb: Workbench, cfg: RunConfig, x: torch.Tensor) -> tuple[InversionResult, torch.Tensor]:
    style = _style_source(cfg, x)
    xp, _ = pad_to_grid(x, 8)
    noise = _noise_field(cfg)
    init = invert_step1(wb.encoder, wb.gex, xp[None], style[None])
    result = invert_step2(wb.gex, xp[None], init, iterations=cfg.iterations, noise=noise)
    with torch.no_grad():
        y = wb.gex(result.f, result.w, noise=noise)
    y = _crop_out(y, x.shape[-2:], wb.generator.spec.upscale_factor)
    return result, y


def cmd_invert(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    wb = build_workbench(cfg)
    x = load_image(args.input)
    result, y = _invert_one(wb, cfg, x)
    result.save(out / "inversion.npz")
    save_image(out / "reconstruction.png", y)
    print(f"step1 loss {result.step1_loss:.4f}, "
          f"final loss {result.final_loss:.4f} after {result.iterations} iterations")
    return 0


def _parse_rows(text: str | None):
    if not text:
        return None
    if ":" in text:
        lo, hi = text.split(":", 1)
        return slice(int(lo) if lo else None, int(hi) if hi else None)
    return [int(t) for t in text.split(",")]


def cmd_edit(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    wb = build_workbench(cfg)
    direction = torch.from_numpy(np.load(args.direction)).float()
    if args.latents:
        result = InversionResult.load(args.latents)
        in_hw = None
    else:
        x = load_image(args.input)
        result, _ = _invert_one(wb, cfg, x)
        in_hw = x.shape[-2:]
    scale = cfg.edit_scale if args.scale is None else args.scale
    w_edit = edit_latent(result.w, direction, scale, rows=_parse_rows(args.rows))
    with torch.no_grad():
        y = wb.gex(result.f, w_edit, noise=_noise_field(cfg))
    if in_hw is not None:
        y = _crop_out(y, in_hw, wb.generator.spec.upscale_factor)
    save_image(out / "edited.png", y)
    InversionResult(w_edit, result.f).save(out / "edited.npz")
    print(f"applied edit at scale {scale:g}")
    return 0


def cmd_superres(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    wb = build_workbench(cfg)
    factor = args.factor if args.factor else cfg.sr_factors[0]
    task = TaskSpec.default("superres", tuple(cfg.sr_factors))
    x = load_image(args.input)
    x_up = upsample_input(x.unsqueeze(0), factor)
    xp, _ = pad_to_grid(x_up, 8)
    with torch.no_grad():
        f, skips, w = wb.encoder(xp, xp, task.depth)
        y = wb.gex(f, w, noise=_noise_field(cfg), skips=skips, fusion=wb.fusion)
    y = _crop_out(y, x_up.shape[-2:], wb.generator.spec.upscale_factor)
    save_image(out / "upsampled.png", y)
    print(f"{tuple(x.shape[-2:])} -> {tuple(y.shape[-2:])} (factor {factor})")
    return 0


def cmd_translate(cfg: RunConfig, args) -> int:
    mode = args.mode or (cfg.task if cfg.task in ("sketch", "mask") else None)
    if mode is None:
        raise ConfigError("translate needs --mode sketch|mask (or task in the config)")
    out = _out_dir(cfg)
    wb = build_workbench(cfg, need_translator=True)
    task = TaskSpec.default(mode)
    x = load_image(args.input)
    xp, _ = pad_to_grid(x, 8)
    with torch.no_grad():
        xt = wb.translator(xp.unsqueeze(0))
        f, skips = wb.encoder.encode_feature(xt, task.depth)
        w = wb.encoder.encode_style(xt)
        if args.style:
            w_tex = wb.encoder.encode_style(load_image(args.style).unsqueeze(0))
            w = compose_style(w, w_tex, task.style_split)
        y = wb.gex(f, w, noise=_noise_field(cfg), skips=skips, fusion=wb.fusion)
    y = _crop_out(y, x.shape[-2:], wb.generator.spec.upscale_factor)
    save_image(out / "translated.png", y)
    save_image(out / "intermediate.png", xt)
    print(f"translated {mode} input {tuple(x.shape[-2:])} -> {tuple(y.shape[-2:])}")
    return 0


def cmd_video_edit(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    wb = build_workbench(cfg)
    direction = torch.from_numpy(np.load(args.direction)).float()
    scale = cfg.edit_scale if args.scale is None else args.scale
    frames = load_frames(args.frames)
    noise = _noise_field(cfg)
    m = wb.generator.spec.upscale_factor
    edited = []
    with torch.no_grad():
        for fr in frames:
            xp, _ = pad_to_grid(fr, 8)
            f, skips = wb.encoder.encode_feature(xp[None], 13)
            w = wb.encoder.encode_style(_style_source(cfg, fr)[None])
            w = edit_latent(w, direction, scale)
            y = wb.gex(f, w, noise=noise, skips=skips, fusion=wb.fusion)
            edited.append(_crop_out(y, fr.shape[-2:], m)[0])
    edited = torch.stack(edited)
    save_frames(out / "frames", edited)
    metrics = {}
    if edited.shape == frames.shape:
        metrics["id_consistency"] = metric_id_consistency(edited, frames)
    metrics["id_maintenance"] = metric_id_maintenance(edited)
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2) + "\n")
    print(f"edited {len(frames)} frames; " +
          ", ".join(f"{k} {v:.4f}" for k, v in metrics.items()))
    return 0


def cmd_toonify(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    wb = build_workbench(cfg)
    if cfg.generator_prime_checkpoint:
        gp = load_generator(cfg.generator_prime_checkpoint)
    else:
        gp = derive_transferred_generator(wb.generator, seed=cfg.seed)
    gexp = refactor(gp)
    frames = load_frames(args.frames) if args.frames else load_image(args.input).unsqueeze(0)
    noise = _noise_field(cfg)
    m = wb.generator.spec.upscale_factor
    outputs = []
    with torch.no_grad():
        for fr in frames:
            xp, _ = pad_to_grid(fr, 8)
            f, skips, w = wb.encoder(xp[None], _style_source(cfg, fr)[None], 13)
            y = gexp(f, w, noise=noise, skips=skips, fusion=wb.fusion)
            outputs.append(_crop_out(y, fr.shape[-2:], m)[0])
    if args.frames:
        save_frames(out / "frames", torch.stack(outputs))
    else:
        save_image(out / "toonified.png", outputs[0])
    print(f"restyled {len(outputs)} image(s)")
    return 0


def _training_pairs(cfg: RunConfig, g: Generator, task: TaskSpec, args,
                    gp: Generator | None) -> list[PairedSample]:
    if args.manifest:
        return load_pairs_from_manifest(args.manifest)
    base_target = None
    if task.kind == "video_edit":
        if args.direction:
            v = torch.from_numpy(np.load(args.direction)).float()
        else:
            v = torch.randn(g.spec.latent_dim, generator=substream(cfg.seed, "edit-direction"))
            v = v / v.norm()
        base_target = v
    elif task.kind == "toonify":
        base_target = gp
    pairs = synthesize_pairs(g, base_target, cfg.pairs, cfg.seed, image_size=cfg.image_size)
    if task.kind == "sketch":
        pairs = [PairedSample(sketch_transform(p.target), p.target) for p in pairs]
    elif task.kind == "mask":
        pairs = [PairedSample(mask_transform(p.target), p.target) for p in pairs]
    return pairs


def cmd_train(cfg: RunConfig, args) -> int:
    kind = args.task or cfg.task
    if kind is None:
        raise ConfigError("train needs --task (or task in the config)")
    cfg = cfg.merged(task=kind)
    out = _out_dir(cfg)
    g = _build_generator(cfg, cfg.generator_checkpoint)
    base = TaskSpec.default(kind, tuple(cfg.sr_factors))
    task = TaskSpec(base.kind, base.depth, cfg.weights_for(kind),
                    base.sr_factors, base.style_split)
    gp = None
    if kind == "toonify":
        if cfg.generator_prime_checkpoint:
            gp = load_generator(cfg.generator_prime_checkpoint)
        else:
            gp = derive_transferred_generator(g, seed=cfg.seed)
            save_generator(out / "generator_prime.npz", gp)
    pairs = _training_pairs(cfg, g, task, args, gp)
    result = train_task(
        task, g, pairs, steps=cfg.steps, batch_size=cfg.batch_size, seed=cfg.seed,
        lr=cfg.lr, encoder_spec=_encoder_spec(cfg, g), generator_prime=gp,
        augment=cfg.augment, log_path=out / "history.csv")
    save_module(out / "encoder.npz", result.encoder, "encoder")
    if result.fusion is not None:
        save_module(out / "fusion.npz", result.fusion, "fusion")
    if result.translator is not None:
        save_module(out / "translator.npz", result.translator, "translator")
    if result.discriminator is not None:
        save_module(out / "discriminator.npz", result.discriminator, "discriminator")
    totals = result.totals
    print(f"{kind}: {len(pairs)} pairs, {len(totals)} steps, "
          f"loss {totals[0]:.3f} -> {totals[-1]:.3f}")
    return 0


def _flatten_external(obj, key: str | None) -> dict[str, torch.Tensor]:
    if isinstance(obj, dict) and obj and all(torch.is_tensor(v) for v in obj.values()):
        return obj
    if isinstance(obj, dict):
        candidates = [key] if key else ["g_ema", "g", "generator", "state_dict"]
        for k in candidates:
            if k in obj and isinstance(obj[k], dict):
                return _flatten_external(obj[k], None)
    raise ConfigError("could not find a flat state dict in the source file "
                      "(use --key to select one)")


def cmd_import_weights(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    src = Path(args.source)
    if src.suffix == ".npz":
        with np.load(src) as z:
            obj = {k: torch.from_numpy(np.array(z[k])) for k in z.files}
    else:
        obj = torch.load(src, map_location="cpu", weights_only=True)
    state = _flatten_external(obj, args.key)
    g = Generator(resolve_generator_spec(cfg), seed=0)
    table = load_mapping_table(args.layout)
    import_external(state, table, g, origin=str(src))
    path = save_generator(out / "generator.npz", g)
    print(f"imported {len(state)} tensors -> {path} "
          f"(checksum {parameter_checksum(g)[:12]})")
    return 0


# -- argument parsing --------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out", default=None, help="override the output directory")

    p = argparse.ArgumentParser(prog="varigan",
                                description="free-size face synthesis toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("verify", parents=[common],
                   help="run the generator self-check battery")

    sp = sub.add_parser("invert", parents=[common], help="embed an image")
    sp.add_argument("--input", required=True)
    sp.add_argument("--align", action="store_true", default=None,
                    help="derive the style input from an aligned crop")

    sp = sub.add_parser("edit", parents=[common], help="apply a latent direction")
    g1 = sp.add_mutually_exclusive_group(required=True)
    g1.add_argument("--input")
    g1.add_argument("--latents", help="reuse a saved inversion archive")
    sp.add_argument("--direction", required=True, help=".npy latent direction")
    sp.add_argument("--scale", type=float, default=None)
    sp.add_argument("--rows", default=None, help="style rows, e.g. 7:18 or 3,4,5")

    sp = sub.add_parser("superres", parents=[common], help="upsample an image")
    sp.add_argument("--input", required=True)
    sp.add_argument("--factor", type=int, default=None)

    sp = sub.add_parser("translate", parents=[common],
                        help="render a sketch or label raster as a photo")
    sp.add_argument("--input", required=True)
    sp.add_argument("--style", default=None, help="texture reference image")
    sp.add_argument("--mode", choices=("sketch", "mask"), default=None)

    sp = sub.add_parser("video-edit", parents=[common],
                        help="apply a latent direction to every frame")
    sp.add_argument("--frames", required=True, help="directory of frames")
    sp.add_argument("--direction", required=True)
    sp.add_argument("--scale", type=float, default=None)
    sp.add_argument("--align", action="store_true", default=None)

    sp = sub.add_parser("toonify", parents=[common],
                        help="restyle through a transferred generator")
    g2 = sp.add_mutually_exclusive_group(required=True)
    g2.add_argument("--input")
    g2.add_argument("--frames")
    sp.add_argument("--align", action="store_true", default=None)

    sp = sub.add_parser("train", parents=[common], help="train encoder-side modules")
    sp.add_argument("--task", choices=("inversion", "superres", "sketch", "mask",
                                       "video_edit", "toonify"), default=None)
    sp.add_argument("--manifest", default=None, help="newline-JSON pair manifest")
    sp.add_argument("--direction", default=None, help=".npy direction for video_edit")

    sp = sub.add_parser("import-weights", parents=[common],
                        help="convert an external checkpoint")
    sp.add_argument("--source", required=True)
    sp.add_argument("--layout", default="rosinality-stylegan2")
    sp.add_argument("--key", default=None, help="sub-dict key in the source file")

    return p


_HANDLERS = {
    "verify": cmd_verify,
    "invert": cmd_invert,
    "edit": cmd_edit,
    "superres": cmd_superres,
    "translate": cmd_translate,
    "video-edit": cmd_video_edit,
    "toonify": cmd_toonify,
    "train": cmd_train,
    "import-weights": cmd_import_weights,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        cfg = cfg.merged(seed=args.seed, out_dir=args.out,
                         align=getattr(args, "align", None))
        return _HANDLERS[args.command](cfg, args)
    except (VariganError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
