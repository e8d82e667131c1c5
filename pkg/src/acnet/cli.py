"""Command-line entry point: ``acnet {train|eval|sr|fuse|degrade}``."""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import shutil
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import data as D
from .config import ConfigError, RunConfig, load_config
from .metrics import evaluate, model_upscaler
from .model import UnsupportedScaleError, fuse_model, param_count

log = logging.getLogger("acnet")

U64_MAX = 2**64 - 1


class UsageError(Exception):
    pass


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v <= U64_MAX:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _non_negative(kind):
    def parse(text: str):
        v = kind(text)
        if v < 0:
            raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
        return v
    return parse


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value run configuration file")
    common.add_argument("--scale", type=int, help="upscaling factor (2, 3 or 4)")
    common.add_argument("--sigma", type=_non_negative(float), help="noise level on the 0-255 scale")
    common.add_argument("--seed", type=_seed, help="random seed (unsigned 64-bit)")
    common.add_argument("--fused", action="store_true", help="fuse asymmetric branches before inference")
    common.add_argument("--shave", type=_non_negative(int), help="border width excluded from metrics")
    common.add_argument("--deterministic", action="store_true",
                        help="single-threaded numerics for bitwise reproducible results")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="acnet", description="Asymmetric CNN super-resolution.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--steps", type=_non_negative(int), help="override the configured step count")
    p.add_argument("--data", help="directory of HR training images")
    p.add_argument("--checkpoint", help="where to write checkpoints")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--log", help="per-step loss log (TSV)")

    p = sub.add_parser("eval", parents=[common], help="PSNR/SSIM on a directory of HR images")
    p.add_argument("--checkpoint", help="model to evaluate")
    p.add_argument("--bicubic", action="store_true", help="evaluate plain bicubic upscaling instead")
    p.add_argument("--data", help="directory of HR test images")
    p.add_argument("--output", help="report path prefix; writes PREFIX.txt and PREFIX.tsv")

    p = sub.add_parser("sr", parents=[common], help="super-resolve one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)

    p = sub.add_parser("fuse", parents=[common], help="write an inference checkpoint with fused kernels")
    p.add_argument("--checkpoint", required=True, help="input checkpoint")
    p.add_argument("--output", required=True, help="fused checkpoint")

    p = sub.add_parser("degrade", parents=[common], help="synthesise LR images from a directory of HR images")
    p.add_argument("--input", required=True, help="HR directory")
    p.add_argument("--output", required=True, help="LR directory")
    return parser


def _thread_limit(deterministic: bool):
    """Cap BLAS threads: 1 when deterministic, else ``ACNET_THREADS`` if set."""
    limit = 1 if deterministic else None
    env = os.environ.get("ACNET_THREADS", "").strip()
    if limit is None and env:
        try:
            limit = int(env)
        except ValueError:
            raise UsageError(f"ACNET_THREADS must be an integer, got {env!r}") from None
        if limit < 1:
            raise UsageError("ACNET_THREADS must be at least 1")
    if limit is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=limit)


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def cmd_train(args) -> int:
    from .train import train

    cfg = _run_config(args)
    changes = {k: getattr(args, k) for k in ("steps", "resume", "checkpoint", "log")
               if getattr(args, k) is not None}
    if args.data is not None:
        changes["data_dir"] = args.data
    if args.scale is not None:
        changes["scales"] = (args.scale,)
    if args.sigma is not None:
        changes["sigma_range"] = (0.0, args.sigma)
    cfg = cfg.replace(**changes)
    if not cfg.data_dir:
        raise UsageError("no training data: set data_dir in the config or pass --data")
    trainer = train(cfg)
    log.info("trained to step %d; checkpoint %s", trainer.state.step, cfg.checkpoint)
    print(f"step {trainer.state.step} checkpoint {cfg.checkpoint}")
    return 0


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    dataset = args.data or cfg.eval_dir
    if not dataset:
        raise UsageError("no evaluation data: set eval_dir in the config or pass --data")
    if args.bicubic:
        upscale = D.bicubic_upscale
        scale = args.scale or cfg.scales[0]
    else:
        if not args.checkpoint:
            raise UsageError("model evaluation needs --checkpoint (or --bicubic for the baseline)")
        model = ckpt.load_model(args.checkpoint)
        if args.fused and not model.fused:
            model = fuse_model(model)
        scale = args.scale or model.config.scales[0]
        if scale not in model.heads:
            raise UnsupportedScaleError(f"checkpoint has no x{scale} head (scales {model.config.scales})")
        upscale = model_upscaler(model)
    shave = args.shave if args.shave is not None else cfg.shave
    report = evaluate(upscale, dataset, scale, sigma=args.sigma or 0.0, shave=shave, seed=cfg.seed)
    text = report.to_text()
    sys.stdout.write(text)
    if args.output:
        prefix = Path(args.output)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        prefix.with_name(prefix.name + ".txt").write_text(text, encoding="utf-8")
        prefix.with_name(prefix.name + ".tsv").write_text(report.to_tsv(), encoding="utf-8")
    return 0


def cmd_sr(args) -> int:
    model = ckpt.load_model(args.checkpoint)
    if args.fused and not model.fused:
        model = fuse_model(model)
    scale = args.scale or model.config.scales[0]
    if scale not in model.heads:
        raise UnsupportedScaleError(f"checkpoint has no x{scale} head (scales {model.config.scales})")
    image = D.load_image(args.input)
    sr = model_upscaler(model)(image, scale)
    D.save_image(np.clip(sr, 0.0, 1.0), args.output)
    return 0


def cmd_fuse(args) -> int:
    model = ckpt.load_model(args.checkpoint)
    if model.fused:
        log.warning("%s is already fused; nothing to do", args.checkpoint)
        if Path(args.checkpoint).resolve() != Path(args.output).resolve():
            shutil.copyfile(args.checkpoint, args.output)
        return 0
    fused = fuse_model(model)
    ckpt.save(args.output, fused)
    print(f"parameters {param_count(model)} -> {param_count(fused)}")
    return 0


def cmd_degrade(args) -> int:
    cfg = _run_config(args)
    scale = args.scale or cfg.scales[0]
    sigma = args.sigma or 0.0
    rng = np.random.default_rng(cfg.seed)
    paths = D.list_images(args.input)
    if not paths:
        raise UsageError(f"no images in {args.input}")
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    for path in paths:
        pair = D.degrade(D.load_image(path), scale, sigma, rng)
        D.save_image(pair.lr, out_dir / path.name)
    print(f"wrote {len(paths)} x{scale} images to {out_dir}")
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "sr": cmd_sr, "fuse": cmd_fuse, "degrade": cmd_degrade}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit(args.deterministic):
            return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as e:
        parser.error(str(e))
    except (ValueError, OSError, FloatingPointError) as e:
        print(f"acnet {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
