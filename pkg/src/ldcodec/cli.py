"""Command-line entry point: ``ldcodec {encode,decode,train,eval,sweep,elo}``.

Exit codes follow sysexits: 65 for invalid input or configuration, 74 for
I/O failures, 70 for internal errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import torch

EXIT_OK = 0
EXIT_VALIDATION = 65
EXIT_INTERNAL = 70
EXIT_IO = 74
CHECKPOINT_ENV = "LDC_CHECKPOINT_DIR"
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".ppm", ".tif", ".tiff"}

log = logging.getLogger("ldcodec")


class UsageError(ValueError):
    pass


def _checkpoint_dir(args) -> Path:
    path = args.checkpoint_dir or os.environ.get(CHECKPOINT_ENV)
    if not path:
        raise UsageError(f"no checkpoint directory: pass --checkpoint-dir or set {CHECKPOINT_ENV}")
    return Path(path)


def _context(args):
    from .codec import CodecContext

    return CodecContext.load(_checkpoint_dir(args), device=args.device)


def _list_images(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"{directory} is not a directory")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def cmd_encode(args) -> int:
    from .autoencoder import load_image
    from .codec import encode

    ctx = _context(args)
    image = load_image(args.image)
    res = encode(ctx, image, args.lam, force_timestep=args.force_timestep)
    out = Path(args.out or Path(args.image).with_suffix(".ldc"))
    out.write_bytes(res.data)
    summary = {
        "out": str(out), "bytes": len(res.data), "bpp": res.bpp, "timestep": res.timestep,
        "tau": res.tau, "log_scale": res.gamma.log_scale.tolist(), "offset": res.gamma.offset.tolist(),
        "clamped_symbols": res.clamped,
    }
    print(json.dumps(summary))
    return EXIT_OK


def cmd_decode(args) -> int:
    from .autoencoder import save_image
    from .codec import decode

    ctx = _context(args)
    res = decode(ctx, Path(args.stream).read_bytes())
    out = Path(args.out or Path(args.stream).with_suffix(".png"))
    save_image(out, res.image)
    print(json.dumps({"out": str(out), "timestep": res.timestep, "backbone_calls": res.backbone_calls}))
    return EXIT_OK


def cmd_train(args) -> int:
    from .autoencoder import ToyVAE
    from .codec import CodecContext
    from .data import load_images
    from .diffusion import ToyDenoiser
    from .entropy import EntropyModel
    from .param_estimator import ParamEstimator
    from .schedule import build_schedule
    from .training import CodecTrainer, TrainConfig, fit_scale_factor, pretrain_denoiser, pretrain_vae

    config = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    if args.steps is not None:
        config.steps = args.steps
    if args.seed is not None:
        config.seed = args.seed
    torch.manual_seed(config.seed)
    images = load_images("train")
    base = args.checkpoint_dir or os.environ.get(CHECKPOINT_ENV)
    if base:
        ctx = CodecContext.load(base)
        vae, backbone, schedule = ctx.vae, ctx.backbone, ctx.schedule
    else:
        if config.backbone_mode != "toy":
            raise UsageError("foundation mode needs --checkpoint-dir with the frozen backbone")
        vae = ToyVAE()
        pretrain_vae(vae, images, args.pretrain_steps, seed=config.seed)
        fit_scale_factor(vae, images)
        schedule = build_schedule()
        backbone = ToyDenoiser(schedule)
        pretrain_denoiser(backbone, vae, images, args.pretrain_steps, seed=config.seed, max_t=300)
    estimator, entropy = ParamEstimator(), EntropyModel(context=args.context)
    trainer = CodecTrainer(vae, backbone, estimator, entropy, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trainer.fit(images, metrics_path=out / "metrics.jsonl")
    CodecContext(vae, backbone, estimator, entropy, schedule,
                 meta={"train_config": config.to_dict(), "skipped_steps": trainer.skipped}).save(out)
    print(json.dumps({"out": str(out), "steps": trainer.step_count, "skipped": trainer.skipped}))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .autoencoder import load_image
    from .evaluation import RandomConvFeatures, evaluate_codec, write_records

    ctx = _context(args)
    paths = _list_images(args.images)
    extractor = RandomConvFeatures(seed=args.seed or 0)

    def run(path):
        recs, _ = evaluate_codec(ctx, [load_image(path)], args.lam, extractor, ids=[path.stem])
        return recs[0]

    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        records = list(pool.map(run, paths))
    write_records(args.out, records)
    print(json.dumps({"out": args.out, "images": len(records),
                      "mean_bpp": float(np.mean([r.bpp for r in records])) if records else None}))
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .autoencoder import load_image
    from .evaluation import RandomConvFeatures, naive_sweep, write_records

    ctx = _context(args)
    paths = _list_images(args.images)
    images = [load_image(p) for p in paths]
    records = naive_sweep(ctx.vae, ctx.backbone, images, args.quant_steps, args.diffusion_steps,
                          extractor=RandomConvFeatures(seed=args.seed or 0), ids=[p.stem for p in paths])
    write_records(args.out, records)
    print(json.dumps({"out": args.out, "records": len(records)}))
    return EXIT_OK


def cmd_elo(args) -> int:
    from .evaluation import elo_rank, read_log

    rows = read_log(args.log)
    result = elo_rank(rows, args.mode, args.iterations, args.seed or 0,
                      k_factor=args.k_factor, initial_rating=args.initial_rating)
    if args.out:
        result.write_csv(args.out)
    if args.plot:
        from .evaluation.plots import plot_elo

        plot_elo(result, args.plot)
    print(f"# Elo constants: K={result.k_factor}, initial={result.initial_rating} (defaults, not from the study)")
    for row in result.rows():
        print(f"{row['method']:>12s}  median {row['median']:8.2f}  IQR [{row['q1']:.2f}, {row['q3']:.2f}]")
    return EXIT_OK


def _add_common(parser, suppress: bool) -> None:
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--checkpoint-dir", default=default(None),
                        help=f"checkpoint directory (env: {CHECKPOINT_ENV})")
    parser.add_argument("--device", default=default("cpu"))
    parser.add_argument("--seed", type=int, default=default(None))
    parser.add_argument("-v", "--verbose", action="store_true", default=default(False))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ldcodec", description="Latent-diffusion image codec")
    _add_common(p, suppress=False)
    # the shared flags are also accepted after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    _add_common(common, suppress=True)
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("encode", parents=[common], help="compress an image to .ldc")
    e.add_argument("image")
    e.add_argument("--lambda", dest="lam", type=float, default=10.0)
    e.add_argument("--out")
    e.add_argument("--force-timestep", type=int, default=None, help=argparse.SUPPRESS)
    e.set_defaults(func=cmd_encode)

    d = sub.add_parser("decode", parents=[common], help="decompress an .ldc stream")
    d.add_argument("stream")
    d.add_argument("--out")
    d.set_defaults(func=cmd_decode)

    t = sub.add_parser("train", parents=[common], help="train the parameter estimator and entropy model")
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--steps", type=int, default=None)
    t.add_argument("--pretrain-steps", type=int, default=2000)
    t.add_argument("--context", action="store_true", help="enable the channel context model")
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("eval", parents=[common], help="evaluate every image in a directory")
    v.add_argument("images")
    v.add_argument("--lambda", dest="lam", type=float, default=10.0)
    v.add_argument("--out", required=True)
    v.add_argument("--workers", type=int, default=1)
    v.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", parents=[common], help="naive quantize + deflate + denoise grid")
    s.add_argument("images")
    s.add_argument("--quant-steps", type=float, nargs="+", default=[0.25, 0.5, 1.0, 2.0])
    s.add_argument("--diffusion-steps", type=int, nargs="+", default=[0, 5, 10, 25, 50])
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("elo", parents=[common], help="Monte-Carlo Elo ranking of a 2AFC log")
    r.add_argument("log")
    r.add_argument("--mode", choices=["per_comparison", "per_participant"], default="per_comparison")
    r.add_argument("--iterations", type=int, default=10_000)
    r.add_argument("--k-factor", type=float, default=32.0)
    r.add_argument("--initial-rating", type=float, default=1000.0)
    r.add_argument("--out")
    r.add_argument("--plot")
    r.set_defaults(func=cmd_elo)
    return p


def main(argv=None) -> int:
    from .checkpoint import CheckpointError
    from .codec import CapacityError, ComponentMismatch
    from .entropy import CoderError, StreamError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    if args.seed is not None:
        torch.manual_seed(args.seed)
    try:
        return args.func(args)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as err:
        print(f"ldcodec: I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    except (UsageError, CheckpointError, ComponentMismatch, CapacityError, StreamError, CoderError, ValueError) as err:
        print(f"ldcodec: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as err:
        print(f"ldcodec: I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    except Exception as err:  # noqa: BLE001
        print(f"ldcodec: internal error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
