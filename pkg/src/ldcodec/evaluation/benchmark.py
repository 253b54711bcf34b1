"""Wall-time and model-size report.

Timings exclude entropy coding: encode covers VAE encode, parameter
estimation and quantization; decode covers dequantization, the denoising
loop and VAE decode.
"""
from __future__ import annotations

import time

import numpy as np
import torch

from ..autoencoder import decode_latent, encode_image, pad_to_multiple
from ..codec import CodecContext
from ..diffusion import CountingBackbone, denoise_from
from ..param_estimator import timestep_to_discrete
from ..quantization import QuantParams, dequantize, quantize


def parameter_counts(ctx: CodecContext) -> dict:
    count = lambda m: sum(p.numel() for p in m.parameters())
    trained = {"estimator": count(ctx.estimator), "entropy": count(ctx.entropy)}
    frozen = {"vae": count(ctx.vae), "backbone": count(ctx.backbone)}
    return {
        "trained": trained, "frozen": frozen,
        "trained_total": sum(trained.values()), "frozen_total": sum(frozen.values()),
    }


@torch.no_grad()
def time_decode(ctx: CodecContext, y_t: torch.Tensor, t: int, repeats: int = 1):
    best, calls = float("inf"), 0
    for _ in range(repeats):
        counter = CountingBackbone(ctx.backbone)
        start = time.perf_counter()
        y0 = denoise_from(y_t, t, counter, rescale=ctx.rescale)
        decode_latent(ctx.vae, y0)
        best = min(best, time.perf_counter() - start)
        calls = counter.calls
    return best, calls


@torch.no_grad()
def benchmark(ctx: CodecContext, images, lam: float = 10.0, fixed_timesteps=(1, 10), warmup: int = 1) -> dict:
    """Mean encode/decode seconds per image plus parameter counts."""
    enc_times, dec_times, calls, ts = [], [], [], []
    fixed = {t: [] for t in fixed_timesteps}
    for i, x in enumerate(images):
        padded = pad_to_multiple(np.asarray(x, dtype=np.float32), ctx.pad_multiple)
        for rep in range(warmup + 1):
            start = time.perf_counter()
            y = encode_image(ctx.vae, padded)
            pred = ctx.estimator(y, lam)
            gamma = QuantParams(pred.gamma.log_scale[0], pred.gamma.offset[0]).to_float32()
            t = timestep_to_discrete(float(pred.tau[0]), ctx.schedule.T_max)
            z = quantize(y[0], gamma)
            elapsed = time.perf_counter() - start
        enc_times.append(elapsed)
        y_t = dequantize(z, gamma)[None]
        sec, n = time_decode(ctx, y_t, t)
        dec_times.append(sec)
        calls.append(n)
        ts.append(t)
        for ft in fixed_timesteps:
            fixed[ft].append(time_decode(ctx, y_t, ft)[0])
    return {
        "images": len(images),
        "encode_seconds": float(np.mean(enc_times)),
        "decode_seconds": float(np.mean(dec_times)),
        "timesteps": ts,
        "backbone_calls": calls,
        "decode_seconds_at": {int(k): float(np.mean(v)) for k, v in fixed.items()},
        "parameters": parameter_counts(ctx),
    }
