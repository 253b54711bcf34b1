"""Per-image evaluation of the learned codec and of the naive LDM baseline."""
from __future__ import annotations

import csv
import math
import struct
import time
import zlib
from dataclasses import asdict, dataclass, fields

import numpy as np
import torch

from ..autoencoder import decode_latent, encode_image, pad_to_multiple
from ..codec import CodecContext, decode, encode
from ..diffusion import denoise_from
from .metrics import ms_ssim, psnr
from .perceptual import lpips_like

# quant step (f32) + diffusion steps (u16) + height/width (u16 each)
NAIVE_HEADER_BYTES = struct.calcsize("<fHHH")


@dataclass
class EvalRecord:
    image_id: str
    method: str
    bpp: float
    psnr: float
    ms_ssim: float
    lpips_like: float = math.nan
    encode_seconds: float = math.nan
    decode_seconds: float = math.nan
    timestep: int = 0
    lam: float = math.nan
    quant_step: float = math.nan
    gamma: str = ""
    num_bytes: int = 0


def write_records(path, records) -> None:
    names = [f.name for f in fields(EvalRecord)]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=names)
        w.writeheader()
        for r in records:
            w.writerow(asdict(r))


def read_records(path) -> list[EvalRecord]:
    types = {f.name: f.type for f in fields(EvalRecord)}
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            kw = {}
            for k, v in row.items():
                t = types[k]
                kw[k] = int(v) if t in ("int", int) else float(v) if t in ("float", float) else v
            out.append(EvalRecord(**kw))
    return out


def _metrics(x, x_hat, extractor):
    ms = ms_ssim(x, x_hat) if min(x.shape[:2]) > 160 else math.nan
    lp = float(lpips_like([x], [x_hat], extractor)[0]) if extractor is not None else math.nan
    return psnr(x, x_hat), ms, lp


def evaluate_codec(ctx: CodecContext, images, lam: float, extractor=None, ids=None,
                   method: str = "ldcodec") -> tuple[list[EvalRecord], list[np.ndarray]]:
    """Encode and decode every image; bpp comes from the serialized stream length."""
    records, recons = [], []
    for i, x in enumerate(images):
        enc = encode(ctx, x, lam)
        dec = decode(ctx, enc.data)
        p, ms, lp = _metrics(x, dec.image, extractor)
        gamma = ";".join(f"{s:.4f}/{b:.4f}" for s, b in zip(enc.gamma.log_scale.tolist(), enc.gamma.offset.tolist()))
        records.append(EvalRecord(
            image_id=ids[i] if ids else f"img{i:03d}", method=method, bpp=enc.bpp, psnr=p, ms_ssim=ms,
            lpips_like=lp, encode_seconds=enc.seconds, decode_seconds=dec.seconds, timestep=enc.timestep,
            lam=lam, gamma=gamma, num_bytes=len(enc.data),
        ))
        recons.append(dec.image)
    return records, recons


def naive_bytes(symbols: np.ndarray) -> bytes:
    """General-purpose deflate of the integer latent (int16 little-endian)."""
    return zlib.compress(np.ascontiguousarray(symbols, dtype="<i2").tobytes(), 9)


@torch.no_grad()
def naive_sweep(vae, backbone, images, quant_steps, diffusion_steps, extractor=None, ids=None):
    """Uniform quantization + deflate + a fixed number of denoising steps.

    Returns one record per (image, quant step, diffusion steps); no learned
    entropy model or parameter estimator is involved.
    """
    multiple = vae.factor * getattr(backbone, "spatial_multiple", 1)
    records = []
    for i, x in enumerate(images):
        H, W = x.shape[:2]
        t0 = time.perf_counter()
        y = encode_image(vae, pad_to_multiple(np.asarray(x, dtype=np.float32), multiple))
        enc_s = time.perf_counter() - t0
        for q in quant_steps:
            z = torch.round(y / q).clamp(-32768, 32767)
            payload = naive_bytes(z.numpy().astype(np.int16))
            nbytes = len(payload) + NAIVE_HEADER_BYTES
            for n in diffusion_steps:
                t1 = time.perf_counter()
                y0 = denoise_from(z * q, n, backbone)
                x_hat = decode_latent(vae, y0)[0].permute(1, 2, 0).numpy()[:H, :W]
                p, ms, lp = _metrics(x, x_hat, extractor)
                records.append(EvalRecord(
                    image_id=ids[i] if ids else f"img{i:03d}", method="naive", bpp=nbytes * 8.0 / (H * W),
                    psnr=p, ms_ssim=ms, lpips_like=lp, encode_seconds=enc_s,
                    decode_seconds=time.perf_counter() - t1, timestep=int(n), quant_step=float(q),
                    num_bytes=nbytes,
                ))
    return records


def aggregate(records, key=("method", "quant_step", "timestep", "lam")) -> list[dict]:
    """Mean bpp and metrics per configuration."""
    groups: dict = {}
    for r in records:
        k = tuple(getattr(r, f) for f in key)
        groups.setdefault(k, []).append(r)
    out = []
    for k, rs in groups.items():
        row = dict(zip(key, k))
        for m in ("bpp", "psnr", "ms_ssim", "lpips_like"):
            row[m] = float(np.mean([getattr(r, m) for r in rs]))
        row["count"] = len(rs)
        out.append(row)
    return out


def interpolate_front(points, bpp_query, metric: str, higher_is_better: bool = True) -> float:
    """Best metric reachable at or below ``bpp_query`` by linear interpolation along the upper front.

    ``points`` are dicts with ``bpp`` and ``metric``; returns ``nan`` when the
    query lies below every point's rate.
    """
    pts = sorted((p["bpp"], p[metric] if higher_is_better else -p[metric]) for p in points)
    # monotone front: running best as rate increases
    front, best = [], -math.inf
    for b, v in pts:
        if v > best:
            best = v
            front.append((b, v))
    if not front or bpp_query < front[0][0]:
        return math.nan
    bs = np.array([f[0] for f in front])
    vs = np.array([f[1] for f in front])
    val = float(np.interp(bpp_query, bs, vs))
    return val if higher_is_better else -val
