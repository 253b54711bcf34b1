"""
Encoding and decoding one image
===============================

Loads the trained toy codec, compresses a held-out crop at each trained
lambda and decodes it again. The decoder runs exactly as many denoising
steps as the timestep stored in the stream header.

    python demos/codec_round_trip.py [--checkpoint checkpoints/toy]
"""
import argparse
from pathlib import Path

from ldcodec.codec import CodecContext, decode, encode
from ldcodec.data import heldout_crops
from ldcodec.entropy import parse
from ldcodec.evaluation import ms_ssim, psnr
from ldcodec.param_estimator import TRAINED_LAMBDAS

ROOT = Path(__file__).resolve().parents[1]

parser = argparse.ArgumentParser()
parser.add_argument("--checkpoint", default=str(ROOT / "checkpoints" / "toy"))
args = parser.parse_args()

ctx = CodecContext.load(args.checkpoint)
x = heldout_crops(192, per_image=1)[0]

# %%
# One stream per lambda. The header carries the quantization parameters and t.
for lam in TRAINED_LAMBDAS:
    enc = encode(ctx, x, lam)
    h = parse(enc.data).header
    dec = decode(ctx, enc.data)
    print(f"lambda {lam:>4g}: {len(enc.data):5d} bytes, {enc.bpp:.3f} bpp, t={h.timestep:3d}, "
          f"backbone calls {dec.backbone_calls:3d}, PSNR {psnr(x, dec.image):.2f} dB, "
          f"MS-SSIM {ms_ssim(x, dec.image):.4f}")
