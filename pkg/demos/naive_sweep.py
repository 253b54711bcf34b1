"""
The naive baseline and the rate-distortion plot
===============================================

Quantizes VAE latents with a uniform step, deflates the symbols and runs a
fixed number of denoising steps at decode time. The grid of (step, t) pairs
forms the reference cloud against which the trained codec is drawn.

    python demos/naive_sweep.py [--checkpoint checkpoints/toy] [--out build/rd.png]
"""
import argparse
from pathlib import Path

from ldcodec.codec import CodecContext
from ldcodec.data import heldout_crops
from ldcodec.evaluation import RandomConvFeatures, aggregate, evaluate_codec, naive_sweep, write_records
from ldcodec.evaluation.plots import plot_rd
from ldcodec.param_estimator import TRAINED_LAMBDAS

ROOT = Path(__file__).resolve().parents[1]

parser = argparse.ArgumentParser()
parser.add_argument("--checkpoint", default=str(ROOT / "checkpoints" / "toy"))
parser.add_argument("--out", default=str(ROOT / "build" / "rd.png"))
args = parser.parse_args()
Path(args.out).parent.mkdir(parents=True, exist_ok=True)

ctx = CodecContext.load(args.checkpoint)
images = heldout_crops(192, per_image=2)
extractor = RandomConvFeatures(seed=0)

# %%
# The naive grid.
naive = naive_sweep(ctx.vae, ctx.backbone, images, [0.25, 0.5, 1.0, 2.0, 4.0], [0, 10, 25, 50],
                    extractor=extractor)

# %%
# The trained codec, one point per lambda.
ours = []
for lam in TRAINED_LAMBDAS:
    ours += evaluate_codec(ctx, images, lam, extractor)[0]

write_records(Path(args.out).with_suffix(".csv"), naive + ours)
ours_rows = aggregate(ours, key=("method", "lam"))
plot_rd({"naive": aggregate(naive), "ldcodec": ours_rows}, args.out)
for row in ours_rows:
    print(f"lambda {row['lam']:g}: {row['bpp']:.3f} bpp, MS-SSIM {row['ms_ssim']:.4f}")
print("wrote", args.out)
