"""
Training the desk-scale toy codec
=================================

Three stages, each cached under ``build/toy_stages`` so an interrupted run
resumes where it stopped:

1. a small VAE (factor 8, 4 latent channels) on random crops;
2. an epsilon-prediction denoiser on its latents;
3. the codec itself: parameter estimator + entropy model, trained with the
   one-step decode at a continuous timestep, VAE and denoiser frozen.

The final checkpoint lands in ``checkpoints/toy``. On one CPU core the whole
run takes about an hour and a half with the defaults below.

    python demos/train_toy_codec.py [--quick]
"""
import argparse
import json
import logging
from pathlib import Path

import torch

from ldcodec.autoencoder import ToyVAE
from ldcodec.codec import CodecContext
from ldcodec.data import load_images
from ldcodec.diffusion import ToyDenoiser
from ldcodec.entropy import EntropyModel
from ldcodec.param_estimator import ParamEstimator
from ldcodec.schedule import build_schedule
from ldcodec.training import (
    CodecTrainer, TrainConfig, fit_scale_factor, pretrain_denoiser, pretrain_vae,
)

ROOT = Path(__file__).resolve().parents[1]

parser = argparse.ArgumentParser()
parser.add_argument("--quick", action="store_true", help="tiny step counts, for a smoke run")
parser.add_argument("--out", default=str(ROOT / "checkpoints" / "toy"))
parser.add_argument("--stages", default=str(ROOT / "build" / "toy_stages"))
parser.add_argument("--until", choices=["vae", "denoiser", "codec"], default="codec")
args = parser.parse_args()

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
torch.manual_seed(0)
stages = Path(args.stages)
stages.mkdir(parents=True, exist_ok=True)

VAE_STEPS, DEN_STEPS, CODEC_STEPS = (20, 20, 20) if args.quick else (2500, 3000, 4000)
images = load_images("train")

# %%
# Stage 1: the autoencoder.
vae = ToyVAE()
vae_path = stages / "vae.pt"
if vae_path.exists():
    vae.load_state_dict(torch.load(vae_path))
else:
    hist = pretrain_vae(vae, images, VAE_STEPS, crop=64, batch_size=8, lr=1e-3)
    scale = fit_scale_factor(vae, images)
    logging.info("vae final mse %.5f, latent scale %.3f", sum(hist[-50:]) / len(hist[-50:]), scale)
    torch.save(vae.state_dict(), vae_path)
vae.eval()
if args.until == "vae":
    raise SystemExit

# %%
# Stage 2: the latent denoiser. Timesteps are drawn from the low-noise third
# of the schedule, the only range the decoder ever visits.
schedule = build_schedule("linear", 1000, 1e-4, 0.02)
denoiser = ToyDenoiser(schedule, width=64)
den_path = stages / "denoiser.pt"
if den_path.exists():
    denoiser.load_state_dict(torch.load(den_path))
else:
    hist = pretrain_denoiser(denoiser, vae, images, DEN_STEPS, crop=64, batch_size=32, max_t=300)
    logging.info("denoiser final loss %.4f", sum(hist[-50:]) / len(hist[-50:]))
    torch.save(denoiser.state_dict(), den_path)
denoiser.eval()
if args.until == "denoiser":
    raise SystemExit

# %%
# Stage 3: the codec. A higher learning rate than the full-scale default
# compensates for the short run. Crops of 128 pixels give a 4x4 hyper-latent,
# so the entropy model sees interior positions and not only borders.
config = TrainConfig(steps=CODEC_STEPS, learning_rate=5e-4, crop=128, batch_size=4, seed=0)
estimator = ParamEstimator(widths=(32, 64, 128, 128))
entropy = EntropyModel(hyper_channels=32, width=64)
trainer = CodecTrainer(vae, denoiser, estimator, entropy, config)
history = trainer.fit(images, metrics_path=stages / "codec_metrics.jsonl")

ctx = CodecContext(vae, denoiser, estimator, entropy, schedule,
                   meta={"train_config": config.to_dict(), "skipped_steps": trainer.skipped})
ctx.save(args.out)
print(json.dumps(history[-1]))
