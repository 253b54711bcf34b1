"""Rate-distortion training of the parameter estimator and entropy model.

The codec stage trains through a single DDIM pass at the continuous
predicted timestep; the iterative sampler is never differentiated. Toy-mode
pretraining of the VAE and the latent denoiser lives here as well.
"""
from __future__ import annotations

import configparser
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .autoencoder import ToyVAE, vae_loss
from .data import random_crops
from .diffusion import ToyDenoiser, add_noise, one_step_decode
from .entropy import EntropyModel
from .param_estimator import ParamEstimator
from .quantization import quantize_relaxed

log = logging.getLogger(__name__)


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    steps: int = 50_000
    learning_rate: float = 1e-4
    crop: int = 256
    lambda_set: tuple = (1.0, 5.0, 10.0, 20.0)
    batch_size: int = 8
    seed: int = 0
    backbone_mode: str = "toy"
    log_every: int = 50

    def __post_init__(self):
        self.lambda_set = tuple(float(v) for v in self.lambda_set)
        if not self.lambda_set or any(v <= 0 for v in self.lambda_set):
            raise ValueError("lambda_set must be non-empty and positive")
        if self.backbone_mode not in ("toy", "foundation-frozen"):
            raise ValueError(f"unknown backbone mode {self.backbone_mode!r}")
        if self.steps < 0 or self.batch_size < 1 or self.crop < 8:
            raise ValueError("steps >= 0, batch_size >= 1 and crop >= 8 required")

    @classmethod
    def full_scale(cls, **overrides) -> "TrainConfig":
        return cls(**{"steps": 300_000, **overrides})

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        """Read the ``[train]`` section of an INI-style ``key = value`` file."""
        parser = configparser.ConfigParser()
        if not parser.read(path):
            raise FileNotFoundError(path)
        section = parser["train"] if parser.has_section("train") else parser.defaults()
        kwargs = {}
        types = {f.name: f.type for f in fields(cls)}
        for key, raw in section.items():
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            if key == "lambda_set":
                kwargs[key] = tuple(float(v) for v in raw.replace(",", " ").split())
            elif types[key] in ("int", int):
                kwargs[key] = int(raw)
            elif types[key] in ("float", float):
                kwargs[key] = float(raw)
            else:
                kwargs[key] = raw.strip()
        return cls(**kwargs)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda_set"] = list(self.lambda_set)
        return d


def rd_loss(x: torch.Tensor, x_hat: torch.Tensor, bits: torch.Tensor, lam) -> torch.Tensor:
    """Batch mean of ``bits + lam * ||x - x_hat||^2`` (squared error summed per image)."""
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    sse = (x - x_hat).pow(2).flatten(1).sum(1) if x.dim() == 4 else (x - x_hat).pow(2).sum()
    loss = (bits + lam * sse).mean()
    if not torch.isfinite(loss):
        raise NonFiniteLoss(
            f"non-finite loss: bits={bits.detach().tolist()}, sse={sse.detach().tolist()}, lambda={lam}"
        )
    return loss


class CodecTrainer:
    """One optimizer over the estimator and entropy model; VAE and backbone frozen."""

    def __init__(self, vae: ToyVAE, backbone, estimator: ParamEstimator, entropy: EntropyModel, config: TrainConfig):
        self.vae = vae
        self.backbone = backbone
        self.estimator = estimator
        self.entropy = entropy
        self.config = config
        for module in (vae, backbone):
            if isinstance(module, torch.nn.Module):
                module.eval()
                for p in module.parameters():
                    p.requires_grad_(False)
        self.params = list(estimator.parameters()) + list(entropy.parameters())
        self.optimizer = torch.optim.Adam(self.params, lr=config.learning_rate)
        self.rng = np.random.default_rng(config.seed)
        self.step_count = 0
        self.skipped = 0

    def sample_lambda(self) -> float:
        return float(self.config.lambda_set[self.rng.integers(len(self.config.lambda_set))])

    def forward(self, x: torch.Tensor, lam: float):
        """Differentiable pipeline; returns (loss, metrics)."""
        self.estimator.train()
        self.entropy.train()
        with torch.no_grad():
            y = self.vae.encode(x)
        pred = self.estimator(y, lam)
        if not torch.isfinite(pred.tau).all():
            raise NonFiniteLoss(f"non-finite timestep prediction: tau={pred.tau.detach().tolist()}")
        y_hat, z_hard = quantize_relaxed(y, pred.gamma, "straight_through")
        _, z_noisy = quantize_relaxed(y, pred.gamma, "additive_noise")
        bits = self.entropy.bits(z_hard, z_noisy)
        y0 = one_step_decode(y_hat, pred.tau, self.backbone)
        x_hat = self.vae.decode_raw(y0)
        loss = rd_loss(x, x_hat, bits, lam)
        pixels = x.shape[-1] * x.shape[-2]
        metrics = {
            "loss": float(loss.detach()),
            "bpp": float(bits.detach().mean()) / pixels,
            "mse": float(F.mse_loss(x_hat.detach().clamp(0, 1), x)),
            "tau": float(pred.tau.detach().mean()),
            "mean_scale": float(pred.gamma.scale.detach().mean()),
            "lambda": lam,
        }
        return loss, metrics

    def train_step(self, x: torch.Tensor, lam: float | None = None) -> dict:
        lam = self.sample_lambda() if lam is None else float(lam)
        self.optimizer.zero_grad(set_to_none=True)
        try:
            loss, metrics = self.forward(x, lam)
        except NonFiniteLoss as err:
            self.skipped += 1
            log.warning("step %d skipped: %s", self.step_count, err)
            return {"skipped": True, "lambda": lam}
        loss.backward()
        torch.nn.utils.clip_grad_norm_(self.params, 1e4)
        self.optimizer.step()
        self.step_count += 1
        return metrics

    def batch(self, images) -> torch.Tensor:
        c = self.config
        return torch.from_numpy(random_crops(images, c.crop, c.batch_size, self.rng))

    def fit(self, images, metrics_path=None) -> list[dict]:
        history = []
        out = open(metrics_path, "a") if metrics_path else None
        try:
            for step in range(self.config.steps):
                m = self.train_step(self.batch(images))
                m["step"] = step
                history.append(m)
                if out:
                    out.write(json.dumps(m) + "\n")
                if step % self.config.log_every == 0 and "loss" in m:
                    log.info("step %d loss %.1f bpp %.4f mse %.5f tau %.4f", step, m["loss"], m["bpp"], m["mse"], m["tau"])
        finally:
            if out:
                out.close()
        return history


# --- toy pretraining -------------------------------------------------------------------


def pretrain_vae(vae: ToyVAE, images, steps: int, crop: int = 64, batch_size: int = 16,
                 lr: float = 1e-3, seed: int = 0, kl_weight: float = 1e-6) -> list[float]:
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    opt = torch.optim.Adam(vae.parameters(), lr=lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, max(steps, 1))
    vae.train()
    history = []
    for step in range(steps):
        x = torch.from_numpy(random_crops(images, crop, batch_size, rng))
        loss, mse = vae_loss(vae, x, kl_weight)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        sched.step()
        history.append(float(mse.detach()))
        if step % 200 == 0:
            log.info("vae step %d mse %.5f", step, float(mse))
    vae.eval()
    return history


@torch.no_grad()
def fit_scale_factor(vae: ToyVAE, images, crop: int = 64, count: int = 256, seed: int = 0) -> float:
    """Set ``vae.scale_factor`` so encoded latents have unit standard deviation."""
    rng = np.random.default_rng(seed)
    x = torch.from_numpy(random_crops(images, crop, count, rng))
    mean, _ = vae.posterior(x)
    scale = 1.0 / float(mean.std())
    vae.scale_factor.fill_(scale)
    return scale


def pretrain_denoiser(denoiser: ToyDenoiser, vae: ToyVAE, images, steps: int, crop: int = 64,
                      batch_size: int = 32, lr: float = 1e-3, seed: int = 0, max_t: int | None = None) -> list[float]:
    """Epsilon-prediction training on VAE latents.

    ``max_t`` restricts sampled timesteps to the low-noise range the codec uses.
    """
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    schedule = denoiser.schedule
    hi = schedule.T_max if max_t is None else max_t
    opt = torch.optim.Adam(denoiser.parameters(), lr=lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, max(steps, 1))
    denoiser.train()
    history = []
    for step in range(steps):
        x = torch.from_numpy(random_crops(images, crop, batch_size, rng))
        with torch.no_grad():
            y0 = vae.encode(x)
        t = torch.from_numpy(rng.integers(1, hi + 1, size=batch_size))
        noise = torch.randn_like(y0)
        y_t = add_noise(y0, t, noise, schedule)
        loss = F.mse_loss(denoiser(y_t, t.to(y0.dtype)), noise)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        sched.step()
        history.append(float(loss))
        if step % 200 == 0:
            log.info("denoiser step %d loss %.4f", step, float(loss))
    denoiser.eval()
    return history


def write_metrics(path, records) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")
