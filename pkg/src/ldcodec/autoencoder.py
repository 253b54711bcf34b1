"""Image <-> latent transforms and the toy VAE.

Images travel as ``(N, 3, H, W)`` float tensors in [0, 1]; single HxWx3
numpy arrays are accepted at the I/O boundary.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from PIL import Image


class ShapeError(ValueError):
    pass


class _Res(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(ch, ch, 3, padding=1), nn.SiLU(), nn.Conv2d(ch, ch, 3, padding=1)
        )

    def forward(self, x):
        return x + self.block(x)


class ToyVAE(nn.Module):
    """Three stride-2 stages (factor 8) to a 4-channel latent.

    ``scale_factor`` multiplies the posterior mean so latents have roughly unit
    variance, as the diffusion backbone expects; it is fitted after training.
    """

    def __init__(self, channels: int = 4, widths=(32, 64, 128)):
        super().__init__()
        self.channels = channels
        self.factor = 2 ** len(widths)
        self.widths = tuple(widths)
        enc = [nn.Conv2d(3, widths[0], 3, padding=1)]
        cin = widths[0]
        for w in widths:
            enc += [nn.Conv2d(cin, w, 4, stride=2, padding=1), nn.SiLU(), _Res(w)]
            cin = w
        enc += [nn.SiLU(), nn.Conv2d(cin, 2 * channels, 3, padding=1)]
        self.encoder = nn.Sequential(*enc)

        dec = [nn.Conv2d(channels, widths[-1], 3, padding=1), _Res(widths[-1])]
        cin = widths[-1]
        for w in reversed(widths):
            dec += [nn.ConvTranspose2d(cin, w, 4, stride=2, padding=1), nn.SiLU(), _Res(w)]
            cin = w
        dec += [nn.SiLU(), nn.Conv2d(cin, 3, 3, padding=1)]
        self.decoder = nn.Sequential(*dec)
        self.register_buffer("scale_factor", torch.tensor(1.0))

    def posterior(self, x):
        mean, logvar = self.encoder(2.0 * x - 1.0).chunk(2, dim=1)
        return mean, logvar.clamp(-20.0, 10.0)

    def encode(self, x):
        mean, _ = self.posterior(x)
        return mean * self.scale_factor

    def decode_raw(self, y):
        """Unclamped reconstruction; used in training so gradients survive saturation."""
        return (self.decoder(y / self.scale_factor) + 1.0) / 2.0

    def decode(self, y):
        return self.decode_raw(y).clamp(0.0, 1.0)

    def config(self) -> dict:
        return {"channels": self.channels, "widths": list(self.widths)}


def as_batch(image) -> torch.Tensor:
    """HxWx3 numpy (or CHW / NCHW tensor) -> float32 NCHW tensor."""
    if isinstance(image, np.ndarray):
        if image.ndim != 3 or image.shape[2] != 3:
            raise ShapeError(f"expected HxWx3 image, got {image.shape}")
        return torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1))).float()[None]
    if image.dim() == 3:
        return image[None]
    return image


def to_numpy_image(x: torch.Tensor) -> np.ndarray:
    x = x.detach()
    if x.dim() == 4:
        if x.shape[0] != 1:
            raise ShapeError("to_numpy_image expects a single image")
        x = x[0]
    return x.permute(1, 2, 0).cpu().numpy()


def encode_image(vae: ToyVAE, image) -> torch.Tensor:
    """Deterministic latent (posterior mean) of an image batch."""
    x = as_batch(image)
    H, W = x.shape[-2:]
    if x.shape[1] != 3:
        raise ShapeError(f"expected 3 colour channels, got {x.shape[1]}")
    if H % vae.factor or W % vae.factor:
        raise ShapeError(f"image size {H}x{W} not divisible by {vae.factor}; pad first")
    return vae.encode(x.to(next(vae.parameters()).dtype))


def decode_latent(vae: ToyVAE, y0: torch.Tensor) -> torch.Tensor:
    if y0.dim() == 3:
        y0 = y0[None]
    if y0.dim() != 4 or y0.shape[1] != vae.channels:
        raise ShapeError(f"expected (N, {vae.channels}, h, w) latent, got {tuple(y0.shape)}")
    return vae.decode(y0)


def pad_to_multiple(image: np.ndarray, multiple: int) -> np.ndarray:
    """Reflect-pad bottom/right so both dims divide ``multiple``."""
    H, W = image.shape[:2]
    ph, pw = (-H) % multiple, (-W) % multiple
    if ph == 0 and pw == 0:
        return image
    mode = "reflect" if ph < H and pw < W else "symmetric"
    return np.pad(image, ((0, ph), (0, pw), (0, 0)), mode=mode)


def load_image(path) -> np.ndarray:
    with Image.open(Path(path)) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def to_uint8(image: np.ndarray) -> np.ndarray:
    # inputs are non-negative, so floor(v + 0.5) is round-half-away-from-zero
    v = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0
    return np.floor(v + 0.5).astype(np.uint8)


def save_image(path, image: np.ndarray) -> None:
    Image.fromarray(to_uint8(image)).save(Path(path))


def vae_loss(vae: ToyVAE, x: torch.Tensor, kl_weight: float = 1e-6):
    """Reconstruction MSE plus a small KL term (the posterior sample is used here only)."""
    mean, logvar = vae.posterior(x)
    y = mean + torch.exp(0.5 * logvar) * torch.randn_like(mean)
    rec = vae.decode_raw(y * vae.scale_factor)
    mse = F.mse_loss(rec, x)
    kl = 0.5 * torch.mean(mean**2 + logvar.exp() - 1.0 - logvar)
    return mse + kl_weight * kl, mse
