"""Deterministic DDIM machinery and the toy latent denoiser.

Latents are ``(N, C, h, w)`` tensors; a 3-D ``(C, h, w)`` latent is treated
as a batch of one and returned in the same rank.
"""
from __future__ import annotations

import math
from typing import Protocol, Union, runtime_checkable

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .schedule import NoiseSchedule, alpha_bar_continuous

Timestep = Union[int, float, torch.Tensor]


class DiffusionError(ValueError):
    pass


@runtime_checkable
class DenoiserBackbone(Protocol):
    """Anything that predicts the noise in a latent at a given timestep."""

    channels: int
    spatial_multiple: int
    schedule: NoiseSchedule

    def predict(self, latent: torch.Tensor, t: Timestep) -> torch.Tensor: ...


def _batched(x: torch.Tensor):
    if x.dim() == 3:
        return x.unsqueeze(0), True
    if x.dim() != 4:
        raise DiffusionError(f"expected a (N, C, h, w) latent, got shape {tuple(x.shape)}")
    return x, False


def _x0_from_alpha(x_t, eps, alpha_bar):
    return (x_t - torch.sqrt(1.0 - alpha_bar) * eps) / torch.sqrt(alpha_bar)


def estimate_x0(x_t: torch.Tensor, t: int, eps: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """Predicted clean latent from ``x_t`` and a noise estimate at integer ``t``."""
    if x_t.shape != eps.shape:
        raise DiffusionError(f"shape mismatch {tuple(x_t.shape)} vs {tuple(eps.shape)}")
    if not 0 < t <= schedule.T_max:
        raise DiffusionError(f"estimate_x0 needs 0 < t <= {schedule.T_max}, got {t}")
    a = torch.as_tensor(schedule.alpha_bar(int(t)), dtype=x_t.dtype)
    return _x0_from_alpha(x_t, eps, a)


def ddim_step(x_t: torch.Tensor, t: int, t_prev: int, backbone: DenoiserBackbone) -> torch.Tensor:
    """One deterministic DDIM update from ``t`` to ``t_prev``."""
    if not 0 <= t_prev < t <= backbone.schedule.T_max:
        raise DiffusionError(f"need 0 <= t_prev < t <= T_max, got t={t}, t_prev={t_prev}")
    eps = backbone.predict(x_t, t)
    if eps.shape != x_t.shape:
        raise DiffusionError(f"backbone returned {tuple(eps.shape)} for input {tuple(x_t.shape)}")
    x0 = estimate_x0(x_t, t, eps, backbone.schedule)
    a_prev = torch.as_tensor(backbone.schedule.alpha_bar(int(t_prev)), dtype=x_t.dtype)
    return torch.sqrt(a_prev) * x0 + torch.sqrt(1.0 - a_prev) * eps


def denoise_from(
    x_t: torch.Tensor, t: int, backbone: DenoiserBackbone, rescale: bool = False
) -> torch.Tensor:
    """Run ``t`` DDIM steps ``t -> t-1 -> ... -> 0`` and return the clean latent.

    With ``rescale`` the input is first multiplied by ``sqrt(alpha_bar_t)`` so
    that it matches the forward-process scaling; the codec default feeds the
    dequantized latent in unchanged.
    """
    t = int(t)
    if not 0 <= t <= backbone.schedule.T_max:
        raise DiffusionError(f"timestep {t} outside [0, {backbone.schedule.T_max}]")
    x = x_t
    if rescale and t > 0:
        x = x * math.sqrt(backbone.schedule.alpha_bar(t))
    for n in range(t, 0, -1):
        x = ddim_step(x, n, n - 1, backbone)
    return x


def one_step_decode(x_t: torch.Tensor, tau, backbone: DenoiserBackbone) -> torch.Tensor:
    """Differentiable single-pass estimate of the clean latent at continuous ``tau``.

    ``tau`` is a scalar or a per-sample ``(N,)`` tensor in (0, 1]. The schedule
    is evaluated through its continuous extension and the backbone receives the
    real-valued timestep ``tau * T_max``.
    """
    x, squeezed = _batched(x_t)
    tau = torch.as_tensor(tau, dtype=torch.float64) if not isinstance(tau, torch.Tensor) else tau
    if (tau <= 0).any():
        raise DiffusionError("one_step_decode needs tau > 0")
    schedule = backbone.schedule
    alpha = alpha_bar_continuous(schedule, tau).to(x.dtype)
    if alpha.dim() == 1:
        alpha = alpha.view(-1, 1, 1, 1)
    timestep = tau.to(x.dtype) * schedule.T_max
    eps = backbone.predict(x, timestep)
    out = _x0_from_alpha(x, eps, alpha)
    return out.squeeze(0) if squeezed else out


class CountingBackbone:
    """Wraps a backbone and counts ``predict`` calls."""

    def __init__(self, inner: DenoiserBackbone):
        self.inner = inner
        self.calls = 0
        self.timesteps: list = []

    @property
    def channels(self):
        return self.inner.channels

    @property
    def spatial_multiple(self):
        return self.inner.spatial_multiple

    @property
    def schedule(self):
        return self.inner.schedule

    def predict(self, latent, t):
        self.calls += 1
        self.timesteps.append(t)
        return self.inner.predict(latent, t)


class ZeroNoiseBackbone:
    """Backbone that always predicts zero noise; handy for closed-form checks."""

    def __init__(self, schedule: NoiseSchedule, channels: int = 4):
        self.schedule = schedule
        self.channels = channels
        self.spatial_multiple = 1

    def predict(self, latent, t):
        return torch.zeros_like(latent)


# --- toy denoiser --------------------------------------------------------------


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Sinusoidal embedding; continuous in ``t`` so real-valued timesteps work."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(max_period) * torch.arange(half, dtype=torch.float64) / half
    ).to(t.dtype)
    args = t[:, None] * freqs[None]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class _ResBlock(nn.Module):
    def __init__(self, cin, cout, emb_dim):
        super().__init__()
        self.norm1 = nn.GroupNorm(8, cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.emb = nn.Linear(emb_dim, cout)
        self.norm2 = nn.GroupNorm(8, cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, emb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.emb(emb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class ToyDenoiser(nn.Module):
    """Two-level UNet predicting epsilon for small latents.

    Spatial dims must be even. The schedule is stored alongside the weights
    so the model satisfies :class:`DenoiserBackbone` directly.
    """

    def __init__(self, schedule: NoiseSchedule, channels: int = 4, width: int = 64, emb_dim: int = 128):
        super().__init__()
        self.schedule = schedule
        self.channels = channels
        self.spatial_multiple = 2
        self.width = width
        self.emb_dim = emb_dim
        self.time_mlp = nn.Sequential(nn.Linear(emb_dim, emb_dim), nn.SiLU(), nn.Linear(emb_dim, emb_dim))
        self.inp = nn.Conv2d(channels, width, 3, padding=1)
        self.down1 = _ResBlock(width, width, emb_dim)
        self.pool = nn.Conv2d(width, width, 3, stride=2, padding=1)
        self.mid1 = _ResBlock(width, 2 * width, emb_dim)
        self.mid2 = _ResBlock(2 * width, 2 * width, emb_dim)
        self.up = nn.ConvTranspose2d(2 * width, width, 4, stride=2, padding=1)
        self.up1 = _ResBlock(2 * width, width, emb_dim)
        self.out_norm = nn.GroupNorm(8, width)
        self.out = nn.Conv2d(width, channels, 3, padding=1)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        emb = self.time_mlp(timestep_embedding(t.to(x.dtype), self.emb_dim))
        h0 = self.down1(self.inp(x), emb)
        h = self.mid2(self.mid1(self.pool(h0), emb), emb)
        h = self.up1(torch.cat([self.up(h), h0], dim=1), emb)
        return self.out(F.silu(self.out_norm(h)))

    def predict(self, latent: torch.Tensor, t: Timestep) -> torch.Tensor:
        x, squeezed = _batched(latent)
        if x.shape[1] != self.channels:
            raise DiffusionError(f"expected {self.channels} channels, got {x.shape[1]}")
        if x.shape[-1] % self.spatial_multiple or x.shape[-2] % self.spatial_multiple:
            raise DiffusionError(f"latent spatial dims must be multiples of {self.spatial_multiple}")
        tt = torch.as_tensor(t, dtype=x.dtype)
        if tt.dim() == 0:
            tt = tt.expand(x.shape[0])
        out = self(x, tt)
        return out.squeeze(0) if squeezed else out

    def config(self) -> dict:
        return {"channels": self.channels, "width": self.width, "emb_dim": self.emb_dim}


class FoundationBackbone:
    """Adapter for an external epsilon-prediction network.

    ``eps_fn(latent, t)`` receives the external model's timestep convention,
    where index 0 is already slightly noisy. ``alphas_cumprod`` is that
    model's own table of length ``T``; a clean entry is prepended so that our
    timestep ``n`` maps to the external index ``n - 1``.
    """

    def __init__(self, eps_fn, alphas_cumprod, channels: int = 4, spatial_multiple: int = 8):
        table = np.concatenate([[1.0], np.asarray(alphas_cumprod, dtype=np.float64)])
        self.schedule = NoiseSchedule.from_alpha_bar(table)
        self.eps_fn = eps_fn
        self.channels = channels
        self.spatial_multiple = spatial_multiple

    def predict(self, latent, t):
        tt = torch.as_tensor(t, dtype=latent.dtype)
        return self.eps_fn(latent, tt - 1)


def add_noise(x0: torch.Tensor, t: torch.Tensor, noise: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """Forward process ``sqrt(a) x0 + sqrt(1 - a) noise`` at integer timesteps ``t``."""
    a = schedule._table_t[t.long()].to(x0.dtype).view(-1, 1, 1, 1)
    return torch.sqrt(a) * x0 + torch.sqrt(1.0 - a) * noise
