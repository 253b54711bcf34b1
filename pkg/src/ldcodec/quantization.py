"""Per-channel affine quantization of latents.

Forward transform: ``z = exp(log_scale) * y + offset`` followed by rounding;
the inverse is ``y = (z - offset) / exp(log_scale)``. A larger scale means a
finer grid and more bits.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

SYMBOL_BOUND = 255
MODES = ("straight_through", "additive_noise")


@dataclass(frozen=True)
class QuantParams:
    """``log_scale`` and ``offset`` of shape ``(C,)`` or per-sample ``(N, C)``."""

    log_scale: torch.Tensor
    offset: torch.Tensor

    def __post_init__(self):
        if self.log_scale.shape != self.offset.shape:
            raise ValueError("log_scale and offset must have the same shape")

    @property
    def scale(self) -> torch.Tensor:
        return torch.exp(self.log_scale)

    def to_float32(self) -> "QuantParams":
        """Round to the float32 values that travel in the bitstream header."""
        return QuantParams(
            self.log_scale.detach().to(torch.float32), self.offset.detach().to(torch.float32)
        )

    @classmethod
    def identity(cls, channels: int) -> "QuantParams":
        return cls(torch.zeros(channels), torch.zeros(channels))


@dataclass
class QuantizedLatent:
    symbols: torch.Tensor  # int32, same shape as the latent
    bound: int = SYMBOL_BOUND
    clamped: int = 0


def _broadcast(p: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    # (C,) -> (C,1,1) for 3-D latents or (1,C,1,1) for 4-D; (N,C) -> (N,C,1,1)
    if p.dim() == 1:
        shape = (-1, 1, 1) if y.dim() == 3 else (1, -1, 1, 1)
        return p.view(shape).to(y.dtype)
    return p.view(p.shape[0], p.shape[1], 1, 1).to(y.dtype)


def round_half_away(x: torch.Tensor) -> torch.Tensor:
    return torch.sign(x) * torch.floor(torch.abs(x) + 0.5)


def transform(y: torch.Tensor, gamma: QuantParams) -> torch.Tensor:
    return torch.exp(_broadcast(gamma.log_scale, y)) * y + _broadcast(gamma.offset, y)


def inverse_transform(z: torch.Tensor, gamma: QuantParams) -> torch.Tensor:
    return (z - _broadcast(gamma.offset, z)) / torch.exp(_broadcast(gamma.log_scale, z))


def quantize(y: torch.Tensor, gamma: QuantParams, bound: int = SYMBOL_BOUND) -> QuantizedLatent:
    z = round_half_away(transform(y, gamma))
    clamped = int(((z < -bound) | (z > bound)).sum())
    symbols = z.clamp(-bound, bound).to(torch.int32)
    return QuantizedLatent(symbols, bound, clamped)


def dequantize(zhat, gamma: QuantParams, dtype=torch.float32) -> torch.Tensor:
    symbols = zhat.symbols if isinstance(zhat, QuantizedLatent) else zhat
    return inverse_transform(symbols.to(dtype), gamma)


def quantize_relaxed(y: torch.Tensor, gamma: QuantParams, mode: str, bound: int = SYMBOL_BOUND):
    """Training-time relaxation of quantize -> dequantize.

    Returns ``(y_hat, z_tilde)``: the latent-domain reconstruction and the
    relaxed symbols in the transformed domain. ``straight_through`` uses hard
    rounding in the forward pass and an identity gradient; ``additive_noise``
    replaces rounding by uniform noise in [-0.5, 0.5).
    """
    z = transform(y, gamma)
    if mode == "straight_through":
        hard = round_half_away(z).clamp(-bound, bound).detach()
        soft = inverse_transform(z + (hard - z).detach(), gamma)
        # value from the hard path (bit-exact), gradient from the soft one
        y_hat = inverse_transform(hard, gamma).detach() + (soft - soft.detach())
        z_tilde = hard + (z - z.detach())
        return y_hat, z_tilde
    if mode == "additive_noise":
        z_tilde = z + (torch.rand_like(z) - 0.5)
        return inverse_transform(z_tilde, gamma), z_tilde
    raise ValueError(f"unknown relaxation mode {mode!r}; expected one of {MODES}")


def round_half_away_np(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)
