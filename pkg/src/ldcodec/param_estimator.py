"""Joint prediction of quantization parameters and denoising timestep."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import torch
import torch.nn as nn

from .quantization import QuantParams

TRAINED_LAMBDAS = (1.0, 5.0, 10.0, 20.0)


@dataclass(frozen=True)
class PredictedParams:
    gamma: QuantParams
    tau: torch.Tensor  # (N,) in (0, 1)

    def as_vector(self) -> torch.Tensor:
        return torch.cat([self.gamma.log_scale, self.gamma.offset, self.tau[:, None]], dim=1)


def check_lambda(lam: float) -> float:
    if not lam > 0 or not math.isfinite(lam):
        raise ValueError(f"lambda must be positive, got {lam}")
    if lam not in TRAINED_LAMBDAS:
        warnings.warn(f"lambda={lam} is outside the trained set {TRAINED_LAMBDAS}; extrapolating")
    return float(lam)


class ParamEstimator(nn.Module):
    """Fully convolutional P(y, lambda) -> (log_scale, offset, tau).

    Alternating stride-2 and stride-1 3x3 convolutions with SiLU in between,
    a final conv to ``2C + 1`` maps, then global mean pooling. Only the
    timestep scalar gets a sigmoid. ``init_tau`` sets the initial timestep
    through the bias of the last layer.
    """

    def __init__(
        self,
        channels: int = 4,
        widths=(64, 128, 256, 512),
        init_tau: float = 0.05,
        init_log_scale: float = 0.0,
    ):
        super().__init__()
        self.channels = channels
        self.widths = tuple(widths)
        layers = []
        cin = channels + 1
        for i, w in enumerate(widths):
            if i:
                layers.append(nn.SiLU())
            layers += [nn.Conv2d(cin, w, 3, stride=2, padding=1), nn.SiLU(), nn.Conv2d(w, w, 3, padding=1)]
            cin = w
        layers += [nn.SiLU(), nn.Conv2d(cin, 2 * channels + 1, 3, padding=1)]
        self.net = nn.Sequential(*layers)
        head = self.net[-1]
        nn.init.normal_(head.weight, std=1e-3)
        with torch.no_grad():
            head.bias.zero_()
            head.bias[:channels] = init_log_scale
            head.bias[-1] = math.log(init_tau / (1.0 - init_tau))

    @property
    def n_outputs(self) -> int:
        return 2 * self.channels + 1

    def raw(self, y: torch.Tensor, lam) -> torch.Tensor:
        if y.dim() == 3:
            y = y[None]
        if y.dim() != 4 or y.shape[1] != self.channels:
            raise ValueError(f"expected (N, {self.channels}, h, w) latent, got {tuple(y.shape)}")
        lam = torch.as_tensor(lam, dtype=y.dtype, device=y.device)
        if (lam <= 0).any():
            raise ValueError("lambda must be positive")
        if lam.dim() == 0:
            lam = lam.expand(y.shape[0])
        plane = torch.log(lam).view(-1, 1, 1, 1).expand(-1, 1, *y.shape[-2:])
        out = self.net(torch.cat([y, plane], dim=1))
        return out.mean(dim=(2, 3))

    def forward(self, y: torch.Tensor, lam) -> PredictedParams:
        v = self.raw(y, lam)
        C = self.channels
        gamma = QuantParams(v[:, :C], v[:, C : 2 * C])
        return PredictedParams(gamma, torch.sigmoid(v[:, -1]))

    def config(self) -> dict:
        return {"channels": self.channels, "widths": list(self.widths)}


def predict_params(estimator: ParamEstimator, y: torch.Tensor, lam) -> PredictedParams:
    return estimator(y, lam)


def timestep_to_discrete(tau: float, T_max: int) -> int:
    t = int(math.floor(float(tau) * T_max + 0.5))
    return min(max(t, 1), T_max)
