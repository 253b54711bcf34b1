"""Mean-scale hyperprior over the quantized latent symbols.

The hyper encoder summarises the symbols into a 4x-downsampled hyper-latent,
which is rounded and coded first under a learned factorized prior. The hyper
decoder then predicts a Gaussian mean and scale per latent element. With
``context=True`` the prediction for channel ``c`` also sees the already
decoded channels ``0..c-1``.
"""
from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from scipy.special import ndtr

from ..quantization import SYMBOL_BOUND, round_half_away
from .rangecoder import TOTAL, CoderError, RangeDecoder, RangeEncoder, check_cdf, quantize_pmf

SIGMA_MIN = 0.04
HYPER_BOUND = 63
LIKELIHOOD_FLOOR = 1e-9
_SQRT2 = math.sqrt(2.0)


def _std_normal_cdf(x: torch.Tensor) -> torch.Tensor:
    return 0.5 * torch.erfc(-x / _SQRT2)


def likelihood(z: torch.Tensor, mu: torch.Tensor, sigma: torch.Tensor, bound: int = SYMBOL_BOUND) -> torch.Tensor:
    """Probability mass of integer-centred bins under N(mu, sigma^2).

    Mass beyond the alphabet is folded into the edge symbols ``-bound`` and
    ``bound``. Works on relaxed (non-integer) ``z`` during training.
    """
    sigma = sigma.clamp_min(SIGMA_MIN)
    v = torch.abs(z - mu)
    # evaluate on the lower tail for accuracy far from the mean
    upper = _std_normal_cdf((0.5 - v) / sigma)
    lower = _std_normal_cdf((-0.5 - v) / sigma)
    p = upper - lower
    low_edge = _std_normal_cdf((-bound + 0.5 - mu) / sigma)
    high_edge = 1.0 - _std_normal_cdf((bound - 0.5 - mu) / sigma)
    p = torch.where(z <= -bound + 0.5, torch.maximum(p, low_edge), p)
    p = torch.where(z >= bound - 0.5, torch.maximum(p, high_edge), p)
    return p


def gaussian_pmf(mu: np.ndarray, sigma: np.ndarray, bound: int = SYMBOL_BOUND) -> np.ndarray:
    """Rows of folded-tail pmfs over ``-bound..bound`` for each (mu, sigma)."""
    mu = np.asarray(mu, dtype=np.float64).reshape(-1, 1)
    sigma = np.maximum(np.asarray(sigma, dtype=np.float64).reshape(-1, 1), SIGMA_MIN)
    edges = np.arange(-bound - 0.5, bound + 1.0, 1.0)[None]
    cdf = ndtr((edges - mu) / sigma)
    cdf[:, 0] = 0.0
    cdf[:, -1] = 1.0
    return np.diff(cdf, axis=1)


class FactorizedPrior(nn.Module):
    """Per-channel learned univariate density (monotone cumulative network)."""

    def __init__(self, channels: int, filters=(3, 3, 3), init_scale: float = 10.0):
        super().__init__()
        self.channels = channels
        dims = (1,) + tuple(filters) + (1,)
        scale = init_scale ** (1.0 / (len(filters) + 1))
        self.matrices = nn.ParameterList()
        self.biases = nn.ParameterList()
        self.factors = nn.ParameterList()
        for i in range(len(filters) + 1):
            init = math.log(math.expm1(1.0 / scale / dims[i + 1]))
            self.matrices.append(nn.Parameter(torch.full((channels, dims[i + 1], dims[i]), init)))
            self.biases.append(nn.Parameter(torch.rand(channels, dims[i + 1], 1) - 0.5))
            if i < len(filters):
                self.factors.append(nn.Parameter(torch.zeros(channels, dims[i + 1], 1)))

    def _logits_cdf(self, x: torch.Tensor) -> torch.Tensor:
        # x: (C, 1, M)
        for i, (m, b) in enumerate(zip(self.matrices, self.biases)):
            x = torch.matmul(F.softplus(m), x) + b
            if i < len(self.factors):
                x = x + torch.tanh(self.factors[i]) * torch.tanh(x)
        return x

    def likelihood(self, h: torch.Tensor) -> torch.Tensor:
        """Bin mass for ``h`` of shape (N, C, H, W)."""
        N, C, H, W = h.shape
        x = h.permute(1, 0, 2, 3).reshape(C, 1, -1)
        lower = self._logits_cdf(x - 0.5)
        upper = self._logits_cdf(x + 0.5)
        sign = -torch.sign(lower + upper).detach()
        p = torch.abs(torch.sigmoid(sign * upper) - torch.sigmoid(sign * lower))
        return p.reshape(C, N, H, W).permute(1, 0, 2, 3)

    @torch.no_grad()
    def pmf_table(self, bound: int = HYPER_BOUND) -> np.ndarray:
        """(C, 2*bound+1) folded-tail pmfs in float64."""
        edges = torch.arange(-bound - 0.5, bound + 1.0, 1.0, dtype=torch.float64)
        x = edges.view(1, 1, -1).expand(self.channels, 1, -1).clone()
        for i, (m, b) in enumerate(zip(self.matrices, self.biases)):
            x = torch.matmul(F.softplus(m.double()), x) + b.double()
            if i < len(self.factors):
                x = x + torch.tanh(self.factors[i].double()) * torch.tanh(x)
        cdf = torch.sigmoid(x).squeeze(1).numpy()
        cdf[:, 0] = 0.0
        cdf[:, -1] = 1.0
        return np.clip(np.diff(cdf, axis=1), 0.0, None)


def _conv(cin, cout, k=3, s=1):
    return nn.Conv2d(cin, cout, k, stride=s, padding=k // 2)


def _deconv(cin, cout, k=5, s=2):
    return nn.ConvTranspose2d(cin, cout, k, stride=s, padding=k // 2, output_padding=s - 1)


class EntropyModel(nn.Module):
    def __init__(self, channels: int = 4, hyper_channels: int = 32, width: int = 64, context: bool = False):
        super().__init__()
        self.channels = channels
        self.hyper_channels = hyper_channels
        self.width = width
        self.context = context
        self.hyper_encoder = nn.Sequential(
            _conv(channels, width, 3, 1), nn.SiLU(),
            _conv(width, width, 5, 2), nn.SiLU(),
            _conv(width, hyper_channels, 5, 2),
        )
        self.hyper_decoder = nn.Sequential(
            _deconv(hyper_channels, width), nn.SiLU(),
            _deconv(width, width), nn.SiLU(),
            _conv(width, width if context else 2 * channels, 3, 1),
        )
        self.prior = FactorizedPrior(hyper_channels)
        if context:
            self.context_nets = nn.ModuleList(
                nn.Sequential(_conv(width + c, width, 3, 1), nn.SiLU(), _conv(width, 2, 3, 1))
                for c in range(channels)
            )
        self.symbol_bound = SYMBOL_BOUND
        self.hyper_bound = HYPER_BOUND

    # --- shared parameter prediction --------------------------------------------

    def _pad4(self, z):
        h, w = z.shape[-2:]
        return F.pad(z, (0, (-w) % 4, 0, (-h) % 4), mode="replicate")

    def _features(self, h_hat, size):
        feats = self.hyper_decoder(h_hat)
        return feats[..., : size[0], : size[1]]

    def _split(self, raw):
        mu, s = raw.chunk(2, dim=1)
        return mu, SIGMA_MIN + F.softplus(s)

    def _channel_params(self, feats, z_prev, c):
        inp = feats if c == 0 else torch.cat([feats, z_prev[:, :c]], dim=1)
        return self._split(self.context_nets[c](inp))

    def params(self, feats, z_hat):
        """(mu, sigma) for all channels, conditioning on ``z_hat`` only through context."""
        if not self.context:
            return self._split(feats)
        mus, sigmas = [], []
        for c in range(self.channels):
            mu, sigma = self._channel_params(feats, z_hat, c)
            mus.append(mu)
            sigmas.append(sigma)
        return torch.cat(mus, dim=1), torch.cat(sigmas, dim=1)

    def hyper_analysis(self, z_hat):
        return self.hyper_encoder(self._pad4(z_hat))

    # --- training path ----------------------------------------------------------

    def forward(self, z_hard: torch.Tensor, z_noisy: torch.Tensor):
        """Likelihoods of relaxed latent symbols and of the relaxed hyper-latent.

        ``z_hard`` (rounded, straight-through) feeds the hyper encoder and the
        context; ``z_noisy`` is scored.
        """
        h = self.hyper_analysis(z_hard)
        h_tilde = h + (torch.rand_like(h) - 0.5) if self.training else round_half_away(h)
        feats = self._features(h_tilde, z_hard.shape[-2:])
        mu, sigma = self.params(feats, z_hard)
        lik_z = likelihood(z_noisy, mu, sigma, self.symbol_bound).clamp_min(LIKELIHOOD_FLOOR)
        lik_h = self.prior.likelihood(h_tilde).clamp_min(LIKELIHOOD_FLOOR)
        return lik_z, lik_h

    def bits(self, z_hard, z_noisy) -> torch.Tensor:
        """Per-sample estimated code length in bits."""
        lik_z, lik_h = self(z_hard, z_noisy)
        return -(torch.log2(lik_z).flatten(1).sum(1) + torch.log2(lik_h).flatten(1).sum(1))

    def config(self) -> dict:
        return {
            "channels": self.channels,
            "hyper_channels": self.hyper_channels,
            "width": self.width,
            "context": self.context,
        }


# --- coding ----------------------------------------------------------------------


def _hyper_cdfs(model: EntropyModel, shape):
    pmf = model.prior.pmf_table(model.hyper_bound)
    cdf = quantize_pmf(pmf)
    n = int(np.prod(shape[-2:]))
    return np.repeat(cdf, n, axis=0), pmf


def _latent_cdfs(mu: torch.Tensor, sigma: torch.Tensor, bound: int, chunk: int = 4096):
    mu = mu.detach().double().numpy().ravel()
    sigma = sigma.detach().double().numpy().ravel()
    cdfs = np.empty((len(mu), 2 * bound + 2), dtype=np.int64)
    pmfs = []
    for i in range(0, len(mu), chunk):
        pmf = gaussian_pmf(mu[i : i + chunk], sigma[i : i + chunk], bound)
        cdfs[i : i + chunk] = quantize_pmf(pmf)
        pmfs.append(pmf)
    return cdfs, (np.concatenate(pmfs) if pmfs else np.zeros((0, 2 * bound + 1)))


def _encode_rows(enc: RangeEncoder, indices: np.ndarray, cdfs: np.ndarray):
    rows = np.arange(len(indices))
    starts = cdfs[rows, indices]
    freqs = cdfs[rows, indices + 1] - starts
    for s, f in zip(starts.tolist(), freqs.tolist()):
        enc.encode(s, f)


def _coded_bits(cdfs: np.ndarray, idx: np.ndarray) -> float:
    rows = np.arange(len(idx))
    freq = cdfs[rows, idx + 1] - cdfs[rows, idx]
    return float(-np.log2(freq / TOTAL).sum())


def _float_bits(pmf: np.ndarray, idx: np.ndarray) -> float:
    return float(-np.log2(np.maximum(pmf[np.arange(len(idx)), idx], 1e-300)).sum())


@torch.no_grad()
def _compress(z_hat: torch.Tensor, model: EntropyModel):
    if z_hat.dim() != 3 or z_hat.shape[0] != model.channels:
        raise ValueError(f"expected ({model.channels}, h, w) symbols, got {tuple(z_hat.shape)}")
    K, Kh = model.symbol_bound, model.hyper_bound
    if z_hat.abs().max() > K:
        raise CoderError("latent symbol outside the declared bound")
    model.eval()
    zf = z_hat[None].float()
    h_hat = round_half_away(model.hyper_analysis(zf)).clamp(-Kh, Kh)
    h_idx = (h_hat[0].long() + Kh).numpy().reshape(model.hyper_channels, -1)
    hcdf, hpmf = _hyper_cdfs(model, h_hat.shape)
    coded = _coded_bits(hcdf, h_idx.ravel())
    estimate = _float_bits(np.repeat(hpmf, h_idx.shape[1], axis=0), h_idx.ravel())
    enc = RangeEncoder()
    _encode_rows(enc, h_idx.ravel(), hcdf)
    hyper_bytes = enc.finish()

    feats = model._features(h_hat, zf.shape[-2:])
    enc = RangeEncoder()
    for c in range(model.channels):
        if model.context:
            mu, sigma = model._channel_params(feats, zf, c)
        else:
            mu, sigma = model._split(feats)
            mu, sigma = mu[:, c : c + 1], sigma[:, c : c + 1]
        cdfs, pmf = _latent_cdfs(mu, sigma, K)
        idx = z_hat[c].long().numpy().ravel() + K
        _encode_rows(enc, idx, cdfs)
        coded += _coded_bits(cdfs, idx)
        estimate += _float_bits(pmf, idx)
    return hyper_bytes, enc.finish(), coded, estimate


def compress_latent(z_hat: torch.Tensor, model: EntropyModel):
    """Code integer symbols ``(C, h, w)``; returns ``(hyper_bytes, main_bytes, bits)``.

    ``bits`` is ``-log2 P`` of the symbols under the 16-bit integer CDFs the
    coder actually uses, so it is the ideal length the coded payloads are
    measured against. The float model's estimate, which can be far larger for
    symbols deep in a tail, is :func:`estimate_bits`.
    """
    hyper, main, coded, _ = _compress(z_hat, model)
    return hyper, main, coded


def estimate_bits(z_hat: torch.Tensor, model: EntropyModel) -> float:
    """``-log2 P`` of ``(C, h, w)`` symbols under the float model, as used in training."""
    return _compress(z_hat, model)[3]


@torch.no_grad()
def decompress_latent(hyper_bytes: bytes, main_bytes: bytes, model: EntropyModel, size) -> torch.Tensor:
    """Inverse of :func:`compress_latent` for a latent of spatial ``size=(h, w)``."""
    model.eval()
    K, Kh = model.symbol_bound, model.hyper_bound
    h, w = size
    hh, hw = -(-h // 4), -(-w // 4)
    hcdf, _ = _hyper_cdfs(model, (hh, hw))
    dec = RangeDecoder(hyper_bytes)
    h_idx = np.array([dec.decode(hcdf[i]) for i in range(len(hcdf))], dtype=np.int64)
    if not dec.exhausted:
        raise CoderError("trailing bytes in hyper payload")
    h_hat = torch.from_numpy(h_idx - Kh).float().view(1, model.hyper_channels, hh, hw)
    feats = model._features(h_hat, (h, w))

    z = torch.zeros(1, model.channels, h, w)
    dec = RangeDecoder(main_bytes)
    for c in range(model.channels):
        if model.context:
            mu, sigma = model._channel_params(feats, z, c)
        else:
            mu, sigma = model._split(feats)
            mu, sigma = mu[:, c : c + 1], sigma[:, c : c + 1]
        cdfs, _ = _latent_cdfs(mu, sigma, K)
        vals = np.array([dec.decode(cdfs[i]) for i in range(len(cdfs))], dtype=np.int64) - K
        z[0, c] = torch.from_numpy(vals).float().view(h, w)
    if not dec.exhausted:
        raise CoderError("trailing bytes in latent payload")
    return z[0].to(torch.int32)
